//! Sparse symmetric matrices and conjugate gradients.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum LinalgError {
    #[error("conjugate gradients did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("dimension mismatch: matrix is {matrix}, vector is {vector}")]
    DimensionMismatch { matrix: usize, vector: usize },
}

/// Square matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix, summing repeated entries.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) outside {n}x{n}");
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[row.clone()]
            .iter()
            .position(|&c| c == j)
            .map_or(0.0, |p| self.vals[row.start + p])
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[p] * x[self.cols[p]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul(x))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                row[self.cols[p]] += self.vals[p];
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .all(|p| (self.vals[p] - self.get(self.cols[p], i)).abs() <= tol)
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Stop when `|r| <= tol * |b|`.
    pub tol: f64,
    /// Defaults to `10 n` when `None`.
    pub max_iter: Option<usize>,
    /// Work in the mean-zero subspace; use for Laplacians of connected graphs.
    pub project_mean: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-10,
            max_iter: None,
            project_mean: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    opts: CgOptions,
) -> Result<CgSolution, LinalgError> {
    let n = a.dim();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            matrix: n,
            vector: b.len(),
        });
    }
    let mut r = b.to_vec();
    if opts.project_mean {
        remove_mean(&mut r);
    }
    let target = opts.tol * norm(&r).max(f64::MIN_POSITIVE);
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let mut x = vec![0.0; n];
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while rr.sqrt() > target {
        if iterations >= max_iter {
            return Err(LinalgError::NoConvergence {
                iterations,
                residual: rr.sqrt(),
            });
        }
        a.mul_into(&p, &mut ap);
        if opts.project_mean {
            remove_mean(&mut ap);
        }
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(LinalgError::NoConvergence {
                iterations,
                residual: rr.sqrt(),
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iterations += 1;
    }
    if opts.project_mean {
        remove_mean(&mut x);
    }
    Ok(CgSolution {
        x,
        iterations,
        residual: rr.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path_laplacian(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.extend([(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)]);
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn triplets_are_summed() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn dirichlet_path() {
        // -u'' = 0 with u(0) = 0, u(5) = 1 eliminated: tridiag(−1, 2, −1) x = e_4.
        let n = 4;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.extend([(i, i + 1, -1.0), (i + 1, i, -1.0)]);
            }
        }
        let a = CsrMatrix::from_triplets(n, t);
        let sol = conjugate_gradient(&a, &[0.0, 0.0, 0.0, 1.0], CgOptions::default()).unwrap();
        for (i, x) in sol.x.iter().enumerate() {
            assert!((x - (i + 1) as f64 / 5.0).abs() < 1e-12);
        }
        assert!(sol.iterations <= n);
    }

    #[test]
    fn singular_laplacian_with_projection() {
        let a = path_laplacian(5);
        let b = [1.0, 0.0, 0.0, 0.0, -1.0];
        let opts = CgOptions {
            project_mean: true,
            ..CgOptions::default()
        };
        let sol = conjugate_gradient(&a, &b, opts).unwrap();
        let r: Vec<f64> = a.mul(&sol.x).iter().zip(&b).map(|(y, b)| y - b).collect();
        assert!(norm(&r) < 1e-9);
        assert!(sol.x.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let a = path_laplacian(50);
        let mut b = vec![0.0; 50];
        b[0] = 1.0;
        b[49] = -1.0;
        let opts = CgOptions {
            project_mean: true,
            max_iter: Some(2),
            tol: 1e-14,
        };
        assert!(matches!(
            conjugate_gradient(&a, &b, opts),
            Err(LinalgError::NoConvergence { iterations: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn cg_matches_residual(diag in prop::collection::vec(0.5f64..5.0, 2..12), rhs_seed in 0u64..1000) {
            let n = diag.len();
            let mut t = Vec::new();
            for i in 0..n {
                t.push((i, i, diag[i] + 2.0));
                if i + 1 < n {
                    t.extend([(i, i + 1, -1.0), (i + 1, i, -1.0)]);
                }
            }
            let a = CsrMatrix::from_triplets(n, t);
            prop_assert!(a.is_symmetric(0.0));
            let b: Vec<f64> = (0..n).map(|i| ((i as u64 * 7 + rhs_seed) % 11) as f64 - 5.0).collect();
            let sol = conjugate_gradient(&a, &b, CgOptions::default()).unwrap();
            let r: Vec<f64> = a.mul(&sol.x).iter().zip(&b).map(|(y, b)| y - b).collect();
            prop_assert!(norm(&r) <= 1e-9 * norm(&b).max(1.0));
        }
    }
}
