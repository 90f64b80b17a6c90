//! The periodic cell problem and the homogenized tensor.
//!
//! For a slope `z` the admissible functions are `u(i) = z·i^d + chi(i)` with
//! `chi` periodic, so `chi` lives on the cell nodes. Each orbit `p -> q` with
//! periodic displacement `disp` contributes `w (chi_q - chi_p + z·disp)^2`.
//! Summed over orbits this is `chi^T L chi + 2 b·chi + c`, with `L` the
//! weighted quotient Laplacian. `f_hom(z)` is the minimum divided by `T^d`,
//! times two under the double-count convention.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{validate, LatticeGraph};
use crate::linalg::{conjugate_gradient, CgOptions, CsrMatrix, LinalgError};
use crate::Convention;

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum CellError {
    #[error("graph fails validation: {0}")]
    Invalid(String),
    #[error("slope has {got} components, graph has d = {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Solver(#[from] LinalgError),
    #[error("brute-force oracle is limited to {limit} nodes, graph has {nodes}")]
    TooLarge { nodes: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellOptions {
    pub convention: Convention,
    pub tol: f64,
    pub max_iter: Option<usize>,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions {
            convention: Convention::Double,
            tol: 1e-10,
            max_iter: None,
        }
    }
}

/// `chi^T L chi + 2 b·chi + c` for one slope, convention factor included.
#[derive(Debug, Clone)]
pub struct QuotientSystem {
    pub laplacian: CsrMatrix,
    pub b: Vec<f64>,
    pub c: f64,
}

fn slope_along(graph: &LatticeGraph, z: &[f64], from: usize, to: usize, offset: &[i64]) -> f64 {
    graph
        .d_displacement(from, to, offset)
        .iter()
        .zip(z)
        .map(|(&s, zm)| s as f64 * zm)
        .sum()
}

pub fn assemble_quotient_system(
    graph: &LatticeGraph,
    z: &[f64],
    convention: Convention,
) -> QuotientSystem {
    let n = graph.node_count();
    let f = convention.factor();
    let mut triplets = Vec::with_capacity(4 * graph.orbits().len());
    let mut b = vec![0.0; n];
    let mut c = 0.0;
    for o in graph.orbits() {
        let s = slope_along(graph, z, o.from, o.to, &o.offset);
        let w = f * o.weight;
        if o.from != o.to {
            triplets.extend([
                (o.from, o.from, w),
                (o.to, o.to, w),
                (o.from, o.to, -w),
                (o.to, o.from, -w),
            ]);
            b[o.to] += w * s;
            b[o.from] -= w * s;
        }
        c += w * s * s;
    }
    QuotientSystem {
        laplacian: CsrMatrix::from_triplets(n, triplets),
        b,
        c,
    }
}

/// Cell energy of `chi` for slope `z`, normalized by `T^d`.
pub fn cell_energy(graph: &LatticeGraph, z: &[f64], chi: &[f64], convention: Convention) -> f64 {
    let sum: f64 = graph
        .orbits()
        .iter()
        .map(|o| {
            let g = chi[o.to] - chi[o.from] + slope_along(graph, z, o.from, o.to, &o.offset);
            o.weight * g * g
        })
        .sum();
    convention.factor() * sum / cell_volume(graph)
}

fn cell_volume(graph: &LatticeGraph) -> f64 {
    (graph.period() as f64).powi(graph.d() as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSolution {
    pub z: Vec<f64>,
    /// Mean-zero periodic corrector, one value per cell node.
    pub corrector: Vec<f64>,
    pub energy: f64,
    pub iterations: usize,
    pub residual: f64,
}

fn check_graph(graph: &LatticeGraph) -> Result<(), CellError> {
    let report = validate(graph);
    match report.checks.iter().find(|c| !c.passed) {
        Some(c) => Err(CellError::Invalid(format!("{}: {}", c.name, c.detail))),
        None => Ok(()),
    }
}

fn solve_unchecked(
    graph: &LatticeGraph,
    z: &[f64],
    opts: CellOptions,
) -> Result<CellSolution, CellError> {
    if z.len() != graph.d() {
        return Err(CellError::DimensionMismatch {
            got: z.len(),
            expected: graph.d(),
        });
    }
    let sys = assemble_quotient_system(graph, z, opts.convention);
    let rhs: Vec<f64> = sys.b.iter().map(|v| -v).collect();
    let sol = conjugate_gradient(
        &sys.laplacian,
        &rhs,
        CgOptions {
            tol: opts.tol,
            max_iter: opts.max_iter,
            project_mean: true,
        },
    )?;
    let energy = cell_energy(graph, z, &sol.x, opts.convention);
    Ok(CellSolution {
        z: z.to_vec(),
        corrector: sol.x,
        energy,
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

/// Minimizes the cell energy for slope `z`.
pub fn solve_corrector(
    graph: &LatticeGraph,
    z: &[f64],
    opts: CellOptions,
) -> Result<CellSolution, CellError> {
    check_graph(graph)?;
    solve_unchecked(graph, z, opts)
}

pub fn f_hom(graph: &LatticeGraph, z: &[f64], opts: CellOptions) -> Result<f64, CellError> {
    solve_corrector(graph, z, opts).map(|s| s.energy)
}

/// Symmetric matrix `A` with `f_hom(z) = z·A z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogenizedTensor {
    pub entries: Vec<Vec<f64>>,
    pub convention: Convention,
    pub tolerance: f64,
    pub min_eigenvalue: f64,
    /// Correctors for the unit slopes `e_1, …, e_d`.
    pub correctors: Vec<Vec<f64>>,
}

impl HomogenizedTensor {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn quadratic_form(&self, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for (m, row) in self.entries.iter().enumerate() {
            for (n, a) in row.iter().enumerate() {
                s += z[m] * a * z[n];
            }
        }
        s
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue > 0.0
    }
}

/// Assembles `A` by polarization:
/// `A_mn = (f(e_m + e_n) - f(e_m) - f(e_n)) / 2`.
pub fn homogenized_tensor(
    graph: &LatticeGraph,
    opts: CellOptions,
) -> Result<HomogenizedTensor, CellError> {
    check_graph(graph)?;
    let d = graph.d();
    let unit = |m: usize| {
        let mut z = vec![0.0; d];
        z[m] = 1.0;
        z
    };
    let slopes: Vec<(usize, usize)> = (0..d)
        .flat_map(|m| (m..d).map(move |n| (m, n)))
        .collect();
    let solved: Vec<CellSolution> = slopes
        .par_iter()
        .map(|&(m, n)| {
            let mut z = unit(m);
            z[n] += if m == n { 0.0 } else { 1.0 };
            solve_unchecked(graph, &z, opts)
        })
        .collect::<Result<_, _>>()?;
    let value = |m: usize, n: usize| {
        let idx = slopes.iter().position(|&p| p == (m.min(n), m.max(n))).unwrap();
        &solved[idx]
    };
    let mut entries = vec![vec![0.0; d]; d];
    for m in 0..d {
        entries[m][m] = value(m, m).energy;
    }
    for m in 0..d {
        for n in (m + 1)..d {
            let a = 0.5 * (value(m, n).energy - entries[m][m] - entries[n][n]);
            entries[m][n] = a;
            entries[n][m] = a;
        }
    }
    let dense = DMatrix::from_fn(d, d, |i, j| entries[i][j]);
    let min_eigenvalue = dense
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(HomogenizedTensor {
        correctors: (0..d).map(|m| value(m, m).corrector.clone()).collect(),
        entries,
        convention: opts.convention,
        tolerance: opts.tol,
        min_eigenvalue,
    })
}

pub const ORACLE_NODE_LIMIT: usize = 64;

/// Independent dense evaluation of `f_hom(z)`.
///
/// Recovers the quadratic form by probing the cell energy on the zero vector
/// and on `±e_i`, `e_i + e_j`, then minimizes with a pseudo-inverse.
pub fn brute_force_cell_oracle(
    graph: &LatticeGraph,
    z: &[f64],
    convention: Convention,
) -> Result<f64, CellError> {
    let n = graph.node_count();
    if n > ORACLE_NODE_LIMIT {
        return Err(CellError::TooLarge {
            nodes: n,
            limit: ORACLE_NODE_LIMIT,
        });
    }
    if z.len() != graph.d() {
        return Err(CellError::DimensionMismatch {
            got: z.len(),
            expected: graph.d(),
        });
    }
    let q = |chi: &DVector<f64>| cell_energy(graph, z, chi.as_slice(), convention);
    let basis = |i: usize| DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
    let c = q(&DVector::zeros(n));
    let plus: Vec<f64> = (0..n).map(|i| q(&basis(i))).collect();
    let minus: Vec<f64> = (0..n).map(|i| q(&(-basis(i)))).collect();
    let g = DVector::from_fn(n, |i, _| 0.5 * (plus[i] - minus[i]));
    let h = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            plus[i] + minus[i] - 2.0 * c
        } else {
            q(&(basis(i) + basis(j))) - plus[i] - plus[j] + c
        }
    });
    // q(chi) = chi^T H chi / 2 + g·chi + c, minimum c - g·H^+ g / 2.
    Ok(c - 0.5 * g.dot(&(symmetric_pseudo_inverse(h) * &g)))
}

/// Pseudo-inverse of a symmetric matrix through its eigendecomposition.
/// (The SVD route loses several digits on singular Laplacians.)
fn symmetric_pseudo_inverse(h: DMatrix<f64>) -> DMatrix<f64> {
    let eig = h.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let inv = eig
        .eigenvalues
        .map(|l| if l.abs() > 1e-10 * scale { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}
