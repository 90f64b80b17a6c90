//! Dirichlet problems on `eps`-scaled copies of the graph.
//!
//! With `eps = 1/n` the vertex `i` sits at `eps i^d`. The domain holds the
//! vertices with `eps i^d` in the closed box; a vertex is constrained when its
//! open band `eps i^d + (-eps r, eps r)^d` reaches outside the open box, and
//! then takes the average of the datum over `eps i^d + eps [0,1)^d`.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cell::{homogenized_tensor, CellError, CellOptions};
use crate::coarse::coarse_field;
use crate::graph::LatticeGraph;
use crate::linalg::{conjugate_gradient, CgOptions, CsrMatrix, LinalgError};
use crate::window::{instantiate_window, CellBox, FiniteGraph, WindowError, WrapPolicy};
use crate::Convention;

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum BvpError {
    #[error("datum is undefined at {point:?}: {reason}")]
    DatumUndefined { point: Vec<f64>, reason: String },
    #[error("cannot parse datum `{source_text}`: {reason}")]
    BadDatum { source_text: String, reason: String },
    #[error("no free vertex: the boundary band covers the whole domain")]
    EmptyInterior,
    #[error("continuum reference is implemented for d = 1, 2 only (got d = {0})")]
    UnsupportedDimension(usize),
    #[error("epsilon {0} is not of the form 1/n with n a positive multiple of T")]
    IncompatibleEpsilon(String),
    #[error("domain box must have lo < hi in each of the {0} directions")]
    BadDomain(usize),
    #[error("window: {0}")]
    Window(String),
    #[error(transparent)]
    Solver(#[from] LinalgError),
    #[error(transparent)]
    Cell(#[from] CellError),
}

impl From<WindowError> for BvpError {
    fn from(e: WindowError) -> Self {
        BvpError::Window(e.to_string())
    }
}

/// Axis-aligned box `lo < x < hi`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, BvpError> {
        let ok = lo.len() == hi.len()
            && !lo.is_empty()
            && lo.iter().zip(&hi).all(|(a, b)| a.is_finite() && b.is_finite() && a < b);
        if ok {
            Ok(BoxDomain { lo, hi })
        } else {
            Err(BvpError::BadDomain(lo.len()))
        }
    }

    /// The unit interval or square.
    pub fn unit(d: usize) -> Self {
        BoxDomain {
            lo: vec![0.0; d],
            hi: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    /// Distance from an interior point to the boundary.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|m| (x[m] - self.lo[m]).min(self.hi[m] - x[m]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `eps = 1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Epsilon {
    pub n: i64,
}

impl Epsilon {
    /// Parses `1/n`, `k/(k n)` or a bare integer reciprocal like `0.125`.
    pub fn parse(text: &str, period: i64) -> Result<Self, BvpError> {
        let bad = || BvpError::IncompatibleEpsilon(text.to_string());
        let n = match text.trim().split_once('/') {
            Some((a, b)) => {
                let a: i64 = a.trim().parse().map_err(|_| bad())?;
                let b: i64 = b.trim().parse().map_err(|_| bad())?;
                if a <= 0 || b <= 0 || b % a != 0 {
                    return Err(bad());
                }
                b / a
            }
            None => {
                let v: f64 = text.trim().parse().map_err(|_| bad())?;
                let n = (1.0 / v).round();
                if !(v > 0.0) || ((1.0 / v) - n).abs() > 1e-9 {
                    return Err(bad());
                }
                n as i64
            }
        };
        Self::from_n(n, period).map_err(|_| bad())
    }

    pub fn from_n(n: i64, period: i64) -> Result<Self, BvpError> {
        if n <= 0 || n % period != 0 {
            return Err(BvpError::IncompatibleEpsilon(format!("1/{n}")));
        }
        Ok(Epsilon { n })
    }

    pub fn value(self) -> f64 {
        1.0 / self.n as f64
    }
}

impl std::fmt::Display for Epsilon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "1/{}", self.n)
    }
}

/// Samples on a uniform tensor grid, interpolated multilinearly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GriddedSamples {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Points per axis (at least 2).
    pub shape: Vec<usize>,
    /// Row-major values, last axis fastest.
    pub values: Vec<f64>,
}

impl GriddedSamples {
    fn eval(&self, x: &[f64]) -> Option<f64> {
        let d = self.shape.len();
        if x.len() != d || self.values.len() != self.shape.iter().product::<usize>() {
            return None;
        }
        let mut base = Vec::with_capacity(d);
        let mut frac = Vec::with_capacity(d);
        for m in 0..d {
            let steps = (self.shape[m] - 1) as f64;
            let t = (x[m] - self.lo[m]) / (self.hi[m] - self.lo[m]) * steps;
            if !(-1e-12..=steps + 1e-12).contains(&t) {
                return None;
            }
            let b = (t.floor() as usize).min(self.shape[m] - 2);
            base.push(b);
            frac.push((t - b as f64).clamp(0.0, 1.0));
        }
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut idx = 0;
            let mut w = 1.0;
            for m in 0..d {
                let up = (corner >> m) & 1;
                idx = idx * self.shape[m] + base[m] + up;
                w *= if up == 1 { frac[m] } else { 1.0 - frac[m] };
            }
            total += w * self.values[idx];
        }
        Some(total)
    }
}

/// Boundary datum `phi`.
#[derive(Debug, Clone, Serialize)]
pub enum Datum {
    /// `c + g·x`.
    Affine { c: f64, g: Vec<f64> },
    /// Expression in `x` (and `y` when d = 2).
    Expr {
        source: String,
        #[serde(skip)]
        expr: meval::Expr,
    },
    Gridded(GriddedSamples),
}

const VARS: [&str; 2] = ["x", "y"];

fn eval_expr(expr: &meval::Expr, x: &[f64]) -> Result<f64, String> {
    let mut ctx = meval::Context::new();
    for (name, v) in VARS.iter().zip(x) {
        ctx.var(*name, *v);
    }
    expr.eval_with_context(ctx).map_err(|e| e.to_string())
}

impl Datum {
    pub fn constant(c: f64, d: usize) -> Self {
        Datum::Affine { c, g: vec![0.0; d] }
    }

    /// Parses an expression in `x`, `y`. Expressions that are affine on the
    /// probe points are stored as [`Datum::Affine`] so their cell averages are
    /// exact.
    pub fn parse(source: &str, d: usize) -> Result<Self, BvpError> {
        let bad = |reason: String| BvpError::BadDatum {
            source_text: source.to_string(),
            reason,
        };
        if d > VARS.len() {
            return Err(BvpError::UnsupportedDimension(d));
        }
        let expr: meval::Expr = source.parse().map_err(|e: meval::Error| bad(e.to_string()))?;
        let at = |x: &[f64]| eval_expr(&expr, x).map_err(&bad);
        let c = at(&vec![0.0; d])?;
        let mut g = Vec::with_capacity(d);
        for m in 0..d {
            let mut e = vec![0.0; d];
            e[m] = 1.0;
            g.push(at(&e)? - c);
        }
        let probes = [0.37, -1.3, 2.9, 0.011, 5.5, -0.73];
        let mut affine = c.is_finite() && g.iter().all(|v| v.is_finite());
        for (j, p) in probes.iter().enumerate() {
            let x: Vec<f64> = (0..d).map(|m| p * (1.0 + m as f64) + 0.1 * j as f64).collect();
            let want = c + g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            match eval_expr(&expr, &x) {
                Ok(v) if (v - want).abs() <= 1e-12 * (1.0 + v.abs()) => {}
                _ => affine = false,
            }
        }
        Ok(if affine {
            Datum::Affine { c, g }
        } else {
            Datum::Expr {
                source: source.to_string(),
                expr,
            }
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, BvpError> {
        let undefined = |reason: String| BvpError::DatumUndefined {
            point: x.to_vec(),
            reason,
        };
        let v = match self {
            Datum::Affine { c, g } => c + g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>(),
            Datum::Expr { expr, .. } => eval_expr(expr, x).map_err(undefined)?,
            Datum::Gridded(s) => s
                .eval(x)
                .ok_or_else(|| undefined("outside the sampled grid".into()))?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(undefined(format!("value {v}")))
        }
    }

    /// Average of the datum over the cube `corner + side [0,1]^d`.
    pub fn cell_average(&self, corner: &[f64], side: f64) -> Result<f64, BvpError> {
        if let Datum::Affine { .. } = self {
            let centre: Vec<f64> = corner.iter().map(|c| c + side / 2.0).collect();
            return self.eval(&centre);
        }
        // Composite Gauss-Legendre, 3 points on each of 8 panels per axis.
        const PANELS: usize = 8;
        let s = (0.6f64).sqrt();
        let nodes = [(-s, 5.0 / 18.0), (0.0, 8.0 / 18.0), (s, 5.0 / 18.0)];
        let mut axis = Vec::with_capacity(3 * PANELS);
        let h = 1.0 / PANELS as f64;
        for p in 0..PANELS {
            for (t, w) in nodes {
                axis.push(((p as f64 + 0.5 + 0.5 * t) * h, w * h));
            }
        }
        let d = corner.len();
        let mut total = 0.0;
        let mut idx = vec![0usize; d];
        loop {
            let x: Vec<f64> = (0..d).map(|m| corner[m] + side * axis[idx[m]].0).collect();
            let w: f64 = idx.iter().map(|&i| axis[i].1).product();
            total += w * self.eval(&x)?;
            let mut m = 0;
            while m < d {
                idx[m] += 1;
                if idx[m] < axis.len() {
                    break;
                }
                idx[m] = 0;
                m += 1;
            }
            if m == d {
                break;
            }
        }
        Ok(total)
    }
}

#[derive(Debug, Clone)]
pub struct DirichletProblem {
    pub graph: LatticeGraph,
    pub omega: BoxDomain,
    pub datum: Datum,
    pub eps: Epsilon,
    /// Band width in lattice units.
    pub r: i64,
    pub convention: Convention,
    pub tol: f64,
}

impl DirichletProblem {
    pub fn new(graph: LatticeGraph, omega: BoxDomain, datum: Datum, eps: Epsilon) -> Self {
        let r = graph.period();
        DirichletProblem {
            graph,
            omega,
            datum,
            eps,
            r,
            convention: Convention::Double,
            tol: 1e-12,
        }
    }
}

/// The lattice domain `{i : eps i^d in closed Omega}` and its constrained set.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteDomain {
    pub graph: FiniteGraph,
    pub constrained: Vec<bool>,
}

pub fn discrete_domain(problem: &DirichletProblem) -> Result<DiscreteDomain, BvpError> {
    let g = &problem.graph;
    let d = g.d();
    if problem.omega.dim() != d {
        return Err(BvpError::BadDomain(d));
    }
    let n = problem.eps.n as f64;
    let t = g.period();
    let lo_pos: Vec<i64> = problem.omega.lo.iter().map(|a| (a * n - 1e-9).ceil() as i64).collect();
    let hi_pos: Vec<i64> = problem.omega.hi.iter().map(|b| (b * n + 1e-9).floor() as i64).collect();
    let window = CellBox::new(
        lo_pos.iter().map(|p| p.div_euclid(t)).collect(),
        hi_pos.iter().map(|p| p.div_euclid(t)).collect(),
    );
    let full = instantiate_window(g, &window, WrapPolicy::Open)?;
    let inside = |x: &[i64]| (0..d).all(|m| lo_pos[m] <= x[m] && x[m] <= hi_pos[m]);
    let graph = full.restrict(|i| inside(&full.positions[i]));
    let r = problem.r as f64;
    let constrained = graph
        .positions
        .iter()
        .map(|x| {
            (0..d).any(|m| {
                let i = x[m] as f64;
                i - r < problem.omega.lo[m] * n || i + r > problem.omega.hi[m] * n
            })
        })
        .collect();
    Ok(DiscreteDomain { graph, constrained })
}

/// Constrained values: datum averages over `eps i^d + eps [0,1)^d`.
pub fn discretize_boundary_datum(
    problem: &DirichletProblem,
    domain: &DiscreteDomain,
) -> Result<Vec<Option<f64>>, BvpError> {
    let eps = problem.eps.value();
    domain
        .graph
        .positions
        .iter()
        .zip(&domain.constrained)
        .map(|(x, &c)| {
            if !c {
                return Ok(None);
            }
            let corner: Vec<f64> = x.iter().map(|&i| eps * i as f64).collect();
            problem.datum.cell_average(&corner, eps).map(Some)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DirichletSolution {
    pub domain: DiscreteDomain,
    pub u: Vec<f64>,
    pub energy: f64,
    pub free: usize,
    /// Free vertices with no path to a constrained one; set to the mean datum.
    pub pinned: usize,
    pub iterations: usize,
    pub boundary_min: f64,
    pub boundary_max: f64,
}

/// `eps^{d-2} sum a (u_i - u_j)^2` over domain edges, ordered pairs under the
/// double convention.
pub fn dirichlet_energy(
    domain: &FiniteGraph,
    u: &[f64],
    eps: f64,
    d: usize,
    convention: Convention,
) -> f64 {
    let sum: f64 = domain
        .edges
        .iter()
        .map(|e| e.weight * (u[e.a] - u[e.b]).powi(2))
        .sum();
    convention.factor() * eps.powi(d as i32 - 2) * sum
}

pub fn solve_dirichlet(problem: &DirichletProblem) -> Result<DirichletSolution, BvpError> {
    let domain = discrete_domain(problem)?;
    let values = discretize_boundary_datum(problem, &domain)?;
    let nv = values.len();
    let fixed: Vec<f64> = values.iter().flatten().copied().collect();
    let boundary_min = fixed.iter().copied().fold(f64::INFINITY, f64::min);
    let boundary_max = fixed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let adj = domain.graph.adjacency();

    // Free vertices cut off from every constrained one have no boundary data.
    let mut reaches = vec![false; nv];
    let mut stack: Vec<usize> = (0..nv).filter(|&i| values[i].is_some()).collect();
    for &i in &stack {
        reaches[i] = true;
    }
    while let Some(i) = stack.pop() {
        for &(j, _) in &adj[i] {
            if !reaches[j] {
                reaches[j] = true;
                stack.push(j);
            }
        }
    }
    let mean_fixed = if fixed.is_empty() {
        0.0
    } else {
        fixed.iter().sum::<f64>() / fixed.len() as f64
    };
    let mut u: Vec<f64> = values.iter().map(|v| v.unwrap_or(mean_fixed)).collect();
    let pinned = (0..nv).filter(|&i| values[i].is_none() && !reaches[i]).count();

    let mut index = vec![usize::MAX; nv];
    let mut free = 0;
    for i in 0..nv {
        if values[i].is_none() && reaches[i] {
            index[i] = free;
            free += 1;
        }
    }
    if free + pinned == 0 {
        return Err(BvpError::EmptyInterior);
    }
    let mut iterations = 0;
    if free > 0 {
        let mut triplets = Vec::new();
        let mut rhs = vec![0.0; free];
        for e in &domain.graph.edges {
            for (a, b) in [(e.a, e.b), (e.b, e.a)] {
                let ia = index[a];
                if ia == usize::MAX {
                    continue;
                }
                triplets.push((ia, ia, e.weight));
                match index[b] {
                    usize::MAX => rhs[ia] += e.weight * u[b],
                    ib => triplets.push((ia, ib, -e.weight)),
                }
            }
        }
        let a = CsrMatrix::from_triplets(free, triplets);
        let sol = conjugate_gradient(
            &a,
            &rhs,
            CgOptions {
                tol: problem.tol,
                max_iter: None,
                project_mean: false,
            },
        )?;
        iterations = sol.iterations;
        for i in 0..nv {
            if index[i] != usize::MAX {
                u[i] = sol.x[index[i]];
            }
        }
    }
    let energy = dirichlet_energy(
        &domain.graph,
        &u,
        problem.eps.value(),
        problem.graph.d(),
        problem.convention,
    );
    Ok(DirichletSolution {
        domain,
        u,
        energy,
        free,
        pinned,
        iterations,
        boundary_min,
        boundary_max,
    })
}

/// Minimizer of `int A grad u · grad u` with `u = phi` on the boundary.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuumSolution {
    pub omega: BoxDomain,
    pub energy: f64,
    /// Estimated discretization error of `energy` (zero when exact).
    pub error_estimate: f64,
    /// Grid nodes per axis for d = 2; empty for the exact d = 1 solution.
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    endpoints: (f64, f64),
}

impl ContinuumSolution {
    pub fn value_at(&self, x: &[f64]) -> f64 {
        if self.shape.is_empty() {
            let (a, b) = (self.omega.lo[0], self.omega.hi[0]);
            let t = (x[0] - a) / (b - a);
            return self.endpoints.0 + t * (self.endpoints.1 - self.endpoints.0);
        }
        GriddedSamples {
            lo: self.omega.lo.clone(),
            hi: self.omega.hi.clone(),
            shape: self.shape.clone(),
            values: self.values.clone(),
        }
        .eval(x)
        .unwrap_or(f64::NAN)
    }
}

/// P1 finite elements on `nx x ny` squares, each cut along its rising diagonal.
fn fem_2d(
    a: &[Vec<f64>],
    omega: &BoxDomain,
    datum: &Datum,
    nx: usize,
    ny: usize,
) -> Result<(f64, Vec<f64>), BvpError> {
    let hx = (omega.hi[0] - omega.lo[0]) / nx as f64;
    let hy = (omega.hi[1] - omega.lo[1]) / ny as f64;
    let id = |i: usize, j: usize| i * (ny + 1) + j;
    let nv = (nx + 1) * (ny + 1);
    let boundary = |i: usize, j: usize| i == 0 || j == 0 || i == nx || j == ny;
    let mut u = vec![0.0; nv];
    for i in 0..=nx {
        for j in 0..=ny {
            if boundary(i, j) {
                let x = [omega.lo[0] + i as f64 * hx, omega.lo[1] + j as f64 * hy];
                u[id(i, j)] = datum.eval(&x)?;
            }
        }
    }
    // Local stiffness of the two triangle shapes; gradients of the hat
    // functions are constant per triangle.
    let area = 0.5 * hx * hy;
    let lower = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)];
    let upper = [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
    let local = |tri: [(f64, f64); 3]| {
        let p: Vec<(f64, f64)> = tri.iter().map(|(x, y)| (x * hx, y * hy)).collect();
        let det = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
        let grads: Vec<[f64; 2]> = (0..3)
            .map(|k| {
                let (b, c) = ((k + 1) % 3, (k + 2) % 3);
                [(p[b].1 - p[c].1) / det, (p[c].0 - p[b].0) / det]
            })
            .collect();
        let mut k = [[0.0; 3]; 3];
        for r in 0..3 {
            for s in 0..3 {
                let ag = [
                    a[0][0] * grads[s][0] + a[0][1] * grads[s][1],
                    a[1][0] * grads[s][0] + a[1][1] * grads[s][1],
                ];
                k[r][s] = area * (grads[r][0] * ag[0] + grads[r][1] * ag[1]);
            }
        }
        k
    };
    let k_lower = local(lower);
    let k_upper = local(upper);
    let mut triplets = Vec::with_capacity(18 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let tris = [
                ([id(i, j), id(i + 1, j), id(i + 1, j + 1)], &k_lower),
                ([id(i, j), id(i + 1, j + 1), id(i, j + 1)], &k_upper),
            ];
            for (verts, k) in tris {
                for r in 0..3 {
                    for s in 0..3 {
                        triplets.push((verts[r], verts[s], k[r][s]));
                    }
                }
            }
        }
    }
    let stiffness = CsrMatrix::from_triplets(nv, triplets);
    let is_free: Vec<bool> = (0..nv).map(|v| !boundary(v / (ny + 1), v % (ny + 1))).collect();
    let mut index = vec![usize::MAX; nv];
    let mut nf = 0;
    for v in 0..nv {
        if is_free[v] {
            index[v] = nf;
            nf += 1;
        }
    }
    if nf > 0 {
        let dense = stiffness.to_dense_rows_for(&index, &u);
        let sol = conjugate_gradient(
            &dense.0,
            &dense.1,
            CgOptions {
                tol: 1e-12,
                max_iter: Some(20 * nf),
                project_mean: false,
            },
        )?;
        for v in 0..nv {
            if index[v] != usize::MAX {
                u[v] = sol.x[index[v]];
            }
        }
    }
    Ok((stiffness.quadratic_form(&u), u))
}

impl CsrMatrix {
    /// Restriction to the unknowns marked in `index`, with the known values
    /// of `u` moved to the right-hand side.
    fn to_dense_rows_for(&self, index: &[usize], u: &[f64]) -> (CsrMatrix, Vec<f64>) {
        let nf = index.iter().filter(|&&i| i != usize::MAX).count();
        let mut rhs = vec![0.0; nf];
        let mut triplets = Vec::new();
        let n = self.dim();
        let mut row = vec![0.0; n];
        for i in 0..n {
            if index[i] == usize::MAX {
                continue;
            }
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            // Row i of a symmetric matrix equals column i.
            self.mul_into(&e, &mut row);
            for (j, &v) in row.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                match index[j] {
                    usize::MAX => rhs[index[i]] -= v * u[j],
                    jj => triplets.push((index[i], jj, v)),
                }
            }
        }
        (CsrMatrix::from_triplets(nf, triplets), rhs)
    }
}

/// Continuum minimizer for the constant tensor `a` (`d x d`).
///
/// d = 1 is solved exactly. d = 2 uses P1 elements with mesh width at most
/// `h`, and again at `h/2`; the reported energy is the Richardson combination
/// and the samples come from the finer mesh.
pub fn continuum_reference(
    a: &[Vec<f64>],
    omega: &BoxDomain,
    datum: &Datum,
    h: f64,
) -> Result<ContinuumSolution, BvpError> {
    match omega.dim() {
        1 => {
            let (lo, hi) = (omega.lo[0], omega.hi[0]);
            let (pa, pb) = (datum.eval(&[lo])?, datum.eval(&[hi])?);
            Ok(ContinuumSolution {
                omega: omega.clone(),
                energy: a[0][0] * (pb - pa).powi(2) / (hi - lo),
                error_estimate: 0.0,
                shape: Vec::new(),
                values: Vec::new(),
                endpoints: (pa, pb),
            })
        }
        2 => {
            let nx = ((omega.hi[0] - omega.lo[0]) / h).ceil().max(1.0) as usize;
            let ny = ((omega.hi[1] - omega.lo[1]) / h).ceil().max(1.0) as usize;
            let (coarse, _) = fem_2d(a, omega, datum, nx, ny)?;
            let (fine, values) = fem_2d(a, omega, datum, 2 * nx, 2 * ny)?;
            Ok(ContinuumSolution {
                omega: omega.clone(),
                energy: (4.0 * fine - coarse) / 3.0,
                error_estimate: (fine - coarse).abs() / 3.0,
                shape: vec![2 * nx + 1, 2 * ny + 1],
                values,
                endpoints: (0.0, 0.0),
            })
        }
        d => Err(BvpError::UnsupportedDimension(d)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub eps: String,
    pub eps_value: f64,
    pub discrete_energy: f64,
    pub continuum_energy: f64,
    /// `L^2` distance between the coarse field and the continuum minimizer
    /// at cell centres, over all full cells inside the closed box.
    pub l2_error: f64,
    /// Same, restricted to cells whose corner is farther than
    /// `2 eps sqrt(d) T` from the boundary; `None` when no cell qualifies.
    pub l2_error_interior: Option<f64>,
    /// `sum eps^d u_i^2`.
    pub mass: f64,
    pub free: usize,
    pub constrained: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Study {
    pub tensor: Vec<Vec<f64>>,
    pub convention: Convention,
    pub continuum_energy: f64,
    pub continuum_error_estimate: f64,
    pub r: i64,
    pub rows: Vec<StudyRow>,
}

impl Study {
    pub fn energy_gaps(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| (r.discrete_energy - r.continuum_energy).abs())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    pub r: Option<i64>,
    pub convention: Convention,
    pub tol: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            r: None,
            convention: Convention::Double,
            tol: 1e-12,
        }
    }
}

fn l2_errors(
    graph: &LatticeGraph,
    sol: &DirichletSolution,
    cont: &ContinuumSolution,
    omega: &BoxDomain,
    eps: f64,
) -> (f64, Option<f64>) {
    let d = graph.d();
    let t = graph.period() as f64;
    let side = eps * t;
    let margin = 2.0 * eps * (d as f64).sqrt() * t;
    let mut all = 0.0;
    let mut interior = 0.0;
    let mut interior_cells = 0;
    for c in coarse_field(graph, &sol.domain.graph, &sol.u) {
        let corner: Vec<f64> = c.cell.iter().map(|&l| side * l as f64).collect();
        let inside = (0..d).all(|m| {
            corner[m] >= omega.lo[m] - 1e-12 && corner[m] + side <= omega.hi[m] + 1e-12
        });
        if !inside {
            continue;
        }
        let centre: Vec<f64> = corner.iter().map(|x| x + side / 2.0).collect();
        let sq = side.powi(d as i32) * (c.mean - cont.value_at(&centre)).powi(2);
        all += sq;
        if omega.boundary_distance(&corner) > margin {
            interior += sq;
            interior_cells += 1;
        }
    }
    (all.sqrt(), (interior_cells > 0).then(|| interior.sqrt()))
}

/// Solves the Dirichlet problem for each `eps` and compares with the
/// homogenized continuum problem.
pub fn epsilon_convergence_study(
    graph: &LatticeGraph,
    omega: &BoxDomain,
    datum: &Datum,
    eps_list: &[Epsilon],
    opts: StudyOptions,
) -> Result<Study, BvpError> {
    let tensor = homogenized_tensor(
        graph,
        CellOptions {
            convention: opts.convention,
            tol: 1e-12,
            max_iter: None,
        },
    )?;
    let h = eps_list
        .iter()
        .map(|e| e.value())
        .fold(f64::INFINITY, f64::min)
        / 2.0;
    let cont = continuum_reference(&tensor.entries, omega, datum, h)?;
    let r = opts.r.unwrap_or(graph.period());
    let rows = eps_list
        .par_iter()
        .map(|&eps| {
            let start = Instant::now();
            let problem = DirichletProblem {
                graph: graph.clone(),
                omega: omega.clone(),
                datum: datum.clone(),
                eps,
                r,
                convention: opts.convention,
                tol: opts.tol,
            };
            let sol = solve_dirichlet(&problem)?;
            let (l2_error, l2_error_interior) = l2_errors(graph, &sol, &cont, omega, eps.value());
            let d = graph.d() as i32;
            let constrained = sol.domain.constrained.iter().filter(|&&c| c).count();
            Ok(StudyRow {
                eps: eps.to_string(),
                eps_value: eps.value(),
                discrete_energy: sol.energy,
                continuum_energy: cont.energy,
                l2_error,
                l2_error_interior,
                mass: eps.value().powi(d) * sol.u.iter().map(|v| v * v).sum::<f64>(),
                free: sol.free,
                constrained,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>, BvpError>>()?;
    Ok(Study {
        tensor: tensor.entries,
        convention: opts.convention,
        continuum_energy: cont.energy,
        continuum_error_estimate: cont.error_estimate,
        r,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::CellNode;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn eps(n: i64, t: i64) -> Epsilon {
        Epsilon::from_n(n, t).unwrap()
    }

    #[test]
    fn epsilon_parsing() {
        assert_eq!(Epsilon::parse("1/8", 2).unwrap().n, 8);
        assert_eq!(Epsilon::parse("2/16", 2).unwrap().n, 8);
        assert_eq!(Epsilon::parse("0.25", 2).unwrap().n, 4);
        assert!(Epsilon::parse("1/6", 4).is_err());
        assert!(Epsilon::parse("3/8", 1).is_err());
        assert!(Epsilon::parse("0.3", 1).is_err());
        assert!(Epsilon::parse("abc", 1).is_err());
    }

    #[test]
    fn datum_averages() {
        let c = Datum::constant(3.5, 1);
        assert_eq!(c.cell_average(&[0.25], 0.125).unwrap(), 3.5);
        let x = Datum::parse("x", 1).unwrap();
        assert!(matches!(x, Datum::Affine { .. }));
        assert_relative_eq!(x.cell_average(&[0.375], 0.125).unwrap(), 0.4375, epsilon = 1e-15);
        let sq = Datum::parse("x^2", 1).unwrap();
        assert!(matches!(sq, Datum::Expr { .. }));
        assert!((sq.cell_average(&[0.0], 0.125).unwrap() - 1.0 / 192.0).abs() < 1e-12);
        let xy = Datum::parse("x*y + sin(x)", 2).unwrap();
        // int_0^1 int_0^1 (xy + sin x) = 1/4 + 1 - cos 1
        assert!((xy.cell_average(&[0.0, 0.0], 1.0).unwrap() - (1.25 - 1f64.cos())).abs() < 1e-12);
    }

    #[test]
    fn datum_errors() {
        assert!(matches!(Datum::parse("x +", 1), Err(BvpError::BadDatum { .. })));
        let ln = Datum::parse("ln(x)", 1).unwrap();
        assert!(matches!(ln.eval(&[-1.0]), Err(BvpError::DatumUndefined { .. })));
        let g = Datum::Gridded(GriddedSamples {
            lo: vec![0.0],
            hi: vec![1.0],
            shape: vec![3],
            values: vec![0.0, 1.0, 4.0],
        });
        assert_relative_eq!(g.eval(&[0.75]).unwrap(), 2.5);
        assert!(g.eval(&[1.5]).is_err());
    }

    #[test]
    fn constrained_band() {
        // Chain, eps = 1/8, r = 1: vertex i is constrained iff i - 1 < 0 or i + 1 > 8.
        let p = DirichletProblem::new(fixtures::chain(), BoxDomain::unit(1), Datum::constant(0.0, 1), eps(8, 1));
        let dom = discrete_domain(&p).unwrap();
        assert_eq!(dom.graph.vertex_count(), 9);
        let c: Vec<i64> = dom
            .graph
            .positions
            .iter()
            .zip(&dom.constrained)
            .filter(|(_, &c)| c)
            .map(|(x, _)| x[0])
            .collect();
        assert_eq!(c, vec![0, 8]);
        let p2 = DirichletProblem { r: 3, ..p };
        let dom = discrete_domain(&p2).unwrap();
        assert_eq!(dom.constrained.iter().filter(|&&c| c).count(), 6);
    }

    #[test]
    fn chain_energy_is_exact() {
        for n in [4, 8, 16, 32, 5] {
            let p = DirichletProblem::new(fixtures::chain(), BoxDomain::unit(1), Datum::parse("x", 1).unwrap(), eps(n, 1));
            let s = solve_dirichlet(&p).unwrap();
            assert!((s.energy - 2.0).abs() < 1e-10, "n = {n}: {}", s.energy);
        }
    }

    #[test]
    fn constant_datum_gives_zero() {
        for (name, g) in fixtures::builtin_examples() {
            let n = 4 * g.period();
            let p = DirichletProblem::new(g, BoxDomain::unit(1), Datum::constant(-1.5, 1), eps(n, 1));
            let s = solve_dirichlet(&p).unwrap();
            assert!(s.energy.abs() < 1e-20, "{name}");
            assert!(s.u.iter().all(|v| (v + 1.5).abs() < 1e-10), "{name}");
        }
    }

    #[test]
    fn empty_interior() {
        let p = DirichletProblem::new(fixtures::chain(), BoxDomain::unit(1), Datum::constant(0.0, 1), eps(2, 1));
        assert!(solve_dirichlet(&p).is_ok());
        let p = DirichletProblem { r: 2, ..p };
        assert!(matches!(solve_dirichlet(&p), Err(BvpError::EmptyInterior)));
    }

    #[test]
    fn continuum_closed_forms() {
        let a = vec![vec![4.0]];
        let c = continuum_reference(&a, &BoxDomain::unit(1), &Datum::parse("x", 1).unwrap(), 0.1).unwrap();
        assert_relative_eq!(c.energy, 4.0);
        assert_relative_eq!(c.value_at(&[0.3]), 0.3);
        let c = continuum_reference(
            &a,
            &BoxDomain::new(vec![0.0], vec![2.0]).unwrap(),
            &Datum::parse("3*x", 1).unwrap(),
            0.1,
        )
        .unwrap();
        assert_relative_eq!(c.energy, 72.0, max_relative = 1e-14);
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let c = continuum_reference(&id, &BoxDomain::unit(2), &Datum::parse("x", 2).unwrap(), 0.125).unwrap();
        assert_relative_eq!(c.energy, 1.0, epsilon = 1e-9);
        assert_relative_eq!(c.value_at(&[0.3, 0.7]), 0.3, epsilon = 1e-9);
        assert!(matches!(
            continuum_reference(&id, &BoxDomain::unit(3), &Datum::constant(0.0, 3), 0.1),
            Err(BvpError::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn anisotropic_fem_is_exact_on_affine_data() {
        let a = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
        let c = continuum_reference(&a, &BoxDomain::unit(2), &Datum::parse("x - 2*y", 2).unwrap(), 0.1).unwrap();
        // grad = (1, -2): A g · g = 2 - 2 + 4
        assert_relative_eq!(c.energy, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn harmonic_polynomial_converges() {
        // u = x^2 - y^2 is harmonic; energy = int 4x^2 + 4y^2 = 8/3.
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let c = continuum_reference(&id, &BoxDomain::unit(2), &Datum::parse("x^2 - y^2", 2).unwrap(), 1.0 / 16.0)
            .unwrap();
        assert!((c.energy - 8.0 / 3.0).abs() < 1e-4, "{}", c.energy);
        assert!(c.error_estimate < 1e-2);
    }

    #[test]
    fn square_grid_dirichlet_matches_continuum() {
        let n = CellNode::new(vec![0, 0], vec![]);
        let g = LatticeGraph::new(
            2,
            0,
            1,
            vec![n.clone()],
            vec![
                (n.clone(), n.clone(), vec![1, 0], 1.0),
                (n.clone(), n.clone(), vec![0, 1], 1.0),
            ],
        )
        .unwrap();
        let study = epsilon_convergence_study(
            &g,
            &BoxDomain::unit(2),
            &Datum::parse("x + 0.5*y", 2).unwrap(),
            &[eps(8, 1), eps(16, 1)],
            StudyOptions::default(),
        )
        .unwrap();
        // Affine data: the discrete minimizer is affine; energy 2 (1 + 1/4)
        // on the closed lattice box, which has n (n+1) bonds per direction.
        for row in &study.rows {
            let n = 1.0 / row.eps_value;
            let expected = 2.0 * (1.0 + 0.25) * (n + 1.0) / n;
            assert_relative_eq!(row.discrete_energy, expected, max_relative = 1e-9);
        }
        assert_relative_eq!(study.continuum_energy, 2.5, epsilon = 1e-9);
    }

    #[test]
    fn ex1_study_trends() {
        let g = fixtures::builtin("ex1").unwrap();
        let study = epsilon_convergence_study(
            &g,
            &BoxDomain::unit(1),
            &Datum::parse("x", 1).unwrap(),
            &[eps(4, 2), eps(8, 2), eps(16, 2), eps(32, 2)],
            StudyOptions::default(),
        )
        .unwrap();
        for w in study.rows.windows(2) {
            let ratio = w[1].l2_error / w[0].l2_error;
            assert!((0.3..=0.7).contains(&ratio), "{ratio}");
        }
        let last = study.rows.last().unwrap();
        assert!((last.discrete_energy - 4.0).abs() < 0.05 * 4.0);
    }

    fn solve_random(which: usize, n_mult: i64, seed: u64) -> (DirichletSolution, f64) {
        let (_, g) = fixtures::builtin_examples().swap_remove(which);
        let t = g.period();
        let slope = (seed % 7) as f64 - 3.0;
        let datum = Datum::Affine { c: 0.5, g: vec![slope] };
        let p = DirichletProblem::new(g, BoxDomain::unit(1), datum, eps(t * n_mult, t));
        let s = solve_dirichlet(&p).unwrap();
        let affine: Vec<f64> = s
            .domain
            .graph
            .positions
            .iter()
            .map(|x| 0.5 + slope * (x[0] as f64 + 0.5) / p.eps.n as f64)
            .collect();
        let aff_energy = dirichlet_energy(&s.domain.graph, &affine, p.eps.value(), 1, Convention::Double);
        (s, aff_energy)
    }

    proptest! {
        #[test]
        fn maximum_principle(which in 0usize..6, n_mult in 3i64..10, seed in 0u64..50) {
            let (s, _) = solve_random(which, n_mult, seed);
            for v in &s.u {
                prop_assert!(*v >= s.boundary_min - 1e-9 && *v <= s.boundary_max + 1e-9);
            }
        }

        #[test]
        fn minimum_below_affine_interpolant(which in 0usize..6, n_mult in 3i64..10, seed in 0u64..50) {
            let (s, aff) = solve_random(which, n_mult, seed);
            prop_assert!(s.energy >= 0.0);
            prop_assert!(s.energy <= aff * (1.0 + 1e-10) + 1e-12);
        }
    }
}
