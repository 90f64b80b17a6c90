//! Cell averages and the inequalities that control them.
//!
//! Path constants come from witness paths: the difference of two values is a
//! telescoping sum along a path, so by Cauchy-Schwarz its square is at most
//! the path length times the sum of squared edge differences along it. When
//! several paths share an edge that edge is counted once per path, which is
//! where the multiplicity factor enters.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::connectivity::{connectedness_certificate, shortest_paths, ConnectivityError, LiftedVertex};
use crate::graph::LatticeGraph;
use crate::linalg::{conjugate_gradient, dot, norm, CgOptions, CsrMatrix, LinalgError};
use crate::window::{instantiate_window, CellBox, FiniteGraph, WindowError, WrapPolicy};

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum CoarseError {
    #[error(transparent)]
    Connectivity(#[from] ConnectivityError),
    #[error("window: {0}")]
    Window(String),
    #[error(transparent)]
    Solver(#[from] LinalgError),
    #[error("window of {cells} cells leaves no vertex away from the boundary band")]
    NoInterior { cells: usize },
}

impl From<WindowError> for CoarseError {
    fn from(e: WindowError) -> Self {
        CoarseError::Window(e.to_string())
    }
}

/// Mean of `u` over the cell `cell`, if every cell node of it is present.
pub fn coarse_mean(graph: &LatticeGraph, win: &FiniteGraph, u: &[f64], cell: &[i64]) -> Option<f64> {
    let vs = win.cell_vertices(cell);
    (vs.len() == graph.node_count() && !vs.is_empty())
        .then(|| vs.iter().map(|&i| u[i]).sum::<f64>() / vs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoarseCell {
    pub cell: Vec<i64>,
    pub mean: f64,
}

/// Cell means over the full cells of `win`, in lexicographic cell order.
pub fn coarse_field(graph: &LatticeGraph, win: &FiniteGraph, u: &[f64]) -> Vec<CoarseCell> {
    let n = graph.node_count();
    let mut sums: HashMap<&[i64], (f64, usize)> = HashMap::new();
    for (i, v) in win.vertices.iter().enumerate() {
        let e = sums.entry(v.cell.as_slice()).or_insert((0.0, 0));
        e.0 += u[i];
        e.1 += 1;
    }
    let mut out: Vec<CoarseCell> = sums
        .into_iter()
        .filter(|(_, (_, c))| *c == n)
        .map(|(cell, (s, c))| CoarseCell {
            cell: cell.to_vec(),
            mean: s / c as f64,
        })
        .collect();
    out.sort_by(|a, b| a.cell.cmp(&b.cell));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathConstants {
    /// Enlargement `M` of the cell neighbourhoods, a multiple of `T`.
    pub m: i64,
    /// Constant of the two-connectedness inequality.
    pub c_two: f64,
    /// Constant of the per-cell Poincaré-Wirtinger inequality.
    pub c_pw: f64,
    /// Longest witness between a node and its unit translate.
    pub max_translation_path: usize,
    /// Longest witness between two nodes of one cell.
    pub max_internal_path: usize,
    pub translation_multiplicity: usize,
    pub internal_multiplicity: usize,
    pub nodes_per_cell: usize,
    pub min_weight: f64,
}

fn edge_key(a: &LiftedVertex, b: &LiftedVertex) -> (LiftedVertex, LiftedVertex) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

fn multiplicity<'a>(paths: impl Iterator<Item = &'a Vec<LiftedVertex>>) -> usize {
    let mut count: HashMap<(LiftedVertex, LiftedVertex), usize> = HashMap::new();
    for path in paths {
        for w in path.windows(2) {
            *count.entry(edge_key(&w[0], &w[1])).or_default() += 1;
        }
    }
    count.into_values().max().unwrap_or(0)
}

/// Smallest multiple of `T` such that every vertex of `paths` lies in the
/// integer box `lo - M + 1 ..= hi + M - 1`.
fn enlargement<'a>(
    graph: &LatticeGraph,
    lo: &[i64],
    hi: &[i64],
    paths: impl Iterator<Item = &'a Vec<LiftedVertex>>,
) -> i64 {
    let t = graph.period();
    let mut excess = 0;
    for v in paths.flatten() {
        let x = crate::window::graph_position(graph, v);
        for m in 0..x.len() {
            excess = excess.max(lo[m] - x[m]).max(x[m] - hi[m]);
        }
    }
    let mut m = t;
    while m - 1 < excess {
        m += t;
    }
    m
}

pub fn compute_path_constants(graph: &LatticeGraph) -> Result<PathConstants, CoarseError> {
    let cert = connectedness_certificate(graph)?;
    let d = graph.d();
    let n = graph.node_count();
    let t = graph.period();
    let a_min = graph.min_weight();

    let mut c_two: f64 = 0.0;
    let mut max_translation_path = 0;
    let mut translation_multiplicity = 0;
    let mut m_ext = t;
    for axis in 0..d {
        let paths: Vec<&Vec<LiftedVertex>> = (0..n)
            .map(|p| &cert.witness(p, p, axis).expect("certificate covers every axis").path)
            .collect();
        let longest = paths.iter().map(|p| p.len() - 1).max().unwrap_or(0);
        let mult = multiplicity(paths.iter().copied());
        c_two = c_two.max(longest as f64 / n as f64 * (mult as f64 / 2.0).max(1.0));
        max_translation_path = max_translation_path.max(longest);
        translation_multiplicity = translation_multiplicity.max(mult);
        let lo = vec![0; d];
        let mut hi = vec![t - 1; d];
        hi[axis] = 2 * t - 1;
        m_ext = m_ext.max(enlargement(graph, &lo, &hi, paths.iter().copied()));
    }

    let mut internal = Vec::new();
    for p in 0..n {
        let targets: Vec<LiftedVertex> = (p + 1..n).map(|q| LiftedVertex::origin(d, q)).collect();
        let found = shortest_paths(graph, &LiftedVertex::origin(d, p), &targets, |_| true)?;
        internal.extend(found.into_iter().map(|p| p.expect("connected graph")));
    }
    let max_internal_path = internal.iter().map(|p| p.len() - 1).max().unwrap_or(0);
    let internal_multiplicity = multiplicity(internal.iter());
    let c_pw = if internal.is_empty() {
        0.0
    } else {
        max_internal_path as f64 / (n as f64 * a_min)
            * (internal_multiplicity as f64 / 2.0).max(1.0)
    };
    m_ext = m_ext.max(enlargement(graph, &vec![0; d], &vec![t - 1; d], internal.iter()));

    Ok(PathConstants {
        m: m_ext,
        c_two,
        c_pw,
        max_translation_path,
        max_internal_path,
        translation_multiplicity,
        internal_multiplicity,
        nodes_per_cell: n,
        min_weight: a_min,
    })
}

/// Test-field families used by the inequality checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    Gaussian,
    Affine,
    Indicator,
    Checkerboard,
    Tent,
    Sine,
}

const INEQUALITY_FAMILIES: [TrialKind; 4] = [
    TrialKind::Gaussian,
    TrialKind::Affine,
    TrialKind::Indicator,
    TrialKind::Checkerboard,
];

fn trial_field(
    kind: TrialKind,
    graph: &LatticeGraph,
    win: &FiniteGraph,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = win.vertex_count();
    let extent: Vec<f64> = (0..win.window.dim())
        .map(|m| (win.window.extent(m) * graph.period()) as f64)
        .collect();
    let rel = |i: usize, m: usize| {
        (win.positions[i][m] - win.window.lo[m] * graph.period()) as f64 / extent[m]
    };
    match kind {
        TrialKind::Gaussian => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        TrialKind::Affine => {
            let a: Vec<f64> = (0..win.window.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..graph.k()).map(|_| rng.sample(StandardNormal)).collect();
            let c: f64 = rng.sample(StandardNormal);
            (0..n)
                .map(|i| {
                    let kpos = &graph.nodes()[win.vertices[i].node].kpos;
                    c + dot(&a, &win.positions[i].iter().map(|&x| x as f64).collect::<Vec<_>>())
                        + kpos.iter().zip(&b).map(|(&k, b)| k as f64 * b).sum::<f64>()
                })
                .collect()
        }
        TrialKind::Indicator => {
            let hit = rng.gen_range(0..n);
            (0..n).map(|i| f64::from(u8::from(i == hit))).collect()
        }
        TrialKind::Checkerboard => (0..n)
            .map(|i| {
                let kpos = &graph.nodes()[win.vertices[i].node].kpos;
                let s: i64 = win.positions[i].iter().chain(kpos).sum();
                if s.rem_euclid(2) == 0 { 1.0 } else { -1.0 }
            })
            .collect(),
        TrialKind::Tent => (0..n)
            .map(|i| {
                (0..win.window.dim())
                    .map(|m| 1.0 - (2.0 * rel(i, m) - 1.0).abs())
                    .product()
            })
            .collect(),
        TrialKind::Sine => {
            let modes: Vec<f64> = (0..win.window.dim())
                .map(|_| rng.gen_range(1..=3) as f64)
                .collect();
            (0..n)
                .map(|i| {
                    (0..win.window.dim())
                        .map(|m| (PI * modes[m] * rel(i, m)).sin())
                        .product()
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub name: &'static str,
    pub constant: f64,
    pub trials: usize,
    /// Largest observed `lhs / rhs`.
    pub worst_ratio: f64,
    pub worst_trial: Option<TrialKind>,
    pub passed: bool,
}

/// Relative tolerance for rounding in `lhs <= rhs`.
const RATIO_TOL: f64 = 1e-9;

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs <= 1e-24 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn in_box(x: &[i64], lo: &[i64], hi: &[i64]) -> bool {
    x.iter().enumerate().all(|(m, &v)| lo[m] <= v && v <= hi[m])
}

/// Ordered-pair edge sum `sum a^p (u_i - u_j)^2` over edges inside a position box.
fn local_energy(win: &FiniteGraph, u: &[f64], lo: &[i64], hi: &[i64], weighted: bool) -> f64 {
    win.edges
        .iter()
        .filter(|e| in_box(&win.positions[e.a], lo, hi) && in_box(&win.positions[e.b], lo, hi))
        .map(|e| {
            let w = if weighted { e.weight } else { 1.0 };
            2.0 * w * (u[e.a] - u[e.b]).powi(2)
        })
        .sum()
}

fn neighbourhood_window(graph: &LatticeGraph, m_ext: i64) -> Result<FiniteGraph, CoarseError> {
    let c = m_ext / graph.period() + 1;
    let d = graph.d();
    Ok(instantiate_window(
        graph,
        &CellBox::new(vec![-c; d], vec![1 + c; d]),
        WrapPolicy::Open,
    )?)
}

/// `|mean(Q^0) - mean(Q^{e_m})|^2 <= C_two * sum over ordered edge pairs in
/// (Q^0 ∪ Q^{e_m}) + (-M, M)^d`, checked on `trials` seeded fields per axis.
pub fn check_two_connectedness(
    graph: &LatticeGraph,
    constants: &PathConstants,
    trials: usize,
    seed: u64,
) -> Result<InequalityReport, CoarseError> {
    let win = neighbourhood_window(graph, constants.m)?;
    let t = graph.period();
    let d = graph.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: (f64, Option<TrialKind>) = (0.0, None);
    for trial in 0..trials {
        let kind = INEQUALITY_FAMILIES[trial % INEQUALITY_FAMILIES.len()];
        let u = trial_field(kind, graph, &win, &mut rng);
        for axis in 0..d {
            let mut other = vec![0; d];
            other[axis] = 1;
            let a = coarse_mean(graph, &win, &u, &vec![0; d]).expect("full cell");
            let b = coarse_mean(graph, &win, &u, &other).expect("full cell");
            let lo = vec![-constants.m + 1; d];
            let mut hi = vec![t - 1 + constants.m - 1; d];
            hi[axis] += t;
            let rhs = constants.c_two * local_energy(&win, &u, &lo, &hi, false);
            let r = ratio((a - b).powi(2), rhs);
            if r > worst.0 || worst.1.is_none() {
                worst = (r, Some(kind));
            }
        }
    }
    Ok(InequalityReport {
        name: "two_connectedness",
        constant: constants.c_two,
        trials,
        worst_ratio: worst.0,
        worst_trial: worst.1,
        passed: worst.0 <= 1.0 + RATIO_TOL,
    })
}

/// `sum_{i in Q^0} (u_i - mean)^2 <= C_pw * sum over weighted ordered edge
/// pairs in Q^0 + (-M, M)^d`.
pub fn check_poincare_wirtinger(
    graph: &LatticeGraph,
    constants: &PathConstants,
    trials: usize,
    seed: u64,
) -> Result<InequalityReport, CoarseError> {
    let win = neighbourhood_window(graph, constants.m)?;
    let t = graph.period();
    let d = graph.d();
    let cell = win.cell_vertices(&vec![0; d]);
    let lo = vec![-constants.m + 1; d];
    let hi = vec![t - 1 + constants.m - 1; d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: (f64, Option<TrialKind>) = (0.0, None);
    for trial in 0..trials {
        let kind = INEQUALITY_FAMILIES[trial % INEQUALITY_FAMILIES.len()];
        let u = trial_field(kind, graph, &win, &mut rng);
        let mean = cell.iter().map(|&i| u[i]).sum::<f64>() / cell.len() as f64;
        let lhs: f64 = cell.iter().map(|&i| (u[i] - mean).powi(2)).sum();
        let rhs = constants.c_pw * local_energy(&win, &u, &lo, &hi, true);
        let r = ratio(lhs, rhs);
        if r > worst.0 || worst.1.is_none() {
            worst = (r, Some(kind));
        }
    }
    Ok(InequalityReport {
        name: "poincare_wirtinger",
        constant: constants.c_pw,
        trials,
        worst_ratio: worst.0,
        worst_trial: worst.1,
        passed: worst.0 <= 1.0 + RATIO_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareRow {
    /// Window side in cells.
    pub cells: usize,
    pub diameter: f64,
    /// Sharp constant `1 / lambda_min`.
    pub constant: f64,
    /// `constant / diameter^2`.
    pub scaled: f64,
    /// Largest `sum u^2 / (constant * energy)` over the trial fields.
    pub worst_trial_ratio: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareReport {
    pub rows: Vec<PoincareRow>,
    /// `scaled` of each row divided by the previous row's.
    pub doubling_ratios: Vec<f64>,
    pub factor: f64,
    pub passed: bool,
}

/// Dirichlet Laplacian (double count, weighted) on the vertices at distance
/// more than `2 sqrt(d) T` from the window boundary.
fn dirichlet_system(graph: &LatticeGraph, cells: usize) -> Result<(FiniteGraph, Vec<usize>, CsrMatrix), CoarseError> {
    let d = graph.d();
    let win = instantiate_window(graph, &CellBox::cube(d, cells as i64), WrapPolicy::Open)?;
    let band = 2.0 * (d as f64).sqrt() * graph.period() as f64;
    let dist = win.boundary_distances();
    let mut index = vec![usize::MAX; win.vertex_count()];
    let mut n = 0;
    for (i, &x) in dist.iter().enumerate() {
        if x > band {
            index[i] = n;
            n += 1;
        }
    }
    if n == 0 {
        return Err(CoarseError::NoInterior { cells });
    }
    let mut triplets = Vec::new();
    for e in &win.edges {
        let w = 2.0 * e.weight;
        let (a, b) = (index[e.a], index[e.b]);
        if a != usize::MAX {
            triplets.push((a, a, w));
        }
        if b != usize::MAX {
            triplets.push((b, b, w));
        }
        if a != usize::MAX && b != usize::MAX {
            triplets.extend([(a, b, -w), (b, a, -w)]);
        }
    }
    Ok((win, index, CsrMatrix::from_triplets(n, triplets)))
}

/// Smallest eigenvalue of an SPD matrix by inverse iteration.
fn smallest_eigenvalue(a: &CsrMatrix, seed: u64) -> Result<(f64, usize), CoarseError> {
    let n = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Positive start vector overlaps the (positive) ground state.
    let mut x: Vec<f64> = (0..n).map(|_| 1.0 + 0.1 * rng.gen::<f64>()).collect();
    let s = norm(&x);
    x.iter_mut().for_each(|v| *v /= s);
    let mut lambda = a.quadratic_form(&x);
    let opts = CgOptions {
        tol: 1e-12,
        max_iter: Some(50 * n.max(10)),
        project_mean: false,
    };
    for it in 1..=500 {
        let y = conjugate_gradient(a, &x, opts)?.x;
        let s = norm(&y);
        x = y.into_iter().map(|v| v / s).collect();
        let next = a.quadratic_form(&x);
        if (next - lambda).abs() <= 1e-12 * next {
            return Ok((next, it));
        }
        lambda = next;
    }
    Ok((lambda, 500))
}

/// Sharp Dirichlet Poincaré constants on cubes of the given side lengths (in
/// cells), with trial fields checked against each.
pub fn check_poincare(
    graph: &LatticeGraph,
    cells: &[usize],
    trials: usize,
    seed: u64,
    factor: f64,
) -> Result<PoincareReport, CoarseError> {
    let d = graph.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &l in cells {
        let (win, index, a) = dirichlet_system(graph, l)?;
        let (lambda, iterations) = smallest_eigenvalue(&a, seed ^ l as u64)?;
        let constant = 1.0 / lambda;
        let mut worst: f64 = 0.0;
        for trial in 0..trials {
            let kind = [TrialKind::Gaussian, TrialKind::Tent, TrialKind::Sine][trial % 3];
            let full = trial_field(kind, graph, &win, &mut rng);
            let mut u = vec![0.0; a.dim()];
            for (i, &k) in index.iter().enumerate() {
                if k != usize::MAX {
                    u[k] = full[i];
                }
            }
            worst = worst.max(ratio(dot(&u, &u), constant * a.quadratic_form(&u)));
        }
        let diameter = l as f64 * graph.period() as f64 * (d as f64).sqrt();
        rows.push(PoincareRow {
            cells: l,
            diameter,
            constant,
            scaled: constant / diameter.powi(2),
            worst_trial_ratio: worst,
            iterations,
        });
    }
    let doubling_ratios: Vec<f64> = rows.windows(2).map(|w| w[1].scaled / w[0].scaled).collect();
    let passed = rows.iter().all(|r| r.worst_trial_ratio <= 1.0 + RATIO_TOL)
        && doubling_ratios
            .iter()
            .all(|&r| r >= 1.0 / factor && r <= factor);
    Ok(PoincareReport {
        rows,
        doubling_ratios,
        factor,
        passed,
    })
}
