//! Finite-window approximations of the homogenized energy.
//!
//! `f_0^K(z)` minimizes the energy of the window of `K^d` cells over functions
//! equal to `z·i^d` on every vertex within `2 sqrt(d) T` of the window
//! boundary and outside the window. Pairs are counted with the window vertex
//! first, so under the double convention an edge inside the window counts
//! twice and an edge leaving it once. The value is divided by `(KT)^d`.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cell::{f_hom, CellError, CellOptions};
use crate::graph::LatticeGraph;
use crate::linalg::{conjugate_gradient, CgOptions, CsrMatrix, LinalgError};
use crate::window::{graph_position, instantiate_window, CellBox, FiniteGraph, WindowError, WrapPolicy};
use crate::Convention;

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum AsymptoticError {
    #[error("window of {k} cells per direction is too small (need at least 2)")]
    WindowTooSmall { k: usize },
    #[error("slope has {got} components, graph has d = {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("window: {0}")]
    Window(String),
    #[error(transparent)]
    Solver(#[from] LinalgError),
    #[error(transparent)]
    Cell(#[from] CellError),
}

impl From<WindowError> for AsymptoticError {
    fn from(e: WindowError) -> Self {
        AsymptoticError::Window(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowValue {
    pub k: usize,
    pub value: f64,
    pub clamped: usize,
    pub free: usize,
    pub iterations: usize,
}

fn affine(z: &[f64], x: &[i64]) -> f64 {
    z.iter().zip(x).map(|(a, b)| a * *b as f64).sum()
}

/// Energy of `u` on the window, boundary edges evaluated against the affine
/// field, divided by the window volume.
fn window_energy(
    graph: &LatticeGraph,
    win: &FiniteGraph,
    u: &[f64],
    z: &[f64],
    convention: Convention,
) -> f64 {
    let f = convention.factor();
    let inner: f64 = win
        .edges
        .iter()
        .map(|e| e.weight * (u[e.a] - u[e.b]).powi(2))
        .sum();
    let outer: f64 = win
        .boundary_edges
        .iter()
        .map(|e| e.weight * (u[e.inner] - affine(z, &graph_position(graph, &e.outer))).powi(2))
        .sum();
    let volume: f64 = (0..win.window.dim())
        .map(|m| (win.window.extent(m) * graph.period()) as f64)
        .product();
    (f * inner + 0.5 * f * outer) / volume
}

/// Minimizer and value of the clamped window problem for `K` cells per direction.
pub fn finite_window_minimizer(
    graph: &LatticeGraph,
    z: &[f64],
    k: usize,
    opts: CellOptions,
) -> Result<(WindowValue, FiniteGraph, Vec<f64>), AsymptoticError> {
    if k < 2 {
        return Err(AsymptoticError::WindowTooSmall { k });
    }
    if z.len() != graph.d() {
        return Err(AsymptoticError::DimensionMismatch {
            got: z.len(),
            expected: graph.d(),
        });
    }
    let d = graph.d();
    let win = instantiate_window(graph, &CellBox::cube(d, k as i64), WrapPolicy::Clamped)?;
    let clamp = 2.0 * (d as f64).sqrt() * graph.period() as f64;
    let fixed = win.boundary_layer(clamp);
    let mut u: Vec<f64> = win.positions.iter().map(|x| affine(z, x)).collect();

    let mut free_index = vec![usize::MAX; u.len()];
    let mut n_free = 0;
    for (i, f) in fixed.iter().enumerate() {
        if !f {
            free_index[i] = n_free;
            n_free += 1;
        }
    }
    let mut iterations = 0;
    if n_free > 0 {
        // Stationarity of sum_edges c w (u_a - u_b)^2; the common factor drops out.
        let mut triplets = Vec::new();
        let mut rhs = vec![0.0; n_free];
        let mut couple = |a: usize, b: Option<usize>, value_b: f64, w: f64| {
            let ia = free_index[a];
            if ia == usize::MAX {
                return;
            }
            triplets.push((ia, ia, w));
            match b.map(|b| free_index[b]).filter(|&ib| ib != usize::MAX) {
                Some(ib) => triplets.push((ia, ib, -w)),
                None => rhs[ia] += w * value_b,
            }
        };
        for e in &win.edges {
            couple(e.a, Some(e.b), u[e.b], 2.0 * e.weight);
            couple(e.b, Some(e.a), u[e.a], 2.0 * e.weight);
        }
        for e in &win.boundary_edges {
            let outer = affine(z, &graph_position(graph, &e.outer));
            couple(e.inner, None, outer, e.weight);
        }
        let a = CsrMatrix::from_triplets(n_free, triplets);
        let sol = conjugate_gradient(
            &a,
            &rhs,
            CgOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
                project_mean: false,
            },
        )?;
        iterations = sol.iterations;
        for (i, &fi) in free_index.iter().enumerate() {
            if fi != usize::MAX {
                u[i] = sol.x[fi];
            }
        }
    }
    let value = window_energy(graph, &win, &u, z, opts.convention);
    Ok((
        WindowValue {
            k,
            value,
            clamped: u.len() - n_free,
            free: n_free,
            iterations,
        },
        win,
        u,
    ))
}

pub fn finite_window_value(
    graph: &LatticeGraph,
    z: &[f64],
    k: usize,
    opts: CellOptions,
) -> Result<WindowValue, AsymptoticError> {
    finite_window_minimizer(graph, z, k, opts).map(|(v, _, _)| v)
}

/// Energy density of the affine field itself.
pub fn affine_energy_density(graph: &LatticeGraph, z: &[f64], convention: Convention) -> f64 {
    crate::cell::cell_energy(graph, z, &vec![0.0; graph.node_count()], convention)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TilingCheck {
    pub k: usize,
    pub h: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub passed: bool,
}

/// Checks `f_0^H <= (|I| K^d / H^d)(f_0^K + 1/K) + (1 - |I| K^d / H^d) f_aff`
/// where `|I| = floor(H/K)^d` shifted copies of the `K`-window minimizer tile
/// the `H`-window and the rest keeps the affine field.
pub fn tiling_bound(
    graph: &LatticeGraph,
    z: &[f64],
    k: usize,
    h: usize,
    slack: f64,
    opts: CellOptions,
) -> Result<TilingCheck, AsymptoticError> {
    let d = graph.d() as i32;
    let small = finite_window_value(graph, z, k, opts)?.value;
    let large = finite_window_value(graph, z, h, opts)?.value;
    let tiles = ((h / k) as f64).powi(d);
    let covered = tiles * (k as f64).powi(d) / (h as f64).powi(d);
    let rhs = covered * (small + 1.0 / k as f64)
        + (1.0 - covered) * affine_energy_density(graph, z, opts.convention);
    Ok(TilingCheck {
        k,
        h,
        lhs: large,
        rhs,
        slack,
        passed: large <= rhs + slack,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub value: f64,
    pub gap: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub z: Vec<f64>,
    pub f_hom: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log gap` against `log K`, when at least two
    /// gaps are resolvable.
    pub rate: Option<f64>,
}

/// Gaps below this are treated as exact and left out of the rate fit.
const RESOLVABLE_GAP: f64 = 1e-12;

pub fn convergence_study(
    graph: &LatticeGraph,
    z: &[f64],
    ks: &[usize],
    opts: CellOptions,
) -> Result<ConvergenceTable, AsymptoticError> {
    let hom = f_hom(graph, z, opts)?;
    let rows: Vec<ConvergenceRow> = ks
        .par_iter()
        .map(|&k| {
            let start = Instant::now();
            let v = finite_window_value(graph, z, k, opts)?;
            Ok(ConvergenceRow {
                k,
                value: v.value,
                gap: v.value - hom,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<_, AsymptoticError>>()?;
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.gap > RESOLVABLE_GAP * hom.abs().max(1.0))
        .map(|r| ((r.k as f64).ln(), r.gap.ln()))
        .collect();
    Ok(ConvergenceTable {
        z: z.to_vec(),
        f_hom: hom,
        rate: log_log_slope(&points),
        rows,
    })
}

fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
