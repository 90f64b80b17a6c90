//! Finite instantiations of the periodic graph over a box of cells.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::connectivity::LiftedVertex;
use crate::graph::LatticeGraph;

/// Inclusive box of cell indices `lo..=hi` in `Z^d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl CellBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Self {
        Self { lo, hi }
    }

    /// The cube `{0, …, n-1}^d`.
    pub fn cube(d: usize, n: i64) -> Self {
        Self::new(vec![0; d], vec![n - 1; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| h < l)
    }

    pub fn extent(&self, m: usize) -> i64 {
        (self.hi[m] - self.lo[m] + 1).max(0)
    }

    pub fn len(&self) -> usize {
        (0..self.dim()).map(|m| self.extent(m) as usize).product()
    }

    pub fn contains(&self, cell: &[i64]) -> bool {
        cell.iter()
            .enumerate()
            .all(|(m, &c)| self.lo[m] <= c && c <= self.hi[m])
    }

    /// Cells in lexicographic order.
    pub fn cells(&self) -> Vec<Vec<i64>> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut out = vec![Vec::with_capacity(self.dim())];
        for m in 0..self.dim() {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (self.lo[m]..=self.hi[m]).map(move |c| {
                        let mut p = prefix.clone();
                        p.push(c);
                        p
                    })
                })
                .collect();
        }
        out
    }

    fn wrap(&self, cell: &[i64]) -> Vec<i64> {
        cell.iter()
            .enumerate()
            .map(|(m, &c)| self.lo[m] + (c - self.lo[m]).rem_euclid(self.extent(m)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WrapPolicy {
    /// Edges leaving the window are dropped.
    Open,
    /// Edges leaving the window are kept as [`BoundaryEdge`]s.
    Clamped,
    /// Edges leaving the window wrap around modulo the window extents.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Edge from a window vertex to a vertex outside the window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryEdge {
    pub inner: usize,
    pub outer: LiftedVertex,
    pub weight: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("window is empty")]
    EmptyWindow,
    #[error("window has dimension {got}, graph has d = {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// A finite piece of the lifted graph.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteGraph {
    pub window: CellBox,
    pub period: i64,
    pub vertices: Vec<LiftedVertex>,
    /// Absolute periodic coordinates `i^d = cell·T + dpos` per vertex.
    pub positions: Vec<Vec<i64>>,
    pub edges: Vec<FiniteEdge>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub wrap: WrapPolicy,
    #[serde(skip)]
    index: HashMap<LiftedVertex, usize>,
}

/// Enumerates the window's vertices (lexicographic by cell, then node order)
/// and instantiates every orbit once per cell.
pub fn instantiate_window(
    graph: &LatticeGraph,
    window: &CellBox,
    wrap: WrapPolicy,
) -> Result<FiniteGraph, WindowError> {
    if window.dim() != graph.d() {
        return Err(WindowError::DimensionMismatch {
            got: window.dim(),
            expected: graph.d(),
        });
    }
    if window.is_empty() {
        return Err(WindowError::EmptyWindow);
    }
    let n = graph.node_count();
    let cells = window.cells();
    let mut vertices = Vec::with_capacity(cells.len() * n);
    for cell in &cells {
        for node in 0..n {
            vertices.push(LiftedVertex::new(cell.clone(), node));
        }
    }
    let index: HashMap<LiftedVertex, usize> = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), i))
        .collect();

    // `oriented_edges` yields each orbit forwards, then backwards.
    let oriented: Vec<(bool, _)> = graph
        .oriented_edges()
        .enumerate()
        .map(|(i, e)| (i % 2 == 0, e))
        .collect();
    let mut edges = Vec::new();
    let mut boundary_edges = Vec::new();
    for cell in &cells {
        for (canonical_orientation, e) in &oriented {
            let canonical_orientation = *canonical_orientation;
            let a = index[&LiftedVertex::new(cell.clone(), e.from)];
            let far: Vec<i64> = cell.iter().zip(&e.offset).map(|(c, o)| c + o).collect();
            if window.contains(&far) {
                if canonical_orientation {
                    let b = index[&LiftedVertex::new(far, e.to)];
                    edges.push(FiniteEdge {
                        a,
                        b,
                        weight: e.weight,
                    });
                }
                continue;
            }
            match wrap {
                WrapPolicy::Open => {}
                WrapPolicy::Clamped => boundary_edges.push(BoundaryEdge {
                    inner: a,
                    outer: LiftedVertex::new(far, e.to),
                    weight: e.weight,
                }),
                WrapPolicy::Periodic => {
                    if canonical_orientation {
                        let b = index[&LiftedVertex::new(window.wrap(&far), e.to)];
                        edges.push(FiniteEdge {
                            a,
                            b,
                            weight: e.weight,
                        });
                    }
                }
            }
        }
    }
    let positions = vertices.iter().map(|v| graph_position(graph, v)).collect();
    Ok(FiniteGraph {
        window: window.clone(),
        period: graph.period(),
        vertices,
        positions,
        edges,
        boundary_edges,
        wrap,
        index,
    })
}

/// Absolute periodic coordinates of a lifted vertex.
pub fn graph_position(graph: &LatticeGraph, v: &LiftedVertex) -> Vec<i64> {
    let node = &graph.nodes()[v.node];
    v.cell
        .iter()
        .zip(&node.dpos)
        .map(|(c, p)| c * graph.period() + p)
        .collect()
}

impl FiniteGraph {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn index_of(&self, v: &LiftedVertex) -> Option<usize> {
        self.index.get(v).copied()
    }

    /// Vertices of cell `cell`, in node order.
    pub fn cell_vertices(&self, cell: &[i64]) -> Vec<usize> {
        self.vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.cell == cell)
            .map(|(i, _)| i)
            .collect()
    }

    /// Euclidean distance from each vertex's periodic coordinates to the
    /// boundary of the lattice box `[lo·T, (hi+1)·T]^d` covered by the window.
    pub fn boundary_distances(&self) -> Vec<f64> {
        let t = self.period;
        self.positions
            .iter()
            .map(|x| {
                (0..self.window.dim())
                    .map(|m| {
                        let lo = self.window.lo[m] * t;
                        let hi = (self.window.hi[m] + 1) * t;
                        ((x[m] - lo).min(hi - x[m])) as f64
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Marks vertices whose distance to the window boundary is `< thickness`.
    pub fn boundary_layer(&self, thickness: f64) -> Vec<bool> {
        self.boundary_distances()
            .into_iter()
            .map(|dist| dist < thickness)
            .collect()
    }

    /// Sub-graph keeping only the vertices accepted by `keep`. Edges with a
    /// dropped endpoint are discarded (boundary edges too).
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> FiniteGraph {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut positions = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if keep(i) {
                remap[i] = vertices.len();
                vertices.push(v.clone());
                positions.push(self.positions[i].clone());
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| remap[e.a] != usize::MAX && remap[e.b] != usize::MAX)
            .map(|e| FiniteEdge {
                a: remap[e.a],
                b: remap[e.b],
                weight: e.weight,
            })
            .collect();
        let boundary_edges = self
            .boundary_edges
            .iter()
            .filter(|e| remap[e.inner] != usize::MAX)
            .map(|e| BoundaryEdge {
                inner: remap[e.inner],
                ..e.clone()
            })
            .collect();
        let index = vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i))
            .collect();
        FiniteGraph {
            window: self.window.clone(),
            period: self.period,
            vertices,
            positions,
            edges,
            boundary_edges,
            wrap: self.wrap,
            index,
        }
    }

    /// Adjacency lists `(neighbour, weight)` over interior edges.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for e in &self.edges {
            adj[e.a].push((e.b, e.weight));
            adj[e.b].push((e.a, e.weight));
        }
        adj
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn chain_open_window_is_a_path() {
        let g = fixtures::chain();
        let f = instantiate_window(&g, &CellBox::new(vec![0], vec![3]), WrapPolicy::Open).unwrap();
        assert_eq!(f.vertex_count(), 4);
        assert_eq!(f.edges.len(), 3);
        assert!(f.boundary_edges.is_empty());
        let pos: Vec<i64> = f.positions.iter().map(|p| p[0]).collect();
        assert_eq!(pos, vec![0, 1, 2, 3]);
    }

    #[test]
    fn chain_counts_match_closed_forms() {
        let g = fixtures::chain();
        for lo in -3..=2 {
            for len in 1..=7 {
                let w = CellBox::new(vec![lo], vec![lo + len - 1]);
                let open = instantiate_window(&g, &w, WrapPolicy::Open).unwrap();
                let clamped = instantiate_window(&g, &w, WrapPolicy::Clamped).unwrap();
                let periodic = instantiate_window(&g, &w, WrapPolicy::Periodic).unwrap();
                let len = len as usize;
                assert_eq!(open.vertex_count(), len);
                assert_eq!(open.edges.len(), len - 1);
                assert_eq!(clamped.edges.len(), len - 1);
                assert_eq!(clamped.boundary_edges.len(), 2);
                assert_eq!(periodic.edges.len(), len);
            }
        }
    }

    #[test]
    fn periodic_window_has_one_instance_per_orbit_and_cell() {
        for (_, g) in fixtures::builtin_examples() {
            let w = CellBox::cube(g.d(), 3);
            let f = instantiate_window(&g, &w, WrapPolicy::Periodic).unwrap();
            assert_eq!(f.vertex_count(), w.len() * g.node_count());
            assert_eq!(f.edges.len(), w.len() * g.orbits().len());
        }
    }

    #[test]
    fn example1_boundary_layer() {
        let g = fixtures::builtin("ex1").unwrap();
        let k = 6;
        let f = instantiate_window(&g, &CellBox::cube(1, k), WrapPolicy::Clamped).unwrap();
        let t = g.period();
        let layer = f.boundary_layer(2.0 * t as f64);
        for (i, x) in f.positions.iter().enumerate() {
            let dist = x[0].min(k * t - x[0]);
            assert_eq!(layer[i], dist < 2 * t, "vertex at {x:?}");
        }
        assert!(layer.iter().any(|&b| b) && layer.iter().any(|&b| !b));
        assert!(!f.boundary_edges.is_empty());
    }

    #[test]
    fn empty_window_is_rejected() {
        let g = fixtures::chain();
        assert_eq!(
            instantiate_window(&g, &CellBox::new(vec![1], vec![0]), WrapPolicy::Open).unwrap_err(),
            WindowError::EmptyWindow
        );
    }
}
