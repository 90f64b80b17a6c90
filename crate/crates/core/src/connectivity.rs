//! Connectedness of the infinite periodic graph.
//!
//! The lifted graph is connected iff the quotient multigraph on cell nodes is
//! connected and the offsets of its closed walks generate all of `Z^d`. The
//! second condition is decided exactly with a Hermite normal form.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::graph::LatticeGraph;

/// A node of the infinite graph: cell node `node` translated by `cell`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LiftedVertex {
    pub cell: Vec<i64>,
    pub node: usize,
}

impl LiftedVertex {
    pub fn new(cell: Vec<i64>, node: usize) -> Self {
        Self { cell, node }
    }

    pub fn origin(d: usize, node: usize) -> Self {
        Self {
            cell: vec![0; d],
            node,
        }
    }
}

/// Shortest path from `from` (cell 0) to `to` translated by `translation`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub from: usize,
    pub to: usize,
    pub translation: Vec<i64>,
    pub path: Vec<LiftedVertex>,
}

impl Witness {
    /// Number of edges on the path.
    pub fn length(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectivityCertificate {
    /// Hermite basis of the closed-walk offset lattice (the identity when connected).
    pub lattice_basis: Vec<Vec<i64>>,
    /// One witness per ordered pair of cell nodes and unit translation `e_m`.
    pub witnesses: Vec<Witness>,
}

impl ConnectivityCertificate {
    pub fn witness(&self, from: usize, to: usize, axis: usize) -> Option<&Witness> {
        self.witnesses
            .iter()
            .find(|w| w.from == from && w.to == to && w.translation[axis] == 1)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Serialize)]
pub enum ConnectivityError {
    #[error("graph has no nodes")]
    Empty,
    #[error("quotient graph is disconnected; unreachable component {component:?}")]
    QuotientDisconnected { component: Vec<String> },
    #[error("closed-walk offsets span a proper sublattice with basis {basis:?} (index {index:?})")]
    ProperSublattice {
        basis: Vec<Vec<i64>>,
        /// Determinant of the basis; `None` when the rank is below `d`.
        index: Option<i64>,
    },
    #[error("witness search exceeded {0} visited vertices")]
    SearchLimit(usize),
}

const SEARCH_LIMIT: usize = 2_000_000;

/// Row-style Hermite normal form of an integer matrix.
///
/// Returns the nonzero rows, upper triangular with positive pivots and entries
/// above each pivot reduced into `[0, pivot)`. The rows span the same subgroup
/// of `Z^d` as the input.
pub fn hermite_normal_form(mut rows: Vec<Vec<i64>>, d: usize) -> Vec<Vec<i64>> {
    let mut pivot = 0;
    for col in 0..d {
        if pivot == rows.len() {
            break;
        }
        loop {
            let best = (pivot..rows.len())
                .filter(|&i| rows[i][col] != 0)
                .min_by_key(|&i| rows[i][col].abs());
            let Some(best) = best else { break };
            rows.swap(pivot, best);
            let mut done = true;
            for i in pivot + 1..rows.len() {
                let q = rows[i][col] / rows[pivot][col];
                if q != 0 {
                    for c in 0..d {
                        rows[i][c] -= q * rows[pivot][c];
                    }
                }
                if rows[i][col] != 0 {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        if rows[pivot][col] == 0 {
            continue;
        }
        if rows[pivot][col] < 0 {
            for c in 0..d {
                rows[pivot][c] = -rows[pivot][c];
            }
        }
        let p = rows[pivot][col];
        for i in 0..pivot {
            let q = rows[i][col].div_euclid(p);
            if q != 0 {
                for c in 0..d {
                    rows[i][c] -= q * rows[pivot][c];
                }
            }
        }
        pivot += 1;
    }
    rows.truncate(pivot);
    rows
}

fn adjacency(graph: &LatticeGraph) -> Vec<Vec<(usize, Vec<i64>)>> {
    let mut adj = vec![Vec::new(); graph.node_count()];
    for e in graph.oriented_edges() {
        adj[e.from].push((e.to, e.offset));
    }
    for list in &mut adj {
        list.sort();
    }
    adj
}

fn add(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Breadth-first shortest paths in the lifted graph from `source` to each of
/// `targets`, visiting only vertices accepted by `allowed`.
///
/// Neighbours are explored in a fixed order, so the returned paths are
/// deterministic. `None` marks an unreachable target.
pub fn shortest_paths(
    graph: &LatticeGraph,
    source: &LiftedVertex,
    targets: &[LiftedVertex],
    allowed: impl Fn(&LiftedVertex) -> bool,
) -> Result<Vec<Option<Vec<LiftedVertex>>>, ConnectivityError> {
    let adj = adjacency(graph);
    let mut parent: HashMap<LiftedVertex, Option<LiftedVertex>> = HashMap::new();
    let mut queue = VecDeque::new();
    parent.insert(source.clone(), None);
    queue.push_back(source.clone());
    let mut remaining = targets.iter().filter(|t| *t != source).count();
    while let Some(v) = queue.pop_front() {
        if remaining == 0 {
            break;
        }
        for (to, offset) in &adj[v.node] {
            let w = LiftedVertex::new(add(&v.cell, offset), *to);
            if parent.contains_key(&w) || !allowed(&w) {
                continue;
            }
            if targets.contains(&w) {
                remaining -= 1;
            }
            parent.insert(w.clone(), Some(v.clone()));
            queue.push_back(w);
        }
        if parent.len() > SEARCH_LIMIT {
            return Err(ConnectivityError::SearchLimit(SEARCH_LIMIT));
        }
    }
    Ok(targets
        .iter()
        .map(|t| {
            parent.get(t)?;
            let mut path = vec![t.clone()];
            let mut cur = t.clone();
            while let Some(Some(p)) = parent.get(&cur) {
                path.push(p.clone());
                cur = p.clone();
            }
            path.reverse();
            Some(path)
        })
        .collect())
}

/// Decides connectedness of the infinite graph and, when connected, returns
/// witness paths for every ordered pair of cell nodes and unit translation.
pub fn connectedness_certificate(
    graph: &LatticeGraph,
) -> Result<ConnectivityCertificate, ConnectivityError> {
    let n = graph.node_count();
    let d = graph.d();
    if n == 0 {
        return Err(ConnectivityError::Empty);
    }
    let adj = adjacency(graph);

    // Spanning tree of the quotient; `cell[p]` is where p sits in the lift.
    let mut cell: Vec<Option<Vec<i64>>> = vec![None; n];
    cell[0] = Some(vec![0; d]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(p) = queue.pop_front() {
        let here = cell[p].clone().expect("queued nodes are placed");
        for (q, offset) in &adj[p] {
            if cell[*q].is_none() {
                cell[*q] = Some(add(&here, offset));
                queue.push_back(*q);
            }
        }
    }
    if cell.iter().any(Option::is_none) {
        let component = (0..n)
            .filter(|&p| cell[p].is_none())
            .map(|p| graph.nodes()[p].to_string())
            .collect();
        return Err(ConnectivityError::QuotientDisconnected { component });
    }
    let cell: Vec<Vec<i64>> = cell.into_iter().map(Option::unwrap).collect();

    let generators: Vec<Vec<i64>> = graph
        .orbits()
        .iter()
        .map(|o| {
            (0..d)
                .map(|m| cell[o.from][m] + o.offset[m] - cell[o.to][m])
                .collect::<Vec<i64>>()
        })
        .filter(|g| g.iter().any(|&x| x != 0))
        .collect();
    let basis = hermite_normal_form(generators, d);
    let index = (basis.len() == d).then(|| (0..d).map(|m| basis[m][m]).product::<i64>());
    if index != Some(1) {
        return Err(ConnectivityError::ProperSublattice { basis, index });
    }

    let mut witnesses = Vec::with_capacity(n * n * d);
    for from in 0..n {
        let targets: Vec<LiftedVertex> = (0..n)
            .flat_map(|to| {
                (0..d).map(move |m| {
                    let mut c = vec![0; d];
                    c[m] = 1;
                    LiftedVertex::new(c, to)
                })
            })
            .collect();
        let paths = shortest_paths(graph, &LiftedVertex::origin(d, from), &targets, |_| true)?;
        for (target, path) in targets.into_iter().zip(paths) {
            let path = path.expect("connected lift reaches every translate");
            witnesses.push(Witness {
                from,
                to: target.node,
                translation: target.cell,
                path,
            });
        }
    }
    Ok(ConnectivityCertificate {
        lattice_basis: basis,
        witnesses,
    })
}

/// Brute-force connectedness test: breadth-first search from node 0 inside
/// the cell window `[-radius, radius]^d`, succeeding when every cell node is
/// reached both in cell 0 and in each unit translate `e_m`.
pub fn bfs_connected_in_window(graph: &LatticeGraph, radius: i64) -> bool {
    let n = graph.node_count();
    let d = graph.d();
    if n == 0 {
        return false;
    }
    let mut targets = Vec::new();
    for q in 0..n {
        targets.push(LiftedVertex::origin(d, q));
        for m in 0..d {
            let mut c = vec![0; d];
            c[m] = 1;
            targets.push(LiftedVertex::new(c, q));
        }
    }
    match shortest_paths(graph, &LiftedVertex::origin(d, 0), &targets, |v| {
        v.cell.iter().all(|c| c.abs() <= radius)
    }) {
        Ok(paths) => paths.iter().all(Option::is_some),
        Err(_) => false,
    }
}
