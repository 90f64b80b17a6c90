//! In-memory model of a periodic graph `X ⊂ Z^d × {0,…,M-1}^k`.
//!
//! The graph is stored through its fundamental cell: the nodes whose first `d`
//! coordinates lie in `[0, T)` and one representative per translation class of
//! edges (an [`EdgeOrbit`]). Every other node and edge is a `T`-translate of
//! these.

use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::connectivity::{connectedness_certificate, ConnectivityError};

/// A node of the fundamental cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CellNode {
    /// Coordinates along the periodic directions, each in `[0, T)`.
    pub dpos: Vec<i64>,
    /// Coordinates along the bounded cross-section directions, each `>= 0`.
    pub kpos: Vec<i64>,
}

impl CellNode {
    pub fn new(dpos: Vec<i64>, kpos: Vec<i64>) -> Self {
        Self { dpos, kpos }
    }
}

impl fmt::Display for CellNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (n, c) in self.dpos.iter().chain(self.kpos.iter()).enumerate() {
            if n > 0 {
                write!(f, " ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// One undirected periodic family of edges.
///
/// The orbit joins cell node `from` (in cell `0`) with cell node `to` translated
/// by `offset` cells. Endpoints are indices into [`LatticeGraph::nodes`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeOrbit {
    pub from: usize,
    pub to: usize,
    pub offset: Vec<i64>,
    pub weight: f64,
}

/// An orbit seen from one of its endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedEdge {
    pub from: usize,
    pub to: usize,
    pub offset: Vec<i64>,
    pub weight: f64,
}

/// Neighbour of a cell node: the node `node` in the cell translated by `offset`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub node: CellNode,
    pub offset: Vec<i64>,
    pub weight: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("dimension d must be positive")]
    ZeroDimension,
    #[error("period T must be positive")]
    ZeroPeriod,
    #[error("node {node} has {got} coordinates, expected {expected}")]
    CoordinateCount {
        node: String,
        got: usize,
        expected: usize,
    },
    #[error("node {node} lies outside the fundamental cell: {reason}")]
    NodeOutOfRange { node: String, reason: String },
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("orbit endpoint index {0} is not a node")]
    UnknownEndpoint(usize),
    #[error("orbit {0} has offset of wrong length")]
    OffsetLength(String),
    #[error("orbit {orbit} has non-positive or non-finite weight {weight}")]
    BadWeight { orbit: String, weight: f64 },
    #[error("orbit {0} is a self-loop")]
    SelfLoop(String),
    #[error("duplicate orbit {0}")]
    DuplicateOrbit(String),
    #[error("orbit {orbit} given twice with different weights {first} and {second}")]
    AsymmetricWeight {
        orbit: String,
        first: f64,
        second: f64,
    },
    #[error("unknown node {0}")]
    UnknownNode(String),
}

/// A periodic graph described by its fundamental cell.
///
/// Immutable after construction: nodes are sorted lexicographically and every
/// orbit is stored once in canonical orientation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeGraph {
    d: usize,
    k: usize,
    period: i64,
    nodes: Vec<CellNode>,
    orbits: Vec<EdgeOrbit>,
}

/// Puts `(from, to, offset)` in canonical orientation: smaller endpoint first,
/// and for self-orbits the lexicographically positive offset.
fn canonical(from: usize, to: usize, offset: &[i64]) -> (usize, usize, Vec<i64>) {
    let negated: Vec<i64> = offset.iter().map(|o| -o).collect();
    match from.cmp(&to) {
        Ordering::Less => (from, to, offset.to_vec()),
        Ordering::Greater => (to, from, negated),
        Ordering::Equal => {
            if offset >= negated.as_slice() {
                (from, to, offset.to_vec())
            } else {
                (from, to, negated)
            }
        }
    }
}

impl LatticeGraph {
    /// Builds a graph from raw nodes and orbits given as
    /// `(from node, to node, offset, weight)`.
    ///
    /// Nodes are sorted, orbits are re-oriented canonically. Duplicate orbits
    /// (same unordered endpoints and offset) are rejected; a duplicate with a
    /// different weight is reported as [`GraphError::AsymmetricWeight`].
    pub fn new(
        d: usize,
        k: usize,
        period: i64,
        nodes: Vec<CellNode>,
        orbits: Vec<(CellNode, CellNode, Vec<i64>, f64)>,
    ) -> Result<Self, GraphError> {
        if d == 0 {
            return Err(GraphError::ZeroDimension);
        }
        if period <= 0 {
            return Err(GraphError::ZeroPeriod);
        }
        for node in &nodes {
            check_node(node, d, k, period)?;
        }
        let mut sorted = nodes;
        sorted.sort();
        for pair in sorted.windows(2) {
            if pair[0] == pair[1] {
                return Err(GraphError::DuplicateNode(pair[0].to_string()));
            }
        }
        let lookup = |n: &CellNode| sorted.binary_search(n).ok();

        let mut stored: Vec<EdgeOrbit> = Vec::with_capacity(orbits.len());
        for (a, b, offset, weight) in orbits {
            let from = lookup(&a).ok_or_else(|| GraphError::UnknownNode(a.to_string()))?;
            let to = lookup(&b).ok_or_else(|| GraphError::UnknownNode(b.to_string()))?;
            let label = format!("{a} -> {b} {offset:?}");
            if offset.len() != d {
                return Err(GraphError::OffsetLength(label));
            }
            if !(weight.is_finite() && weight > 0.0) {
                return Err(GraphError::BadWeight {
                    orbit: label,
                    weight,
                });
            }
            if from == to && offset.iter().all(|&o| o == 0) {
                return Err(GraphError::SelfLoop(label));
            }
            let (from, to, offset) = canonical(from, to, &offset);
            stored.push(EdgeOrbit {
                from,
                to,
                offset,
                weight,
            });
        }
        stored.sort_by(|x, y| (x.from, x.to, &x.offset).cmp(&(y.from, y.to, &y.offset)));
        for pair in stored.windows(2) {
            let (x, y) = (&pair[0], &pair[1]);
            if (x.from, x.to, &x.offset) == (y.from, y.to, &y.offset) {
                let label = format!("{} -> {} {:?}", sorted[x.from], sorted[x.to], x.offset);
                if x.weight != y.weight {
                    return Err(GraphError::AsymmetricWeight {
                        orbit: label,
                        first: x.weight,
                        second: y.weight,
                    });
                }
                return Err(GraphError::DuplicateOrbit(label));
            }
        }
        Ok(Self {
            d,
            k,
            period,
            nodes: sorted,
            orbits: stored,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The period `T`.
    pub fn period(&self) -> i64 {
        self.period
    }

    /// Cross-section extent `M`: one more than the largest k-coordinate.
    pub fn extent(&self) -> i64 {
        self.nodes
            .iter()
            .flat_map(|n| n.kpos.iter().copied())
            .max()
            .map_or(1, |m| m + 1)
    }

    pub fn nodes(&self) -> &[CellNode] {
        &self.nodes
    }

    pub fn orbits(&self) -> &[EdgeOrbit] {
        &self.orbits
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, node: &CellNode) -> Option<usize> {
        self.nodes.binary_search(node).ok()
    }

    /// Every orbit in both orientations.
    pub fn oriented_edges(&self) -> impl Iterator<Item = OrientedEdge> + '_ {
        self.orbits.iter().flat_map(|o| {
            let back: Vec<i64> = o.offset.iter().map(|x| -x).collect();
            [
                OrientedEdge {
                    from: o.from,
                    to: o.to,
                    offset: o.offset.clone(),
                    weight: o.weight,
                },
                OrientedEdge {
                    from: o.to,
                    to: o.from,
                    offset: back,
                    weight: o.weight,
                },
            ]
        })
    }

    /// Geometric displacement `(to.dpos + offset·T − from.dpos, to.kpos − from.kpos)`.
    pub fn displacement(&self, from: usize, to: usize, offset: &[i64]) -> Vec<i64> {
        let (a, b) = (&self.nodes[from], &self.nodes[to]);
        let mut disp: Vec<i64> = (0..self.d)
            .map(|m| b.dpos[m] + offset[m] * self.period - a.dpos[m])
            .collect();
        disp.extend((0..self.k).map(|m| b.kpos[m] - a.kpos[m]));
        disp
    }

    /// Periodic-direction part of the displacement.
    pub fn d_displacement(&self, from: usize, to: usize, offset: &[i64]) -> Vec<i64> {
        let (a, b) = (&self.nodes[from], &self.nodes[to]);
        (0..self.d)
            .map(|m| b.dpos[m] + offset[m] * self.period - a.dpos[m])
            .collect()
    }

    /// Interaction range `R`: the largest max-norm of an edge displacement.
    pub fn range(&self) -> i64 {
        self.orbits
            .iter()
            .map(|o| {
                self.displacement(o.from, o.to, &o.offset)
                    .iter()
                    .map(|x| x.abs())
                    .max()
                    .unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }

    pub fn min_weight(&self) -> f64 {
        self.orbits
            .iter()
            .map(|o| o.weight)
            .fold(f64::INFINITY, f64::min)
    }

    /// Both orientations of every orbit incident to `node`.
    pub fn neighbors(&self, node: &CellNode) -> Result<Vec<Neighbor>, GraphError> {
        let p = self
            .node_index(node)
            .ok_or_else(|| GraphError::UnknownNode(node.to_string()))?;
        Ok(self
            .oriented_edges()
            .filter(|e| e.from == p)
            .map(|e| Neighbor {
                node: self.nodes[e.to].clone(),
                offset: e.offset,
                weight: e.weight,
            })
            .collect())
    }

    /// Same graph with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut g = self.clone();
        for o in &mut g.orbits {
            o.weight *= factor;
        }
        g
    }

    /// Same graph with the weight of orbit `index` replaced.
    pub fn with_weight(&self, index: usize, weight: f64) -> Self {
        let mut g = self.clone();
        g.orbits[index].weight = weight;
        g
    }
}

fn check_node(node: &CellNode, d: usize, k: usize, period: i64) -> Result<(), GraphError> {
    let count = node.dpos.len() + node.kpos.len();
    if node.dpos.len() != d || node.kpos.len() != k {
        return Err(GraphError::CoordinateCount {
            node: node.to_string(),
            got: count,
            expected: d + k,
        });
    }
    if let Some(c) = node.dpos.iter().find(|&&c| c < 0 || c >= period) {
        return Err(GraphError::NodeOutOfRange {
            node: node.to_string(),
            reason: format!("periodic coordinate {c} not in [0, {period})"),
        });
    }
    if let Some(c) = node.kpos.iter().find(|&&c| c < 0) {
        return Err(GraphError::NodeOutOfRange {
            node: node.to_string(),
            reason: format!("cross-section coordinate {c} is negative"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of checking the standing assumptions on a graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Interaction range `R`.
    pub range: i64,
    pub period: i64,
    pub extent: i64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks node ranges, weight positivity, the range bound `R <= T`, and
/// connectedness. Failures are reported, never raised.
pub fn validate(graph: &LatticeGraph) -> ValidationReport {
    let mut checks = Vec::new();

    let bad_node = graph
        .nodes
        .iter()
        .find_map(|n| check_node(n, graph.d, graph.k, graph.period).err());
    checks.push(Check {
        name: "node_ranges",
        passed: bad_node.is_none() && !graph.nodes.is_empty(),
        detail: match (&bad_node, graph.nodes.is_empty()) {
            (Some(e), _) => e.to_string(),
            (None, true) => "no nodes".into(),
            (None, false) => format!("{} cell nodes", graph.nodes.len()),
        },
    });

    let bad_weight = graph
        .orbits
        .iter()
        .find(|o| !(o.weight.is_finite() && o.weight > 0.0));
    checks.push(Check {
        name: "weights",
        passed: bad_weight.is_none(),
        detail: match bad_weight {
            Some(o) => format!("weight {} is not positive", o.weight),
            None => format!("{} orbits, all weights positive", graph.orbits.len()),
        },
    });

    let range = graph.range();
    checks.push(Check {
        name: "range_bound",
        passed: range <= graph.period,
        detail: format!("R = {range}, T = {}", graph.period),
    });

    let connectivity = if graph.nodes.is_empty() {
        Err(ConnectivityError::Empty)
    } else {
        connectedness_certificate(graph).map(|_| ())
    };
    checks.push(Check {
        name: "connectedness",
        passed: connectivity.is_ok(),
        detail: match connectivity {
            Ok(()) => "connected".into(),
            Err(e) => e.to_string(),
        },
    });

    ValidationReport {
        checks,
        range,
        period: graph.period,
        extent: graph.extent(),
    }
}
