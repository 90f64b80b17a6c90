//! Homogenized quadratic energies of periodic graphs living on cylindrical
//! subsets `Z^d x {0..M-1}^k` of the lattice.

pub mod asymptotic;
pub mod bvp;
pub mod cell;
pub mod coarse;
pub mod connectivity;
pub mod fixtures;
pub mod graph;
pub mod lgf;
pub mod linalg;
pub mod window;

use serde::Serialize;

pub use graph::{validate, CellNode, EdgeOrbit, GraphError, LatticeGraph, ValidationReport};
pub use lgf::{parse, serialize, ParseError, ParseErrorKind};

/// How undirected edges enter an energy.
///
/// `Double` sums over ordered pairs, so each edge contributes twice; `Single`
/// counts each edge once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    #[default]
    Double,
    Single,
}

impl Convention {
    pub fn factor(self) -> f64 {
        match self {
            Convention::Double => 2.0,
            Convention::Single => 1.0,
        }
    }
}
