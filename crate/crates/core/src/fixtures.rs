//! Bundled example graphs.

use crate::graph::LatticeGraph;
use crate::lgf;

/// A bundled LGF source.
#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub description: &'static str,
    pub source: &'static str,
}

pub const FIXTURES: &[Fixture] = &[
    Fixture {
        name: "chain",
        description: "unit chain on Z",
        source: include_str!("../fixtures/chain.lgf"),
    },
    Fixture {
        name: "ex1",
        description: "height-3 strip with holes at even sites of the middle row",
        source: include_str!("../fixtures/ex1.lgf"),
    },
    Fixture {
        name: "ex2",
        description: "rungs and crossed diagonals",
        source: include_str!("../fixtures/ex2.lgf"),
    },
    Fixture {
        name: "ex3",
        description: "two rails with slanted rungs",
        source: include_str!("../fixtures/ex3.lgf"),
    },
    Fixture {
        name: "ex4",
        description: "ladder with one diagonal family",
        source: include_str!("../fixtures/ex4.lgf"),
    },
    Fixture {
        name: "ex5",
        description: "segment followed by a rhombus, period 4",
        source: include_str!("../fixtures/ex5.lgf"),
    },
    Fixture {
        name: "ex6",
        description: "double helix over a square cross-section",
        source: include_str!("../fixtures/ex6.lgf"),
    },
];

pub fn fixture(name: &str) -> Option<&'static Fixture> {
    FIXTURES.iter().find(|f| f.name == name)
}

/// Parses the bundled graph called `name`.
pub fn builtin(name: &str) -> Option<LatticeGraph> {
    fixture(name).map(|f| lgf::parse(f.source).expect("bundled fixture parses"))
}

pub fn chain() -> LatticeGraph {
    builtin("chain").expect("chain fixture")
}

/// The six worked examples, `ex1` to `ex6`.
pub fn builtin_examples() -> Vec<(&'static str, LatticeGraph)> {
    FIXTURES
        .iter()
        .filter(|f| f.name.starts_with("ex"))
        .map(|f| (f.name, lgf::parse(f.source).expect("bundled fixture parses")))
        .collect()
}
