//! The LGF text format.
//!
//! ```text
//! # comment
//! d 1
//! k 1
//! T 1
//! node 0 0
//! node 0 1
//! edge (0 0) (0 1)+1 1.0
//! ```
//!
//! Header lines `d`, `k`, `T` come first, in that order. A node line lists the
//! `d` periodic coordinates followed by the `k` cross-section coordinates. An
//! edge line joins two declared nodes; the optional signed offsets after the
//! second endpoint translate it by whole cells (one per periodic direction,
//! omitted means zero). The last field is the positive weight.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{CellNode, GraphError, LatticeGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParseErrorKind {
    Syntax,
    RangeViolation,
    DuplicateNode,
    DuplicateOrbit,
    AsymmetricWeight,
    MissingHeader,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Parse failure with a 1-based position into the input.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("line {line}, column {column}: {kind}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

struct Line<'a> {
    number: usize,
    text: &'a str,
}

impl Line<'_> {
    fn error(&self, at: &str, kind: ParseErrorKind, message: impl Into<String>) -> ParseError {
        // `at` is always a sub-slice of `text`.
        let column = at.as_ptr() as usize - self.text.as_ptr() as usize + 1;
        ParseError {
            line: self.number,
            column,
            kind,
            message: message.into(),
        }
    }
}

fn parse_int<'a>(line: &Line<'a>, token: &'a str) -> Result<i64, ParseError> {
    token.parse().map_err(|_| {
        line.error(
            token,
            ParseErrorKind::Syntax,
            format!("expected an integer, found `{token}`"),
        )
    })
}

/// Splits `s` into whitespace/comma separated tokens, keeping sub-slices.
fn tokens(s: &str) -> Vec<&str> {
    s.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .collect()
}

struct Header {
    d: usize,
    k: usize,
    period: i64,
}

fn parse_header(lines: &[Line<'_>]) -> Result<Header, ParseError> {
    let mut values = [0i64; 3];
    for (slot, key) in ["d", "k", "T"].iter().enumerate() {
        let Some(line) = lines.get(slot) else {
            let number = lines.last().map_or(1, |l| l.number + 1);
            return Err(ParseError {
                line: number,
                column: 1,
                kind: ParseErrorKind::MissingHeader,
                message: format!("missing header line `{key} <int>`"),
            });
        };
        let toks = tokens(line.text);
        if toks.first() != Some(key) {
            return Err(line.error(
                toks.first().copied().unwrap_or(line.text),
                ParseErrorKind::MissingHeader,
                format!("expected header line `{key} <int>`"),
            ));
        }
        if toks.len() != 2 {
            return Err(line.error(
                toks.get(2).copied().unwrap_or(toks[0]),
                ParseErrorKind::Syntax,
                format!("header `{key}` takes exactly one integer"),
            ));
        }
        let v = parse_int(line, toks[1])?;
        let minimum = if *key == "k" { 0 } else { 1 };
        if v < minimum {
            return Err(line.error(
                toks[1],
                ParseErrorKind::RangeViolation,
                format!("`{key}` must be at least {minimum}"),
            ));
        }
        values[slot] = v;
    }
    Ok(Header {
        d: values[0] as usize,
        k: values[1] as usize,
        period: values[2],
    })
}

fn parse_coords<'a>(
    line: &Line<'a>,
    toks: &[&'a str],
    header: &Header,
    at: &'a str,
) -> Result<CellNode, ParseError> {
    if toks.len() != header.d + header.k {
        return Err(line.error(
            at,
            ParseErrorKind::Syntax,
            format!(
                "expected {} coordinates, found {}",
                header.d + header.k,
                toks.len()
            ),
        ));
    }
    let mut coords = Vec::with_capacity(toks.len());
    for t in toks {
        coords.push(parse_int(line, t)?);
    }
    let kpos = coords.split_off(header.d);
    Ok(CellNode::new(coords, kpos))
}

/// Returns the parenthesised group starting at the beginning of `s` and the
/// rest of the string.
fn paren_group<'a>(line: &Line<'a>, s: &'a str) -> Result<(&'a str, &'a str), ParseError> {
    let s = s.trim_start();
    if !s.starts_with('(') {
        return Err(line.error(
            if s.is_empty() { line.text.trim_end() } else { s },
            ParseErrorKind::Syntax,
            "expected `(` starting a node",
        ));
    }
    let close = s.find(')').ok_or_else(|| {
        line.error(s, ParseErrorKind::Syntax, "unterminated node coordinates")
    })?;
    Ok((&s[1..close], &s[close + 1..]))
}

fn parse_offset<'a>(line: &Line<'a>, s: &'a str, d: usize) -> Result<Vec<i64>, ParseError> {
    if s.is_empty() {
        return Ok(vec![0; d]);
    }
    let mut out = Vec::new();
    let mut rest = s;
    while !rest.is_empty() {
        if !(rest.starts_with('+') || rest.starts_with('-')) {
            return Err(line.error(rest, ParseErrorKind::Syntax, "offsets must be signed integers like `+1`"));
        }
        let end = rest[1..]
            .find(['+', '-'])
            .map_or(rest.len(), |p| p + 1);
        let tok = &rest[..end];
        out.push(parse_int(line, tok)?);
        rest = &rest[end..];
    }
    if out.len() != d {
        return Err(line.error(
            s,
            ParseErrorKind::Syntax,
            format!("expected {d} offset components, found {}", out.len()),
        ));
    }
    Ok(out)
}

/// Parses LGF text into a [`LatticeGraph`].
pub fn parse(text: &str) -> Result<LatticeGraph, ParseError> {
    let lines: Vec<Line<'_>> = text
        .lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let content = raw.split('#').next().unwrap_or("");
            (!content.trim().is_empty()).then_some(Line {
                number: i + 1,
                text: content,
            })
        })
        .collect();
    let header = parse_header(&lines)?;

    let mut nodes: HashMap<CellNode, usize> = HashMap::new();
    let mut node_list = Vec::new();
    let mut orbits: Vec<(CellNode, CellNode, Vec<i64>, f64)> = Vec::new();
    // canonical key -> (line, weight)
    let mut seen: HashMap<(CellNode, CellNode, Vec<i64>), (usize, f64)> = HashMap::new();

    for line in &lines[3..] {
        let trimmed = line.text.trim_start();
        let keyword_end = trimmed
            .find(|c: char| c.is_whitespace() || c == '(')
            .unwrap_or(trimmed.len());
        let keyword = &trimmed[..keyword_end];
        let rest = &trimmed[keyword_end..];
        match keyword {
            "node" => {
                let toks = tokens(rest);
                let node = parse_coords(line, &toks, &header, keyword)?;
                check_range(line, &node, &header, keyword)?;
                if let Some(first) = nodes.get(&node) {
                    return Err(line.error(
                        keyword,
                        ParseErrorKind::DuplicateNode,
                        format!("node {node} already declared on line {first}"),
                    ));
                }
                nodes.insert(node.clone(), line.number);
                node_list.push(node);
            }
            "edge" => {
                let (first, rest) = paren_group(line, rest)?;
                let a = parse_coords(line, &tokens(first), &header, first)?;
                let (second, rest) = paren_group(line, rest)?;
                let b = parse_coords(line, &tokens(second), &header, second)?;
                let toks = tokens(rest);
                let (offset_tok, weight_tok) = match (rest.starts_with(['+', '-']), toks.len()) {
                    (true, 2) => (toks[0], toks[1]),
                    (false, 1) => ("", toks[0]),
                    _ => {
                        return Err(line.error(
                            toks.first().copied().unwrap_or(second),
                            ParseErrorKind::Syntax,
                            "expected `<offset> <weight>` after the second node",
                        ))
                    }
                };
                let offset = parse_offset(line, offset_tok, header.d)?;
                for (node, at) in [(&a, first), (&b, second)] {
                    if !nodes.contains_key(node) {
                        return Err(line.error(
                            at,
                            ParseErrorKind::Syntax,
                            format!("edge references undeclared node {node}"),
                        ));
                    }
                }
                let weight: f64 = weight_tok.parse().map_err(|_| {
                    line.error(
                        weight_tok,
                        ParseErrorKind::Syntax,
                        format!("expected a decimal weight, found `{weight_tok}`"),
                    )
                })?;
                if !(weight.is_finite() && weight > 0.0) {
                    return Err(line.error(
                        weight_tok,
                        ParseErrorKind::RangeViolation,
                        "edge weights must be positive",
                    ));
                }
                if a == b && offset.iter().all(|&o| o == 0) {
                    return Err(line.error(
                        keyword,
                        ParseErrorKind::RangeViolation,
                        "edge joins a node to itself",
                    ));
                }
                let neg: Vec<i64> = offset.iter().map(|o| -o).collect();
                let key = if (&a, &offset) <= (&b, &neg) {
                    (a.clone(), b.clone(), offset.clone())
                } else {
                    (b.clone(), a.clone(), neg)
                };
                if let Some(&(first_line, first_weight)) = seen.get(&key) {
                    let kind = if first_weight == weight {
                        ParseErrorKind::DuplicateOrbit
                    } else {
                        ParseErrorKind::AsymmetricWeight
                    };
                    return Err(line.error(
                        keyword,
                        kind,
                        format!("orbit already given on line {first_line} with weight {first_weight:?}"),
                    ));
                }
                seen.insert(key, (line.number, weight));
                orbits.push((a, b, offset, weight));
            }
            _ => {
                let at = if keyword.is_empty() { trimmed } else { keyword };
                return Err(line.error(
                    at,
                    ParseErrorKind::Syntax,
                    format!("unknown directive `{keyword}`"),
                ));
            }
        }
    }

    LatticeGraph::new(header.d, header.k, header.period, node_list, orbits).map_err(|e| {
        let kind = match e {
            GraphError::DuplicateNode(_) => ParseErrorKind::DuplicateNode,
            GraphError::DuplicateOrbit(_) => ParseErrorKind::DuplicateOrbit,
            GraphError::AsymmetricWeight { .. } => ParseErrorKind::AsymmetricWeight,
            GraphError::UnknownNode(_) | GraphError::OffsetLength(_) => ParseErrorKind::Syntax,
            _ => ParseErrorKind::RangeViolation,
        };
        ParseError {
            line: 0,
            column: 0,
            kind,
            message: e.to_string(),
        }
    })
}

fn check_range<'a>(
    line: &Line<'a>,
    node: &CellNode,
    header: &Header,
    at: &'a str,
) -> Result<(), ParseError> {
    if node.dpos.iter().any(|&c| c < 0 || c >= header.period) {
        return Err(line.error(
            at,
            ParseErrorKind::RangeViolation,
            format!(
                "periodic coordinates of {node} must lie in [0, {})",
                header.period
            ),
        ));
    }
    if node.kpos.iter().any(|&c| c < 0) {
        return Err(line.error(
            at,
            ParseErrorKind::RangeViolation,
            format!("cross-section coordinates of {node} must be non-negative"),
        ));
    }
    Ok(())
}

fn coords(node: &CellNode) -> String {
    let parts: Vec<String> = node
        .dpos
        .iter()
        .chain(&node.kpos)
        .map(i64::to_string)
        .collect();
    parts.join(" ")
}

/// Canonical LGF text: header, sorted nodes, canonically oriented sorted
/// orbits. Zero offsets are omitted.
pub fn serialize(graph: &LatticeGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "d {}", graph.d());
    let _ = writeln!(out, "k {}", graph.k());
    let _ = writeln!(out, "T {}", graph.period());
    for node in graph.nodes() {
        let _ = writeln!(out, "node {}", coords(node));
    }
    for orbit in graph.orbits() {
        let offset: String = if orbit.offset.iter().all(|&o| o == 0) {
            String::new()
        } else {
            orbit.offset.iter().map(|o| format!("{o:+}")).collect()
        };
        let _ = writeln!(
            out,
            "edge ({}) ({}){} {:?}",
            coords(&graph.nodes()[orbit.from]),
            coords(&graph.nodes()[orbit.to]),
            offset,
            orbit.weight
        );
    }
    out
}
