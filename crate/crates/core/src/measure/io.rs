//! CSV form of measures.
//!
//! Discrete: header `x0,..,x{d-1},weight`, one atom per row.
//! Grid: a `# origin=..;cell_width=..` comment line, then header
//! `k0,..,k{d-1},mass`, one cell per row. Floats use the shortest
//! round-tripping representation.

use std::fmt::Write as _;

use super::{DiscreteSignedMeasure, GridSignedMeasure};
use crate::error::{Error, Result};

pub fn discrete_to_csv(mu: &DiscreteSignedMeasure) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..mu.dim()).map(|i| format!("x{i}")).collect();
    let _ = writeln!(out, "{},weight", header.join(","));
    for (x, w) in mu.atoms() {
        for v in x {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{w}");
    }
    out
}

pub fn grid_to_csv(g: &GridSignedMeasure) -> String {
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    let _ = writeln!(out, "# origin={};cell_width={}", join(g.origin()), join(g.cell_width()));
    let header: Vec<String> = (0..g.dim()).map(|i| format!("k{i}")).collect();
    let _ = writeln!(out, "{},mass", header.join(","));
    for (k, m) in g.cells() {
        for v in k {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{m}");
    }
    out
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("line {line}: cannot parse '{s}' as a number")))
}

pub fn discrete_from_csv(text: &str) -> Result<DiscreteSignedMeasure> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Empty("csv header"))?;
    let dim = header.split(',').count().saturating_sub(1);
    if dim == 0 {
        return Err(Error::invalid("csv header has no position columns"));
    }
    let mut positions = Vec::new();
    let mut weights = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::invalid(format!("line {}: expected {} fields", n + 1, dim + 1)));
        }
        for f in &fields[..dim] {
            positions.push(parse_f64(f, n + 1)?);
        }
        weights.push(parse_f64(fields[dim], n + 1)?);
    }
    DiscreteSignedMeasure::new(dim, positions, weights)
}

pub fn grid_from_csv(text: &str) -> Result<GridSignedMeasure> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, meta) = lines.next().ok_or(Error::Empty("csv metadata"))?;
    let meta = meta
        .strip_prefix('#')
        .ok_or_else(|| Error::invalid("grid csv must start with an origin/cell_width comment"))?;
    let mut origin = None;
    let mut width = None;
    for part in meta.split(';') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::invalid("malformed grid metadata"))?;
        let vals = v
            .split_whitespace()
            .map(|s| parse_f64(s, 1))
            .collect::<Result<Vec<_>>>()?;
        match k.trim() {
            "origin" => origin = Some(vals),
            "cell_width" => width = Some(vals),
            other => return Err(Error::invalid(format!("unknown grid metadata key '{other}'"))),
        }
    }
    let mut grid = GridSignedMeasure::new(
        origin.ok_or_else(|| Error::invalid("missing origin"))?,
        width.ok_or_else(|| Error::invalid("missing cell_width"))?,
    )?;
    let dim = grid.dim();
    lines.next().ok_or(Error::Empty("csv header"))?;
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::invalid(format!("line {}: expected {} fields", n + 1, dim + 1)));
        }
        let idx = fields[..dim]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<i64>()
                    .map_err(|_| Error::invalid(format!("line {}: bad cell index '{f}'", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        grid.add_mass(idx, parse_f64(fields[dim], n + 1)?)?;
    }
    Ok(grid)
}
