//! Canonical line-oriented instance records.
//!
//! ```text
//! NAME uniform-7-0
//! KIND CVRP
//! N 3
//! CAPACITY 4.0000000000000000e1
//! DEPOT 0
//! NODES
//! <x> <y> <raw demand>
//! ...
//! END
//! ```
//!
//! Field order is fixed. Numbers use 17 significant digits so values
//! survive a write/read cycle exactly. `NAME` and `DEPOT` are optional
//! (TSP records carry `CAPACITY 0` and zero demands).

use std::fmt::Write as _;

use crate::instance::{InstanceMeta, ProblemKind, VrpInstance};
use crate::{Error, Result};

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_instance(inst: &VrpInstance, out: &mut String) {
    if !inst.meta.source.is_empty() {
        let _ = writeln!(out, "NAME {}", inst.meta.source);
    }
    let _ = writeln!(out, "KIND {}", inst.kind().to_string().to_uppercase());
    let _ = writeln!(out, "N {}", inst.n());
    let capacity = inst.capacitated().map_or(0.0, |c| c.raw_capacity);
    let _ = writeln!(out, "CAPACITY {}", num(capacity));
    if let Some(c) = inst.capacitated() {
        let _ = writeln!(out, "DEPOT {}", c.depot);
    }
    out.push_str("NODES\n");
    for (i, p) in inst.coords().iter().enumerate() {
        let d = inst.capacitated().map_or(0.0, |c| c.raw_demands[i]);
        let _ = writeln!(out, "{} {} {}", num(p[0]), num(p[1]), num(d));
    }
    out.push_str("END\n");
}

pub fn to_text(instances: &[VrpInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        write_instance(inst, &mut out);
    }
    out
}

fn value<'a>(line: &'a str, key: &str, lineno: usize) -> Result<&'a str> {
    line.strip_prefix(key)
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| Error::parse(lineno, format!("expected `{key} <value>`, got `{line}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, lineno: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(lineno, format!("bad number `{s}`")))
}

/// Parses every record in `text`.
pub fn from_text(text: &str) -> Result<Vec<VrpInstance>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let mut out = Vec::new();
    while let Some(&(lineno, _)) = lines.peek() {
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(lineno, format!("record ends before {what}")))
        };
        let (mut ln, mut line) = next("KIND")?;
        let mut name = String::new();
        if line.starts_with("NAME") {
            name = line["NAME".len()..].trim().to_string();
            (ln, line) = next("KIND")?;
        }
        let kind: ProblemKind = value(line, "KIND", ln)?
            .parse()
            .map_err(|_| Error::parse(ln, format!("unknown kind in `{line}`")))?;
        let (ln, line) = next("N")?;
        let n: usize = parse_num(value(line, "N", ln)?, ln)?;
        let (ln, line) = next("CAPACITY")?;
        let capacity: f64 = parse_num(value(line, "CAPACITY", ln)?, ln)?;
        let (mut ln, mut line) = next("NODES")?;
        let mut depot = 0;
        if line.starts_with("DEPOT") {
            depot = parse_num(value(line, "DEPOT", ln)?, ln)?;
            (ln, line) = next("NODES")?;
        }
        if line != "NODES" {
            return Err(Error::parse(ln, format!("expected NODES, got `{line}`")));
        }
        let mut coords = Vec::with_capacity(n);
        let mut demands = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, line) = next("END")?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::parse(ln, format!("expected `x y demand`, got `{line}`")));
            }
            coords.push([parse_num(f[0], ln)?, parse_num(f[1], ln)?]);
            demands.push(parse_num::<f64>(f[2], ln)?);
        }
        let (ln, line) = next("END")?;
        if line != "END" {
            return Err(Error::parse(ln, format!("expected END, got `{line}`")));
        }
        let inst = match kind {
            ProblemKind::Tsp => VrpInstance::tsp(coords),
            ProblemKind::Cvrp => VrpInstance::cvrp(coords, depot, demands, capacity),
        }
        .map_err(|e| Error::parse(ln, e.to_string()))?;
        out.push(inst.with_meta(InstanceMeta {
            source: name,
            ..InstanceMeta::default()
        }));
    }
    Ok(out)
}
