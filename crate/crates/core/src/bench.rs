//! TSPLIB / CVRPLIB ingestion, the known-optimum registry, TSPLIB-style
//! integer costs and result reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::instance::{canonical_cost, check_feasible, InstanceMeta, Point, ProblemKind, VrpInstance};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownOptimum {
    pub value: f64,
    pub source: String,
}

/// A parsed benchmark file in raw and normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkInstance {
    pub name: String,
    pub raw: VrpInstance,
    pub normalized: VrpInstance,
    pub known_optimum: Option<KnownOptimum>,
}

impl BenchmarkInstance {
    fn new(name: String, raw: VrpInstance) -> Result<Self> {
        let raw = raw.with_meta(InstanceMeta {
            source: name.clone(),
            ..InstanceMeta::default()
        });
        let mut normalized = raw.normalize_coords()?;
        normalized.meta.raw_coords = Some(raw.coords().to_vec());
        let known_optimum = registry().get(&name).cloned();
        Ok(BenchmarkInstance {
            name,
            raw,
            normalized,
            known_optimum,
        })
    }
}

#[derive(Deserialize)]
struct RegistryFile {
    version: u32,
    entries: Vec<RegistryEntry>,
}

#[derive(Deserialize)]
struct RegistryEntry {
    name: String,
    value: f64,
    source: String,
}

const REGISTRY_JSON: &str = include_str!("../data/known_optima.json");

/// Published optima bundled with the crate, keyed by instance name.
pub fn registry() -> &'static BTreeMap<String, KnownOptimum> {
    static REG: OnceLock<BTreeMap<String, KnownOptimum>> = OnceLock::new();
    REG.get_or_init(|| {
        parse_registry(REGISTRY_JSON).expect("bundled known_optima.json is valid")
    })
}

pub fn parse_registry(json: &str) -> Result<BTreeMap<String, KnownOptimum>> {
    let file: RegistryFile = serde_json::from_str(json)?;
    if file.version != 1 {
        return Err(Error::Unsupported(format!("registry version {}", file.version)));
    }
    let mut out = BTreeMap::new();
    for e in file.entries {
        if !(e.value > 0.0) {
            return Err(Error::Domain(format!("optimum for {} must be positive", e.name)));
        }
        out.insert(
            e.name,
            KnownOptimum {
                value: e.value,
                source: e.source,
            },
        );
    }
    Ok(out)
}

/// Raw TSPLIB key/section scan shared by both formats.
#[derive(Default)]
struct Sections {
    headers: BTreeMap<String, (usize, String)>,
    coords: Option<(usize, Vec<(usize, Point)>)>,
    demands: Option<(usize, Vec<(usize, f64)>)>,
    depots: Option<(usize, Vec<usize>)>,
    last_line: usize,
}

fn section_rows<'a>(
    lines: &mut std::iter::Peekable<impl Iterator<Item = (usize, &'a str)>>,
) -> Vec<(usize, Vec<&'a str>)> {
    let mut rows = Vec::new();
    while let Some(&(ln, line)) = lines.peek() {
        let first = line.split_whitespace().next().unwrap_or("");
        if first.parse::<f64>().is_err() {
            break;
        }
        rows.push((ln, line.split_whitespace().collect()));
        lines.next();
    }
    rows
}

fn node_id(tok: &str, ln: usize) -> Result<usize> {
    let id: usize = tok
        .parse()
        .map_err(|_| Error::parse(ln, format!("bad node id `{tok}`")))?;
    if id == 0 {
        return Err(Error::parse(ln, "node ids are 1-based"));
    }
    Ok(id - 1)
}

fn num(tok: &str, ln: usize) -> Result<f64> {
    tok.parse()
        .map_err(|_| Error::parse(ln, format!("bad number `{tok}`")))
}

fn scan(text: &str) -> Result<Sections> {
    let mut s = Sections::default();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    while let Some((ln, line)) = lines.next() {
        s.last_line = ln;
        let key = line
            .split(|c: char| c == ':' || c.is_whitespace())
            .next()
            .unwrap_or("")
            .to_ascii_uppercase();
        match key.as_str() {
            "EOF" => break,
            "NODE_COORD_SECTION" => {
                let mut rows = Vec::new();
                for (ln, f) in section_rows(&mut lines) {
                    if f.len() < 3 {
                        return Err(Error::parse(ln, "expected `id x y`"));
                    }
                    rows.push((node_id(f[0], ln)?, [num(f[1], ln)?, num(f[2], ln)?]));
                }
                s.coords = Some((ln, rows));
            }
            "DEMAND_SECTION" => {
                let mut rows = Vec::new();
                for (ln, f) in section_rows(&mut lines) {
                    if f.len() < 2 {
                        return Err(Error::parse(ln, "expected `id demand`"));
                    }
                    rows.push((node_id(f[0], ln)?, num(f[1], ln)?));
                }
                s.demands = Some((ln, rows));
            }
            "DEPOT_SECTION" => {
                let mut ids = Vec::new();
                for (ln, f) in section_rows(&mut lines) {
                    if f[0] == "-1" {
                        break;
                    }
                    ids.push(node_id(f[0], ln)?);
                }
                s.depots = Some((ln, ids));
            }
            k if k.ends_with("_SECTION") => {
                return Err(Error::Unsupported(format!("section {k} (line {ln})")));
            }
            _ => {
                let value = line[key.len()..].trim_start_matches([' ', '\t', ':']).trim();
                s.headers.insert(key, (ln, value.to_string()));
            }
        }
        s.last_line = s.last_line.max(ln);
    }
    Ok(s)
}

impl Sections {
    fn header(&self, key: &str) -> Option<&str> {
        self.headers.get(key).map(|(_, v)| v.as_str())
    }

    fn require_header(&self, key: &str) -> Result<&str> {
        self.header(key)
            .ok_or_else(|| Error::parse(self.last_line, format!("missing {key}")))
    }

    fn check_type(&self, want: &str) -> Result<()> {
        let ty = self.require_header("TYPE")?;
        if !ty.eq_ignore_ascii_case(want) {
            let ln = self.headers["TYPE"].0;
            return Err(Error::parse(ln, format!("TYPE {ty}, expected {want}")));
        }
        match self.header("EDGE_WEIGHT_TYPE") {
            Some(w) if w.eq_ignore_ascii_case("EUC_2D") => Ok(()),
            Some(w) => Err(Error::Unsupported(format!("EDGE_WEIGHT_TYPE {w}"))),
            None => Err(Error::parse(self.last_line, "missing EDGE_WEIGHT_TYPE")),
        }
    }

    fn dimension(&self) -> Result<Option<usize>> {
        self.headers
            .get("DIMENSION")
            .map(|(ln, v)| {
                v.parse()
                    .map_err(|_| Error::parse(*ln, format!("bad DIMENSION `{v}`")))
            })
            .transpose()
    }

    fn coords(&self) -> Result<Vec<Point>> {
        let (ln, rows) = self
            .coords
            .as_ref()
            .ok_or_else(|| Error::parse(self.last_line, "missing NODE_COORD_SECTION"))?;
        let n = self.dimension()?.unwrap_or(rows.len());
        if rows.len() != n {
            return Err(Error::parse(
                *ln,
                format!("NODE_COORD_SECTION has {} nodes, DIMENSION {n}", rows.len()),
            ));
        }
        let mut out = vec![None; n];
        for &(id, p) in rows {
            match out.get_mut(id) {
                Some(slot @ None) => *slot = Some(p),
                _ => return Err(Error::parse(*ln, format!("node id {} invalid or repeated", id + 1))),
            }
        }
        Ok(out.into_iter().map(|p| p.expect("all ids filled")).collect())
    }
}

fn name_of(s: &Sections) -> String {
    s.header("NAME").unwrap_or("unnamed").to_string()
}

/// Parses a `TYPE: TSP`, `EUC_2D` TSPLIB file.
pub fn parse_tsplib(text: &str) -> Result<BenchmarkInstance> {
    let s = scan(text)?;
    s.check_type("TSP")?;
    let coords = s.coords()?;
    let raw = VrpInstance::tsp(coords).map_err(|e| Error::parse(s.last_line, e.to_string()))?;
    BenchmarkInstance::new(name_of(&s), raw)
}

/// Parses a `TYPE: CVRP`, `EUC_2D` CVRPLIB file with a single depot.
pub fn parse_cvrplib(text: &str) -> Result<BenchmarkInstance> {
    let s = scan(text)?;
    s.check_type("CVRP")?;
    let coords = s.coords()?;
    let n = coords.len();
    let (cap_ln, cap) = s
        .headers
        .get("CAPACITY")
        .ok_or_else(|| Error::parse(s.last_line, "missing CAPACITY"))?;
    let capacity = num(cap, *cap_ln)?;
    let (dem_ln, rows) = s
        .demands
        .as_ref()
        .ok_or_else(|| Error::parse(s.last_line, "missing DEMAND_SECTION"))?;
    let mut demands = vec![None; n];
    for &(id, d) in rows {
        match demands.get_mut(id) {
            Some(slot @ None) => *slot = Some(d),
            _ => return Err(Error::parse(*dem_ln, format!("demand id {} invalid or repeated", id + 1))),
        }
    }
    let demands: Vec<f64> = demands
        .into_iter()
        .enumerate()
        .map(|(i, d)| d.ok_or_else(|| Error::parse(*dem_ln, format!("no demand for node {}", i + 1))))
        .collect::<Result<_>>()?;
    let (dep_ln, depots) = s
        .depots
        .as_ref()
        .ok_or_else(|| Error::parse(s.last_line, "missing DEPOT_SECTION"))?;
    let depot = match depots.as_slice() {
        [d] if *d < n => *d,
        [] => return Err(Error::parse(*dep_ln, "DEPOT_SECTION lists no depot")),
        [_] => return Err(Error::parse(*dep_ln, "depot id out of range")),
        _ => return Err(Error::Unsupported("multiple depots".into())),
    };
    if demands[depot] != 0.0 {
        return Err(Error::parse(*dem_ln, format!("depot demand {} != 0", demands[depot])));
    }
    let raw = VrpInstance::cvrp(coords, depot, demands, capacity)
        .map_err(|e| Error::parse(*dem_ln, e.to_string()))?;
    BenchmarkInstance::new(name_of(&s), raw)
}

/// Dispatches on the `TYPE` header.
pub fn parse_benchmark(text: &str) -> Result<BenchmarkInstance> {
    let s = scan(text)?;
    match s.header("TYPE").map(str::to_ascii_uppercase).as_deref() {
        Some("TSP") => parse_tsplib(text),
        Some("CVRP") => parse_cvrplib(text),
        Some(other) => Err(Error::Unsupported(format!("TYPE {other}"))),
        None => Err(Error::parse(s.last_line, "missing TYPE")),
    }
}

pub fn read_benchmark(path: &Path) -> Result<BenchmarkInstance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_benchmark(&text)
}

/// Writes the raw instance back in TSPLIB / CVRPLIB form.
pub fn to_tsplib(b: &BenchmarkInstance) -> String {
    let inst = &b.raw;
    let mut out = String::new();
    let _ = writeln!(out, "NAME : {}", b.name);
    let _ = writeln!(out, "TYPE : {}", inst.kind().to_string().to_uppercase());
    let _ = writeln!(out, "DIMENSION : {}", inst.n());
    let _ = writeln!(out, "EDGE_WEIGHT_TYPE : EUC_2D");
    if let Some(c) = inst.capacitated() {
        let _ = writeln!(out, "CAPACITY : {}", c.raw_capacity);
    }
    out.push_str("NODE_COORD_SECTION\n");
    for (i, p) in inst.coords().iter().enumerate() {
        let _ = writeln!(out, "{} {} {}", i + 1, p[0], p[1]);
    }
    if let Some(c) = inst.capacitated() {
        out.push_str("DEMAND_SECTION\n");
        for (i, d) in c.raw_demands.iter().enumerate() {
            let _ = writeln!(out, "{} {}", i + 1, d);
        }
        let _ = writeln!(out, "DEPOT_SECTION\n{}\n-1", c.depot + 1);
    }
    out.push_str("EOF\n");
    out
}

/// TSPLIB `nint`: round half up.
pub fn nint(d: f64) -> f64 {
    (d + 0.5).floor()
}

/// Tour cost with every edge rounded by [`nint`] before summation.
pub fn benchmark_cost(raw: &VrpInstance, tour: &[usize]) -> Result<f64> {
    check_feasible(raw, tour)?;
    Ok(canonical_cost(tour, raw.depot(), |a, b| nint(raw.dist(a, b))))
}

/// Reads the 1-based node list of a TSPLIB `.tour` file.
pub fn parse_tour_file(text: &str) -> Result<Vec<usize>> {
    let mut in_tour = false;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if !in_tour {
            in_tour = line.eq_ignore_ascii_case("TOUR_SECTION");
            continue;
        }
        for tok in line.split_whitespace() {
            if tok == "-1" || tok == "EOF" {
                return Ok(out);
            }
            out.push(node_id(tok, i + 1)?);
        }
    }
    if in_tour && !out.is_empty() {
        Ok(out)
    } else {
        Err(Error::parse(text.lines().count(), "missing TOUR_SECTION"))
    }
}

/// Reads a CVRPLIB `.sol` file (`Route #k: ...` lines of 1-based customer
/// numbers counted without the depot) as a depot-framed visit sequence.
pub fn parse_cvrp_solution(text: &str, depot: usize) -> Result<Vec<usize>> {
    let mut out = vec![depot];
    for (i, line) in text.lines().enumerate() {
        let Some(rest) = line.trim().strip_prefix("Route #") else {
            continue;
        };
        let (_, nodes) = rest
            .split_once(':')
            .ok_or_else(|| Error::parse(i + 1, "expected `Route #k: ...`"))?;
        for tok in nodes.split_whitespace() {
            let c: usize = tok
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad customer `{tok}`")))?;
            out.push(if c > depot { c } else { c - 1 });
        }
        out.push(depot);
    }
    if out.len() == 1 {
        return Err(Error::parse(text.lines().count(), "no routes"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub pct: f64,
    /// Cost below an exact reference.
    pub anomaly: bool,
}

/// Percentage optimality gap.
pub fn gap(cost: f64, reference: f64) -> Result<Gap> {
    if !(reference > 0.0 && reference.is_finite()) {
        return Err(Error::Domain(format!("gap reference {reference} must be positive")));
    }
    let pct = 100.0 * (cost - reference) / reference;
    Ok(Gap {
        pct,
        anomaly: pct < 0.0,
    })
}

/// Mean and 95% margin of error (normal approximation).
pub fn mean_margin(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub instance: String,
    pub n: usize,
    pub method: String,
    pub cost: f64,
    pub reference: Option<f64>,
    pub gap_pct: Option<f64>,
    pub seconds: f64,
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}

pub fn read_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub instances: usize,
    pub mean_cost: f64,
    pub mean_gap_pct: Option<f64>,
    pub gap_margin_95: Option<f64>,
    pub total_seconds: f64,
}

/// Per-method aggregates in first-seen method order.
pub fn summarize(rows: &[ResultRow]) -> Vec<MethodSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let mine: Vec<&ResultRow> = rows.iter().filter(|r| r.method == m).collect();
            let costs: Vec<f64> = mine.iter().map(|r| r.cost).collect();
            let gaps: Vec<f64> = mine.iter().filter_map(|r| r.gap_pct).collect();
            let (g, margin) = mean_margin(&gaps);
            MethodSummary {
                method: m.to_string(),
                instances: mine.len(),
                mean_cost: mean_margin(&costs).0,
                mean_gap_pct: (!gaps.is_empty()).then_some(g),
                gap_margin_95: (!gaps.is_empty()).then_some(margin),
                total_seconds: mine.iter().map(|r| r.seconds).sum(),
            }
        })
        .collect()
}

pub fn kind_of(b: &BenchmarkInstance) -> ProblemKind {
    b.raw.kind()
}
