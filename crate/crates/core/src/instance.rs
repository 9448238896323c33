//! Problem instances, tours, costs and feasibility.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Point = [f64; 2];

/// Relative slack used when comparing sub-tour loads against capacity.
pub const CAPACITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Tsp,
    Cvrp,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Tsp => "tsp",
            ProblemKind::Cvrp => "cvrp",
        })
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Ok(ProblemKind::Tsp),
            "cvrp" => Ok(ProblemKind::Cvrp),
            other => Err(Error::Config(format!("unknown problem kind `{other}`"))),
        }
    }
}

/// Depot, demands and capacity of a CVRP instance. Demands are stored both
/// raw and divided by capacity, so the working capacity is always 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capacitated {
    pub depot: usize,
    pub demands: Vec<f64>,
    pub raw_demands: Vec<f64>,
    pub raw_capacity: f64,
}

/// Provenance and bookkeeping that does not affect solving.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub source: String,
    pub seed: Option<u64>,
    /// Coordinates before the first normalization, when it changed them.
    pub raw_coords: Option<Vec<Point>>,
    /// Generator cluster id per node; `-1` marks a uniform draw.
    pub labels: Option<Vec<i32>>,
    pub centers: Option<Vec<Point>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrpInstance {
    kind: ProblemKind,
    coords: Vec<Point>,
    cvrp: Option<Capacitated>,
    pub meta: InstanceMeta,
}

fn finite_points(coords: &[Point]) -> Result<()> {
    if coords.len() < 2 {
        return Err(Error::InvalidInstance(format!(
            "need at least 2 nodes, got {}",
            coords.len()
        )));
    }
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInstance("non-finite coordinate".into()));
    }
    Ok(())
}

impl VrpInstance {
    pub fn tsp(coords: Vec<Point>) -> Result<Self> {
        finite_points(&coords)?;
        Ok(VrpInstance {
            kind: ProblemKind::Tsp,
            coords,
            cvrp: None,
            meta: InstanceMeta::default(),
        })
    }

    /// Builds a CVRP instance from raw demands (depot entry must be 0) and
    /// raw capacity.
    pub fn cvrp(
        coords: Vec<Point>,
        depot: usize,
        raw_demands: Vec<f64>,
        raw_capacity: f64,
    ) -> Result<Self> {
        finite_points(&coords)?;
        let n = coords.len();
        if depot >= n {
            return Err(Error::InvalidInstance(format!("depot {depot} out of range")));
        }
        if raw_demands.len() != n {
            return Err(Error::InvalidInstance(format!(
                "{} demands for {n} nodes",
                raw_demands.len()
            )));
        }
        if !(raw_capacity > 0.0 && raw_capacity.is_finite()) {
            return Err(Error::InvalidInstance(format!("capacity {raw_capacity}")));
        }
        if raw_demands[depot] != 0.0 {
            return Err(Error::InvalidInstance("depot demand must be 0".into()));
        }
        for (i, &d) in raw_demands.iter().enumerate() {
            if i != depot && !(d > 0.0 && d <= raw_capacity) {
                return Err(Error::InvalidInstance(format!(
                    "demand {d} of node {i} outside (0, {raw_capacity}]"
                )));
            }
        }
        let demands = raw_demands.iter().map(|d| d / raw_capacity).collect();
        Ok(VrpInstance {
            kind: ProblemKind::Cvrp,
            coords,
            cvrp: Some(Capacitated {
                depot,
                demands,
                raw_demands,
                raw_capacity,
            }),
            meta: InstanceMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: InstanceMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    /// Number of nodes, depot included.
    pub fn n(&self) -> usize {
        self.coords.len()
    }

    /// Problem size label: nodes for TSP, customers for CVRP.
    pub fn size(&self) -> usize {
        match self.kind {
            ProblemKind::Tsp => self.n(),
            ProblemKind::Cvrp => self.n() - 1,
        }
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn capacitated(&self) -> Option<&Capacitated> {
        self.cvrp.as_ref()
    }

    pub fn depot(&self) -> Option<usize> {
        self.cvrp.as_ref().map(|c| c.depot)
    }

    /// Working capacity; demands are expressed as fractions of it.
    pub fn capacity(&self) -> Option<f64> {
        self.cvrp.as_ref().map(|_| 1.0)
    }

    pub fn demand(&self, node: usize) -> f64 {
        self.cvrp.as_ref().map_or(0.0, |c| c.demands[node])
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.coords[i], self.coords[j]);
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    /// Same instance with replaced coordinates (e.g. a symmetry image).
    pub fn with_coords(&self, coords: Vec<Point>) -> Result<Self> {
        finite_points(&coords)?;
        if coords.len() != self.n() {
            return Err(Error::InvalidInstance("coordinate count changed".into()));
        }
        let mut out = self.clone();
        out.coords = coords;
        Ok(out)
    }

    /// Min-shift then divide by the larger per-axis span; the wider axis ends
    /// up spanning exactly `[0, 1]` and the aspect ratio is kept.
    pub fn normalize_coords(&self) -> Result<Self> {
        let coords = normalize_points(&self.coords)?;
        let mut out = self.clone();
        if out.meta.raw_coords.is_none() && coords != self.coords {
            out.meta.raw_coords = Some(self.coords.clone());
        }
        out.coords = coords;
        Ok(out)
    }

    pub fn in_unit_square(&self) -> bool {
        self.coords
            .iter()
            .flatten()
            .all(|v| (0.0..=1.0).contains(v))
    }

    /// The eight symmetries of the unit square, identity first.
    pub fn augment8(&self) -> Vec<VrpInstance> {
        (0..8)
            .map(|k| {
                let mut out = self.clone();
                out.coords = self.coords.iter().map(|&p| dihedral(k, p)).collect();
                out
            })
            .collect()
    }
}

/// The `k`-th square symmetry: (x,y), (y,x), (1-x,y), (x,1-y), (1-x,1-y),
/// (y,1-x), (1-y,x), (1-y,1-x).
pub fn dihedral(k: usize, [x, y]: Point) -> Point {
    match k {
        0 => [x, y],
        1 => [y, x],
        2 => [1.0 - x, y],
        3 => [x, 1.0 - y],
        4 => [1.0 - x, 1.0 - y],
        5 => [y, 1.0 - x],
        6 => [1.0 - y, x],
        7 => [1.0 - y, 1.0 - x],
        _ => panic!("dihedral index {k} out of range"),
    }
}

pub fn normalize_points(coords: &[Point]) -> Result<Vec<Point>> {
    finite_points(coords)?;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in coords {
        for c in 0..2 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if span <= 0.0 {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    Ok(coords
        .iter()
        .map(|p| [(p[0] - lo[0]) / span, (p[1] - lo[1]) / span])
        .collect())
}

/// Why a tour is not feasible for an instance.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Violation {
    #[error("empty tour")]
    Empty,
    #[error("node {node} does not exist")]
    UnknownNode { node: usize },
    #[error("node {node} visited more than once")]
    Duplicate { node: usize },
    #[error("node {node} never visited")]
    Missing { node: usize },
    #[error("tour must start at depot, starts at {found}")]
    NotAtDepot { found: usize },
    #[error("sub-tour {subtour} carries {load} > capacity {capacity}")]
    CapacityExceeded {
        subtour: usize,
        load: f64,
        capacity: f64,
    },
}

/// Checks a visit sequence. TSP tours are permutations of all nodes. CVRP
/// tours start at the depot, visit each customer once, may return to the
/// depot any number of times, and keep every sub-tour (numbered from 1)
/// within capacity.
pub fn check_feasible(inst: &VrpInstance, tour: &[usize]) -> std::result::Result<(), Violation> {
    let n = inst.n();
    let first = *tour.first().ok_or(Violation::Empty)?;
    if let Some(&node) = tour.iter().find(|&&v| v >= n) {
        return Err(Violation::UnknownNode { node });
    }
    let mut seen = vec![false; n];
    match inst.capacitated() {
        None => {
            for &v in tour {
                if std::mem::replace(&mut seen[v], true) {
                    return Err(Violation::Duplicate { node: v });
                }
            }
        }
        Some(c) => {
            if first != c.depot {
                return Err(Violation::NotAtDepot { found: first });
            }
            let limit = c.raw_capacity * (1.0 + CAPACITY_TOLERANCE);
            let mut subtour = 0;
            let mut load = 0.0;
            for &v in tour {
                if v == c.depot {
                    subtour += 1;
                    load = 0.0;
                    seen[v] = true;
                    continue;
                }
                if std::mem::replace(&mut seen[v], true) {
                    return Err(Violation::Duplicate { node: v });
                }
                load += c.raw_demands[v];
                if load > limit {
                    return Err(Violation::CapacityExceeded {
                        subtour,
                        load,
                        capacity: c.raw_capacity,
                    });
                }
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(node) => Err(Violation::Missing { node }),
        None => Ok(()),
    }
}

/// Euclidean length of a feasible tour, closing edge included.
///
/// The sum is taken over a canonical form of the tour (rotation and
/// direction for TSP; route direction and route order for CVRP) so equal
/// tours cost bitwise-equal amounts.
pub fn tour_cost(inst: &VrpInstance, tour: &[usize]) -> Result<f64> {
    check_feasible(inst, tour)?;
    Ok(canonical_cost(tour, inst.depot(), |a, b| inst.dist(a, b)))
}

pub(crate) fn canonical_cost(
    tour: &[usize],
    depot: Option<usize>,
    dist: impl Fn(usize, usize) -> f64,
) -> f64 {
    match depot {
        None => cycle_cost(&canonical_cycle(tour), &dist),
        Some(d) => {
            let mut routes = split_routes(tour, d);
            for r in &mut routes {
                if r.len() > 1 && r[0] > r[r.len() - 1] {
                    r.reverse();
                }
            }
            routes.sort();
            routes
                .iter()
                .map(|r| {
                    let mut c = dist(d, r[0]);
                    for w in r.windows(2) {
                        c += dist(w[0], w[1]);
                    }
                    c + dist(r[r.len() - 1], d)
                })
                .sum()
        }
    }
}

/// Rotates a cycle to start at its smallest node and orients it so the
/// second node is smaller than the last.
pub fn canonical_cycle(tour: &[usize]) -> Vec<usize> {
    let n = tour.len();
    let start = (0..n).min_by_key(|&i| tour[i]).unwrap_or(0);
    let mut out: Vec<usize> = (0..n).map(|i| tour[(start + i) % n]).collect();
    if n > 2 && out[1] > out[n - 1] {
        out[1..].reverse();
    }
    out
}

fn cycle_cost(cycle: &[usize], dist: &impl Fn(usize, usize) -> f64) -> f64 {
    let n = cycle.len();
    let mut c = 0.0;
    for i in 0..n {
        c += dist(cycle[i], cycle[(i + 1) % n]);
    }
    c
}

/// Customer sequences of each depot-to-depot route; empty routes dropped.
pub fn split_routes(tour: &[usize], depot: usize) -> Vec<Vec<usize>> {
    tour.split(|&v| v == depot)
        .filter(|r| !r.is_empty())
        .map(<[usize]>::to_vec)
        .collect()
}

/// A feasible tour together with its cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub nodes: Vec<usize>,
    pub cost: f64,
}

impl Tour {
    pub fn evaluate(inst: &VrpInstance, nodes: Vec<usize>) -> Result<Self> {
        let cost = tour_cost(inst, &nodes)?;
        Ok(Tour { nodes, cost })
    }
}
