//! Seeded instance generators for the training and test distribution
//! patterns, plus CVRP demand/capacity attributes.
//!
//! Every instance index draws from its own ChaCha stream of the spec's seed,
//! so output does not depend on generation order or parallelism.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::instance::{normalize_points, InstanceMeta, Point, ProblemKind, VrpInstance};
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionKind {
    Uniform,
    Cluster,
    Mixed,
    Implosion,
    Explosion,
    Expansion,
    Gaussian,
}

impl DistributionKind {
    pub const ALL: [DistributionKind; 7] = [
        DistributionKind::Uniform,
        DistributionKind::Cluster,
        DistributionKind::Mixed,
        DistributionKind::Implosion,
        DistributionKind::Explosion,
        DistributionKind::Expansion,
        DistributionKind::Gaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistributionKind::Uniform => "uniform",
            DistributionKind::Cluster => "cluster",
            DistributionKind::Mixed => "mixed",
            DistributionKind::Implosion => "implosion",
            DistributionKind::Explosion => "explosion",
            DistributionKind::Expansion => "expansion",
            DistributionKind::Gaussian => "gaussian",
        }
    }

    pub fn is_mutation(self) -> bool {
        matches!(
            self,
            DistributionKind::Implosion | DistributionKind::Explosion | DistributionKind::Expansion
        )
    }
}

impl fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let alias = match key.as_str() {
            "u" | "d_u" => "uniform",
            "c" | "d_c" => "cluster",
            "m" | "d_m" => "mixed",
            "i" | "d_i" => "implosion",
            "eo" | "d_eo" => "explosion",
            "ea" | "d_ea" => "expansion",
            "g" | "d_g" => "gaussian",
            k => k,
        };
        DistributionKind::ALL
            .into_iter()
            .find(|d| d.name() == alias)
            .ok_or_else(|| Error::Config(format!("unknown distribution `{s}`")))
    }
}

/// `(name, default, min, max)` for every tunable generator parameter.
const PARAMS: &[(&str, f64, f64, f64)] = &[
    ("cluster_min", 3.0, 1.0, 50.0),
    ("cluster_max", 7.0, 1.0, 50.0),
    ("cluster_std", 0.07, 1e-4, 1.0),
    ("center_lo", 0.2, 0.0, 1.0),
    ("center_hi", 0.8, 0.0, 1.0),
    ("radius", 0.3, 1e-3, 1.0),
    ("pull_min", 0.1, 0.0, 1.0),
    ("pull_max", 0.5, 0.0, 1.0),
    ("expand_min", 1.2, 1.0, 10.0),
    ("expand_max", 2.0, 1.0, 10.0),
    ("gaussian_std", 0.15, 1e-4, 1.0),
    ("gaussian_components", 1.0, 1.0, 10.0),
];

/// A named generator with its parameter overrides and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl DistributionSpec {
    pub fn new(kind: DistributionKind, seed: u64) -> Self {
        DistributionSpec {
            kind,
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    /// Parameter value, falling back to the documented default.
    pub fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or_else(|| {
            PARAMS
                .iter()
                .find(|p| p.0 == name)
                .map(|p| p.1)
                .unwrap_or_else(|| panic!("no generator parameter `{name}`"))
        })
    }

    /// Full parameter map with defaults filled in, as recorded in metadata.
    pub fn resolved_params(&self) -> BTreeMap<String, f64> {
        PARAMS
            .iter()
            .map(|p| (p.0.to_string(), self.param(p.0)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in &self.params {
            let (_, _, lo, hi) = PARAMS
                .iter()
                .find(|p| p.0 == name)
                .ok_or_else(|| Error::Config(format!("unknown generator parameter `{name}`")))?;
            if !(v.is_finite() && *lo <= *v && *v <= *hi) {
                return Err(Error::Config(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        let ordered = [
            ("cluster_min", "cluster_max"),
            ("center_lo", "center_hi"),
            ("pull_min", "pull_max"),
            ("expand_min", "expand_max"),
        ];
        for (lo, hi) in ordered {
            if self.param(lo) > self.param(hi) {
                return Err(Error::Config(format!("{lo} exceeds {hi}")));
            }
        }
        Ok(())
    }
}

/// Raw CVRP attributes: depot location, integer demands in `1..=9` with the
/// depot's 0 first, and the vehicle capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct CvrpAttrs {
    pub depot: Point,
    pub raw_demands: Vec<f64>,
    pub raw_capacity: f64,
    pub demands: Vec<f64>,
}

/// Capacity for `n` customers: 40 at 50 and 50 at 100, linear in between
/// and beyond, rounded, never below 30.
pub fn capacity_for(n: usize) -> f64 {
    (30.0 + n as f64 / 5.0).round().max(30.0)
}

pub fn cvrp_attrs(n: usize, rng: &mut ChaCha8Rng) -> CvrpAttrs {
    let depot = [rng.gen::<f64>(), rng.gen::<f64>()];
    let raw_capacity = capacity_for(n);
    let raw_demands: Vec<f64> = std::iter::once(0.0)
        .chain((0..n).map(|_| rng.gen_range(1..=9) as f64))
        .collect();
    let demands = raw_demands.iter().map(|d| d / raw_capacity).collect();
    CvrpAttrs {
        depot,
        raw_demands,
        raw_capacity,
        demands,
    }
}

struct Sampled {
    coords: Vec<Point>,
    labels: Option<Vec<i32>>,
    centers: Option<Vec<Point>>,
}

fn uniform_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
}

/// Gaussian draw around `center`, resampled until it lands in the unit square.
fn gaussian_in_square(center: Point, normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> Point {
    loop {
        let p = [center[0] + normal.sample(rng), center[1] + normal.sample(rng)];
        if (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]) {
            return p;
        }
    }
}

fn cluster_points(n: usize, spec: &DistributionSpec, rng: &mut ChaCha8Rng) -> Sampled {
    let k = rng.gen_range(spec.param("cluster_min") as usize..=spec.param("cluster_max") as usize);
    let (lo, hi) = (spec.param("center_lo"), spec.param("center_hi"));
    let centers: Vec<Point> = (0..k)
        .map(|_| [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)])
        .collect();
    let normal = Normal::new(0.0, spec.param("cluster_std")).expect("validated std");
    let mut coords = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.gen_range(0..k);
        coords.push(gaussian_in_square(centers[c], &normal, rng));
        labels.push(c as i32);
    }
    Sampled {
        coords,
        labels: Some(labels),
        centers: Some(centers),
    }
}

fn gaussian_points(n: usize, spec: &DistributionSpec, rng: &mut ChaCha8Rng) -> Sampled {
    let k = spec.param("gaussian_components") as usize;
    let centers: Vec<Point> = (0..k)
        .map(|_| [rng.gen_range(0.2..=0.8), rng.gen_range(0.2..=0.8)])
        .collect();
    let normal = Normal::new(0.0, spec.param("gaussian_std")).expect("validated std");
    let mut coords = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = if k == 1 { 0 } else { rng.gen_range(0..k) };
        coords.push(gaussian_in_square(centers[c], &normal, rng));
        labels.push(c as i32);
    }
    Sampled {
        coords,
        labels: Some(labels),
        centers: Some(centers),
    }
}

fn sample_points(kind: DistributionKind, n: usize, spec: &DistributionSpec, rng: &mut ChaCha8Rng) -> Sampled {
    match kind {
        DistributionKind::Uniform | DistributionKind::Implosion | DistributionKind::Explosion
        | DistributionKind::Expansion => Sampled {
            coords: uniform_points(n, rng),
            labels: None,
            centers: None,
        },
        DistributionKind::Cluster => cluster_points(n, spec, rng),
        DistributionKind::Mixed => {
            let n_uniform = n.div_ceil(2);
            let mut coords = uniform_points(n_uniform, rng);
            let clustered = cluster_points(n - n_uniform, spec, rng);
            coords.extend(clustered.coords);
            let mut labels = vec![-1; n_uniform];
            labels.extend(clustered.labels.unwrap_or_default());
            Sampled {
                coords,
                labels: Some(labels),
                centers: clustered.centers,
            }
        }
        DistributionKind::Gaussian => gaussian_points(n, spec, rng),
    }
}

/// One instance from stream `index` of the spec's seed.
pub fn generate_one(
    spec: &DistributionSpec,
    n: usize,
    kind: ProblemKind,
    index: u64,
) -> Result<VrpInstance> {
    let mut rng = stream(spec.seed, index);
    let attrs = (kind == ProblemKind::Cvrp).then(|| cvrp_attrs(n, &mut rng));
    let sampled = sample_points(spec.kind, n, spec, &mut rng);
    let (mut coords, mut labels) = (sampled.coords, sampled.labels);
    if let Some(a) = &attrs {
        coords.insert(0, a.depot);
        if let Some(l) = labels.as_mut() {
            l.insert(0, -1);
        }
    }
    let meta = InstanceMeta {
        source: format!("{}-{}-{}", spec.kind, spec.seed, index),
        seed: Some(spec.seed),
        raw_coords: None,
        labels,
        centers: sampled.centers,
    };
    let base = match attrs {
        None => VrpInstance::tsp(coords)?,
        Some(a) => VrpInstance::cvrp(coords, 0, a.raw_demands, a.raw_capacity)?,
    }
    .with_meta(meta);
    if spec.kind.is_mutation() {
        mutate(&base, spec.kind, spec, &mut rng)
    } else {
        Ok(base)
    }
}

/// `count` instances of size `n` (customers for CVRP, nodes for TSP).
pub fn generate(
    spec: &DistributionSpec,
    n: usize,
    count: usize,
    kind: ProblemKind,
) -> Result<Vec<VrpInstance>> {
    spec.validate()?;
    if n < 2 && kind == ProblemKind::Tsp || n < 1 {
        return Err(Error::Config(format!("instance size {n} too small")));
    }
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_one(spec, n, kind, i))
        .collect()
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Applies one of the test-only mutation operators to the non-depot nodes.
///
/// * Implosion: nodes within `radius` of a random node move toward it,
///   keeping a fraction `λ ~ U[pull_min, pull_max]` of their offset.
/// * Explosion: nodes within `radius` of a random point are pushed along
///   their ray to distance `2r - d`; a push that leaves the square is
///   replaced by a uniform draw outside the radius.
/// * Expansion: every offset from a random point is scaled by
///   `μ ~ U[expand_min, expand_max]`, then coordinates are renormalized.
pub fn mutate(
    base: &VrpInstance,
    kind: DistributionKind,
    params: &DistributionSpec,
    rng: &mut ChaCha8Rng,
) -> Result<VrpInstance> {
    let depot = base.depot();
    let movable: Vec<usize> = (0..base.n()).filter(|&i| Some(i) != depot).collect();
    let mut coords = base.coords().to_vec();
    let r = params.param("radius");
    match kind {
        DistributionKind::Implosion => {
            let center = coords[movable[rng.gen_range(0..movable.len())]];
            let lambda = rng.gen_range(params.param("pull_min")..=params.param("pull_max"));
            for &i in &movable {
                let p = coords[i];
                if dist(p, center) <= r {
                    coords[i] = [
                        lambda * p[0] + (1.0 - lambda) * center[0],
                        lambda * p[1] + (1.0 - lambda) * center[1],
                    ];
                }
            }
        }
        DistributionKind::Explosion => {
            let center = [rng.gen::<f64>(), rng.gen::<f64>()];
            for &i in &movable {
                let p = coords[i];
                let d = dist(p, center);
                if d >= r {
                    continue;
                }
                let dir = if d > 0.0 {
                    [(p[0] - center[0]) / d, (p[1] - center[1]) / d]
                } else {
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    [a.cos(), a.sin()]
                };
                let target = 2.0 * r - d;
                let q = [center[0] + dir[0] * target, center[1] + dir[1] * target];
                let inside = (0.0..=1.0).contains(&q[0]) && (0.0..=1.0).contains(&q[1]);
                coords[i] = if inside && dist(q, center) >= r {
                    q
                } else {
                    loop {
                        let q = [rng.gen::<f64>(), rng.gen::<f64>()];
                        if dist(q, center) >= r {
                            break q;
                        }
                    }
                };
            }
        }
        DistributionKind::Expansion => {
            let center = [rng.gen::<f64>(), rng.gen::<f64>()];
            let mu = rng.gen_range(params.param("expand_min")..=params.param("expand_max"));
            for &i in &movable {
                let p = coords[i];
                coords[i] = [
                    center[0] + mu * (p[0] - center[0]),
                    center[1] + mu * (p[1] - center[1]),
                ];
            }
            coords = normalize_points(&coords)?;
        }
        other => {
            return Err(Error::Config(format!("`{other}` is not a mutation operator")));
        }
    }
    base.with_coords(coords)
}
