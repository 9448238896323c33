//! Exact and heuristic reference solvers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::instance::{ProblemKind, Tour, VrpInstance, CAPACITY_TOLERANCE};
use crate::rng::stream;
use crate::{Error, Result};

pub const BRUTE_FORCE_MAX: usize = 10;
pub const HELD_KARP_MAX: usize = 16;
pub const CVRP_EXACT_MAX: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMethod {
    BruteForce,
    HeldKarp,
    CvrpExact,
    Nn2Opt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub cost: f64,
    pub tour: Tour,
    pub method: OracleMethod,
    pub exact: bool,
}

impl OracleResult {
    fn new(inst: &VrpInstance, nodes: Vec<usize>, method: OracleMethod) -> Result<Self> {
        let tour = Tour::evaluate(inst, nodes)?;
        Ok(OracleResult {
            cost: tour.cost,
            tour,
            method,
            exact: method != OracleMethod::Nn2Opt,
        })
    }
}

fn require_tsp(inst: &VrpInstance, what: &str) -> Result<()> {
    match inst.kind() {
        ProblemKind::Tsp => Ok(()),
        ProblemKind::Cvrp => Err(Error::Unsupported(format!("{what} solves TSP only"))),
    }
}

fn distance_matrix(inst: &VrpInstance) -> Vec<Vec<f64>> {
    let n = inst.n();
    (0..n).map(|i| (0..n).map(|j| inst.dist(i, j)).collect()).collect()
}

/// Exhaustive search over tours starting at node 0 with the second node
/// smaller than the last.
pub fn brute_force_tsp(inst: &VrpInstance) -> Result<OracleResult> {
    require_tsp(inst, "brute force")?;
    let n = inst.n();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::SizeLimit {
            what: "brute force TSP",
            limit: BRUTE_FORCE_MAX,
            n,
        });
    }
    let d = distance_matrix(inst);
    struct Search<'a> {
        d: &'a [Vec<f64>],
        path: Vec<usize>,
        used: Vec<bool>,
        best: f64,
        best_path: Vec<usize>,
    }
    fn dfs(s: &mut Search, len: f64) {
        let n = s.used.len();
        let last = *s.path.last().expect("path starts at 0");
        if s.path.len() == n {
            if n > 2 && s.path[1] > s.path[n - 1] {
                return;
            }
            let total = len + s.d[last][0];
            if total < s.best {
                s.best = total;
                s.best_path = s.path.clone();
            }
            return;
        }
        for v in 1..n {
            if s.used[v] {
                continue;
            }
            let next = len + s.d[last][v];
            if next >= s.best {
                continue;
            }
            s.used[v] = true;
            s.path.push(v);
            dfs(s, next);
            s.path.pop();
            s.used[v] = false;
        }
    }
    let mut s = Search {
        d: &d,
        path: vec![0],
        used: vec![false; n],
        best: f64::INFINITY,
        best_path: Vec::new(),
    };
    s.used[0] = true;
    dfs(&mut s, 0.0);
    OracleResult::new(inst, s.best_path, OracleMethod::BruteForce)
}

/// Subset dynamic program over paths from node 0; `dp[S][j]` is the shortest
/// path from node 0 through `S` ending at `j`.
pub fn held_karp(inst: &VrpInstance) -> Result<OracleResult> {
    require_tsp(inst, "Held-Karp")?;
    let n = inst.n();
    if n > HELD_KARP_MAX {
        return Err(Error::SizeLimit {
            what: "Held-Karp",
            limit: HELD_KARP_MAX,
            n,
        });
    }
    let d = distance_matrix(inst);
    let (dp, parent) = path_dp(&d, 0, &(1..n).collect::<Vec<_>>());
    let m = n - 1;
    let full = (1usize << m) - 1;
    let mut best = f64::INFINITY;
    let mut end = 0;
    for j in 0..m {
        let c = dp[full * m + j] + d[j + 1][0];
        if c < best {
            best = c;
            end = j;
        }
    }
    let mut nodes = walk_back(&parent, full, end, m);
    for v in &mut nodes {
        *v += 1;
    }
    nodes.insert(0, 0);
    OracleResult::new(inst, nodes, OracleMethod::HeldKarp)
}

/// `dp[S * m + j]`: shortest path from `start` visiting exactly the members
/// `S` of `nodes` and ending at `nodes[j]`.
fn path_dp(d: &[Vec<f64>], start: usize, nodes: &[usize]) -> (Vec<f64>, Vec<u8>) {
    let m = nodes.len();
    let size = 1usize << m;
    let mut dp = vec![f64::INFINITY; size * m];
    let mut parent = vec![u8::MAX; size * m];
    for j in 0..m {
        dp[(1 << j) * m + j] = d[start][nodes[j]];
    }
    for set in 1..size {
        for j in 0..m {
            if set & (1 << j) == 0 {
                continue;
            }
            let cur = dp[set * m + j];
            if !cur.is_finite() {
                continue;
            }
            for k in 0..m {
                if set & (1 << k) != 0 {
                    continue;
                }
                let next = set | (1 << k);
                let c = cur + d[nodes[j]][nodes[k]];
                if c < dp[next * m + k] {
                    dp[next * m + k] = c;
                    parent[next * m + k] = j as u8;
                }
            }
        }
    }
    (dp, parent)
}

/// Positions (into the DP's node list) of the path ending at `end` over `set`.
fn walk_back(parent: &[u8], mut set: usize, mut end: usize, m: usize) -> Vec<usize> {
    let mut rev = Vec::new();
    loop {
        rev.push(end);
        let p = parent[set * m + end];
        set &= !(1 << end);
        if p == u8::MAX {
            break;
        }
        end = p as usize;
    }
    rev.reverse();
    rev
}

/// Exact CVRP for at most nine customers: optimal single routes for every
/// capacity-feasible customer subset, then an optimal set partition.
pub fn cvrp_exact_small(inst: &VrpInstance) -> Result<OracleResult> {
    let c = inst
        .capacitated()
        .ok_or_else(|| Error::Unsupported("cvrp_exact_small needs a CVRP instance".into()))?;
    let m = inst.size();
    if m > CVRP_EXACT_MAX {
        return Err(Error::SizeLimit {
            what: "exact CVRP",
            limit: CVRP_EXACT_MAX,
            n: m,
        });
    }
    let depot = c.depot;
    let customers: Vec<usize> = (0..inst.n()).filter(|&v| v != depot).collect();
    let d = distance_matrix(inst);
    let (dp, parent) = path_dp(&d, depot, &customers);
    let size = 1usize << m;
    let limit = c.raw_capacity * (1.0 + CAPACITY_TOLERANCE);
    // Best closed route and its last customer for every subset.
    let mut route = vec![(f64::INFINITY, 0usize); size];
    for (set, slot) in route.iter_mut().enumerate().skip(1) {
        let load: f64 = (0..m)
            .filter(|j| set & (1 << j) != 0)
            .map(|j| c.raw_demands[customers[j]])
            .sum();
        if load > limit {
            continue;
        }
        for j in 0..m {
            if set & (1 << j) != 0 {
                let cost = dp[set * m + j] + d[customers[j]][depot];
                if cost < slot.0 {
                    *slot = (cost, j);
                }
            }
        }
    }
    let mut best = vec![f64::INFINITY; size];
    let mut choice = vec![0usize; size];
    best[0] = 0.0;
    for set in 1..size {
        let low = set & set.wrapping_neg();
        let rest = set ^ low;
        // Subsets of `set` that contain its lowest member.
        let mut sub = rest;
        loop {
            let group = sub | low;
            let cost = route[group].0 + best[set ^ group];
            if cost < best[set] {
                best[set] = cost;
                choice[set] = group;
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    if !best[size - 1].is_finite() {
        return Err(Error::InvalidInstance("no capacity-feasible partition".into()));
    }
    let mut nodes = vec![depot];
    let mut set = size - 1;
    while set != 0 {
        let group = choice[set];
        for j in walk_back(&parent, group, route[group].1, m) {
            nodes.push(customers[j]);
        }
        nodes.push(depot);
        set ^= group;
    }
    OracleResult::new(inst, nodes, OracleMethod::CvrpExact)
}

/// Nearest-neighbour construction from a random start, then first-improvement
/// 2-opt until no move gains more than `1e-12`; best over `restarts`.
pub fn nn_2opt(inst: &VrpInstance, restarts: usize, seed: u64) -> Result<OracleResult> {
    require_tsp(inst, "nn_2opt")?;
    let n = inst.n();
    let d = distance_matrix(inst);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = stream(seed, r as u64);
        let start = rng.gen_range(0..n);
        let mut tour = nearest_neighbour(&d, start);
        two_opt(&d, &mut tour);
        let cost = cycle_len(&d, &tour);
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, tour));
        }
    }
    let (_, nodes) = best.expect("at least one restart");
    OracleResult::new(inst, nodes, OracleMethod::Nn2Opt)
}

fn nearest_neighbour(d: &[Vec<f64>], start: usize) -> Vec<usize> {
    let n = d.len();
    let mut used = vec![false; n];
    let mut tour = vec![start];
    used[start] = true;
    let mut cur = start;
    for _ in 1..n {
        let next = (0..n)
            .filter(|&v| !used[v])
            .min_by(|&a, &b| d[cur][a].total_cmp(&d[cur][b]))
            .expect("unvisited node left");
        used[next] = true;
        tour.push(next);
        cur = next;
    }
    tour
}

fn cycle_len(d: &[Vec<f64>], tour: &[usize]) -> f64 {
    let n = tour.len();
    (0..n).map(|i| d[tour[i]][tour[(i + 1) % n]]).sum()
}

/// Gain of replacing edges (i, i+1) and (j, j+1) by (i, j) and (i+1, j+1).
pub fn two_opt_delta(d: &[Vec<f64>], tour: &[usize], i: usize, j: usize) -> f64 {
    let n = tour.len();
    let (a, b) = (tour[i], tour[i + 1]);
    let (c, e) = (tour[j], tour[(j + 1) % n]);
    d[a][c] + d[b][e] - d[a][b] - d[c][e]
}

fn two_opt(d: &[Vec<f64>], tour: &mut [usize]) {
    let n = tour.len();
    if n < 4 {
        return;
    }
    'restart: loop {
        for i in 0..n - 2 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if two_opt_delta(d, tour, i, j) < -1e-12 {
                    tour[i + 1..=j].reverse();
                    continue 'restart;
                }
            }
        }
        break;
    }
}

/// True when no 2-opt move shortens the tour by more than `tol`.
pub fn is_two_opt_stable(inst: &VrpInstance, tour: &[usize], tol: f64) -> bool {
    let d = distance_matrix(inst);
    let n = tour.len();
    for i in 0..n.saturating_sub(2) {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if two_opt_delta(&d, tour, i, j) < -tol {
                return false;
            }
        }
    }
    true
}

/// Best available reference: exact when the size allows it, otherwise
/// nn_2opt with `restarts` restarts.
pub fn reference(inst: &VrpInstance, restarts: usize, seed: u64) -> Result<OracleResult> {
    match inst.kind() {
        ProblemKind::Tsp if inst.n() <= HELD_KARP_MAX => held_karp(inst),
        ProblemKind::Tsp => nn_2opt(inst, restarts, seed),
        ProblemKind::Cvrp => cvrp_exact_small(inst),
    }
}
