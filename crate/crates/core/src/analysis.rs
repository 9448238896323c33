//! Attention entropy checks, scaling-factor sweeps and decoder choice
//! proportions.

use std::cell::RefCell;
use std::io::Write;
use std::rc::Rc;

use rayon::prelude::*;
use routenet_tensor::Tape;
use serde::{Deserialize, Serialize};

use crate::bench::{gap, mean_margin};
use crate::inference::{solve_all, solve_unsamplable, DecoderChoice, EsfChoice, InferenceConfig};
use crate::instance::VrpInstance;
use crate::policy::{DecodeMode, Policy};
use crate::rng::stream;
use crate::{Error, Result};

/// `-sum p ln p` with `0 ln 0 = 0`.
pub fn row_entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain("entropy needs finite nonnegative weights".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("weights sum to {s}, not 1")));
    }
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>())
}

/// `ln n + min(row) - max(row)`, a lower bound on the softmax entropy.
pub fn entropy_lower_bound(row: &[f64]) -> f64 {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (row.len() as f64).ln() + lo - hi
}

/// Stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - hi).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Running record of softmax rows checked against the entropy bound.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyAudit {
    pub rows: u64,
    /// Smallest `entropy - bound` seen.
    pub min_slack: f64,
    /// Rows with slack below `-1e-9`.
    pub violations: u64,
    /// Largest `entropy - ln n` seen (should stay <= 0).
    pub max_excess: f64,
}

impl EntropyAudit {
    pub fn new() -> Self {
        EntropyAudit {
            rows: 0,
            min_slack: f64::INFINITY,
            violations: 0,
            max_excess: f64::NEG_INFINITY,
        }
    }

    pub fn observe(&mut self, logits: &[f64], probs: &[f64]) {
        let h = -probs
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|v| v * v.ln())
            .sum::<f64>();
        let slack = h - entropy_lower_bound(logits);
        self.rows += 1;
        self.min_slack = self.min_slack.min(slack);
        self.max_excess = self.max_excess.max(h - (logits.len() as f64).ln());
        if slack < -1e-9 {
            self.violations += 1;
        }
    }

    pub fn merge(&mut self, other: &EntropyAudit) {
        self.rows += other.rows;
        self.min_slack = self.min_slack.min(other.min_slack);
        self.max_excess = self.max_excess.max(other.max_excess);
        self.violations += other.violations;
    }
}

/// Decodes every instance greedily with every decoder while checking each
/// softmax row the policy produces against the entropy bound.
pub fn audit_policy_entropy(policy: &Policy, insts: &[VrpInstance], cfg: &InferenceConfig) -> Result<EntropyAudit> {
    let parts: Vec<Result<EntropyAudit>> = insts
        .par_iter()
        .map(|inst| {
            let audit = Rc::new(RefCell::new(EntropyAudit::new()));
            let tape = Tape::new();
            let sink = Rc::clone(&audit);
            tape.set_softmax_probe(Some(Box::new(move |z: &[f64], p: &[f64]| {
                sink.borrow_mut().observe(z, p)
            })));
            let decoders: Vec<usize> = (0..policy.n_decoders()).collect();
            let b = policy.bind(&tape, false, &decoders)?;
            let esf = cfg.esf_for(policy, inst.size())?;
            let norm = inst.normalize_coords()?;
            let enc = policy.encode(&b, &norm, esf)?;
            for &d in &decoders {
                let prep = policy.prepare(&b, d, &enc)?;
                let starts = cfg.starts.unwrap_or(norm.size()).min(norm.size());
                let state = crate::policy::RolloutState::new(&norm, starts)?;
                let mut rng = stream(cfg.seed, d as u64);
                policy.rollout_from(&b, &prep, &norm, state, DecodeMode::Greedy, esf, &mut rng)?;
            }
            tape.set_softmax_probe(None);
            let out = audit.borrow().clone();
            Ok(out)
        })
        .collect();
    let mut total = EntropyAudit::new();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub model_id: String,
    pub test_size: usize,
    pub grid: Vec<f64>,
    pub mean_gaps: Vec<f64>,
    pub margins: Vec<f64>,
    /// Gap with no scaling at all.
    pub baseline_gap: f64,
    /// The prescribed factor and its gap.
    pub esf_value: f64,
    pub esf_gap: f64,
}

fn mean_gap(policy: &Policy, insts: &[VrpInstance], refs: &[f64], cfg: &InferenceConfig) -> Result<(f64, f64)> {
    let sols = solve_all(policy, insts, cfg)?;
    let gaps = sols
        .iter()
        .zip(refs)
        .map(|(s, &r)| Ok(gap(s.tour.cost, r)?.pct))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_margin(&gaps))
}

/// Mean gap vs `refs` for every fixed multiplier in `grid`, plus the
/// unscaled baseline and the prescribed `esf_value`.
pub fn sweep_scaling(
    policy: &Policy,
    model_id: &str,
    insts: &[VrpInstance],
    refs: &[f64],
    grid: &[f64],
    esf_value: f64,
    cfg: &InferenceConfig,
) -> Result<SweepResult> {
    if insts.is_empty() || insts.len() != refs.len() {
        return Err(Error::Config("need one reference per evaluation instance".into()));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|&f| !(f > 0.0 && f <= 2.0)) {
        return Err(Error::Config("grid must be strictly increasing within (0, 2]".into()));
    }
    let with = |esf: EsfChoice| InferenceConfig { esf, ..cfg.clone() };
    let mut mean_gaps = Vec::with_capacity(grid.len());
    let mut margins = Vec::with_capacity(grid.len());
    for &f in grid {
        let (g, m) = mean_gap(policy, insts, refs, &with(EsfChoice::Fixed(f)))?;
        mean_gaps.push(g);
        margins.push(m);
    }
    let baseline_gap = mean_gap(policy, insts, refs, &with(EsfChoice::Mode(crate::EsfMode::Off)))?.0;
    let esf_gap = mean_gap(policy, insts, refs, &with(EsfChoice::Fixed(esf_value)))?.0;
    Ok(SweepResult {
        model_id: model_id.to_string(),
        test_size: insts[0].size(),
        grid: grid.to_vec(),
        mean_gaps,
        margins,
        baseline_gap,
        esf_value,
        esf_gap,
    })
}

pub fn write_sweep_csv<W: Write>(r: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["factor", "mean_gap", "margin_95"])?;
    for ((f, g), m) in r.grid.iter().zip(&r.mean_gaps).zip(&r.margins) {
        w.write_record([f.to_string(), g.to_string(), m.to_string()])?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub distribution: String,
    pub decoder: usize,
    pub percent: f64,
}

/// Share of instances on which each decoder gives the cheapest tour, per
/// distribution; tied decoders split the credit equally.
pub fn decoder_choice_proportions(
    policy: &Policy,
    eval_sets: &[(String, Vec<VrpInstance>)],
    cfg: &InferenceConfig,
) -> Result<Vec<ProportionRow>> {
    let k = policy.n_decoders();
    if k < 2 {
        return Err(Error::Config("proportions need at least two decoders".into()));
    }
    let cfg = InferenceConfig {
        decoder: DecoderChoice::MinOverAll,
        ..cfg.clone()
    };
    let mut rows = Vec::new();
    for (name, insts) in eval_sets {
        if insts.is_empty() {
            return Err(Error::Config(format!("empty evaluation set {name}")));
        }
        let sols: Vec<_> = insts
            .par_iter()
            .map(|i| solve_unsamplable(policy, i, &cfg))
            .collect::<Result<_>>()?;
        let mut credit = vec![0.0; k];
        for s in &sols {
            let costs: Vec<f64> = s.per_decoder.iter().map(|c| c.expect("all decoders run")).collect();
            let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
            let winners: Vec<usize> = (0..k).filter(|&d| costs[d] == best).collect();
            for &d in &winners {
                credit[d] += 1.0 / winners.len() as f64;
            }
        }
        for (d, c) in credit.iter().enumerate() {
            rows.push(ProportionRow {
                distribution: name.clone(),
                decoder: d,
                percent: 100.0 * c / insts.len() as f64,
            });
        }
    }
    Ok(rows)
}

pub fn write_proportions_csv<W: Write>(rows: &[ProportionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}
