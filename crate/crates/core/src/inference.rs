//! Greedy / sampling / augmented decoding and decoder selection.

use rayon::prelude::*;
use routenet_tensor::Tape;
use serde::{Deserialize, Serialize};

use crate::instance::{tour_cost, Tour, VrpInstance};
use crate::policy::{DecodeMode, EsfMode, Policy, RolloutState};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    Greedy,
    /// `k` sampled rollouts per start.
    Sample(usize),
}

/// Where the attention scaling factor comes from at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EsfChoice {
    /// The policy's configured mode.
    Policy,
    Mode(EsfMode),
    /// A fixed multiplier regardless of size.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderChoice {
    Fixed(usize),
    MinOverAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub mode: SearchMode,
    pub aug8: bool,
    /// Multi-start count; defaults to the instance size.
    pub starts: Option<usize>,
    pub esf: EsfChoice,
    pub decoder: DecoderChoice,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            mode: SearchMode::Greedy,
            aug8: false,
            starts: None,
            esf: EsfChoice::Policy,
            decoder: DecoderChoice::Fixed(0),
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self, policy: &Policy) -> Result<()> {
        if let SearchMode::Sample(0) = self.mode {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if let DecoderChoice::Fixed(i) = self.decoder {
            if i >= policy.n_decoders() {
                return Err(Error::Config(format!("decoder {i} of {}", policy.n_decoders())));
            }
        }
        if let EsfChoice::Fixed(f) = self.esf {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("scaling factor {f}")));
            }
        }
        if self.starts == Some(0) {
            return Err(Error::Config("starts must be at least 1".into()));
        }
        Ok(())
    }

    /// Scaling factor for an instance of the given size.
    pub fn esf_for(&self, policy: &Policy, size: usize) -> Result<Option<f64>> {
        match self.esf {
            EsfChoice::Policy => policy.config.esf_mode.factor(size),
            EsfChoice::Mode(m) => m.factor(size),
            EsfChoice::Fixed(f) => Ok(Some(f)),
        }
    }
}

/// Best tour found, in the instance's own coordinate frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub tour: Tour,
    pub decoder: usize,
    /// Index of the winning symmetry (0 = identity).
    pub augmentation: usize,
    /// Best cost per decoder; `None` for decoders not run.
    pub per_decoder: Vec<Option<f64>>,
}

/// Min-cost tour over augmentations x decoders x samples x starts.
pub fn solve(policy: &Policy, inst: &VrpInstance, cfg: &InferenceConfig) -> Result<Solution> {
    cfg.validate(policy)?;
    let decoders: Vec<usize> = match cfg.decoder {
        DecoderChoice::Fixed(i) => vec![i],
        DecoderChoice::MinOverAll => (0..policy.n_decoders()).collect(),
    };
    let normalized = inst.normalize_coords()?;
    let variants = if cfg.aug8 {
        normalized.augment8()
    } else {
        vec![normalized]
    };
    let esf = cfg.esf_for(policy, inst.size())?;
    let starts = cfg.starts.unwrap_or(inst.size()).min(inst.size());
    let mut per_decoder: Vec<Option<f64>> = vec![None; policy.n_decoders()];
    let mut best: Option<(f64, Vec<usize>, usize, usize)> = None;
    for (a, variant) in variants.iter().enumerate() {
        let tape = Tape::new();
        let b = policy.bind(&tape, false, &decoders)?;
        let enc = policy.encode(&b, variant, esf)?;
        for &d in &decoders {
            let prep = policy.prepare(&b, d, &enc)?;
            let (mode, rounds) = match cfg.mode {
                SearchMode::Greedy => (DecodeMode::Greedy, 1),
                SearchMode::Sample(k) => (DecodeMode::Sample, k),
            };
            let base = derive_seed(cfg.seed, &[a as u64, d as u64]);
            for round in 0..rounds {
                let mut rng = stream(base, round as u64);
                let state = RolloutState::new(variant, starts)?;
                let r = policy.rollout_from(&b, &prep, variant, state, mode, esf, &mut rng)?;
                for tour in r.tours {
                    let cost = tour_cost(inst, &tour)?;
                    let slot = &mut per_decoder[d];
                    if slot.is_none_or(|c| cost < c) {
                        *slot = Some(cost);
                    }
                    if best.as_ref().is_none_or(|b| cost < b.0) {
                        best = Some((cost, tour, d, a));
                    }
                }
            }
        }
    }
    let (cost, nodes, decoder, augmentation) = best.expect("at least one candidate");
    Ok(Solution {
        tour: Tour { nodes, cost },
        decoder,
        augmentation,
        per_decoder,
    })
}

/// Runs every decoder on shared embeddings and keeps the cheapest tour.
pub fn solve_unsamplable(policy: &Policy, inst: &VrpInstance, cfg: &InferenceConfig) -> Result<Solution> {
    let cfg = InferenceConfig {
        decoder: DecoderChoice::MinOverAll,
        ..cfg.clone()
    };
    solve(policy, inst, &cfg)
}

/// [`solve`] over many instances, parallel across instances.
pub fn solve_all(policy: &Policy, insts: &[VrpInstance], cfg: &InferenceConfig) -> Result<Vec<Solution>> {
    insts.par_iter().map(|i| solve(policy, i, cfg)).collect()
}

/// Picks the decoder with the lowest mean greedy cost on `m` validation
/// instances drawn from `sampler` (ties go to the lowest index).
pub fn select_decoder<F>(policy: &Policy, sampler: F, m: usize, cfg: &InferenceConfig) -> Result<usize>
where
    F: FnOnce(usize) -> Result<Vec<VrpInstance>>,
{
    if m == 0 {
        return Err(Error::Selection("need at least one validation instance".into()));
    }
    if policy.n_decoders() == 1 {
        return Ok(0);
    }
    let insts = sampler(m).map_err(|e| Error::Selection(format!("sampler failed: {e}")))?;
    if insts.len() != m {
        return Err(Error::Selection(format!("sampler returned {} of {m} instances", insts.len())));
    }
    let means = decoder_mean_costs(policy, &insts, cfg)?;
    let mut best = 0;
    for (i, &c) in means.iter().enumerate() {
        if c < means[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Mean greedy cost of every decoder over `insts`, summed in sorted order so
/// the result does not depend on instance order.
pub fn decoder_mean_costs(policy: &Policy, insts: &[VrpInstance], cfg: &InferenceConfig) -> Result<Vec<f64>> {
    let greedy = InferenceConfig {
        mode: SearchMode::Greedy,
        decoder: DecoderChoice::MinOverAll,
        ..cfg.clone()
    };
    let sols = solve_all(policy, insts, &greedy)?;
    (0..policy.n_decoders())
        .map(|d| {
            let mut costs: Vec<f64> = sols
                .iter()
                .map(|s| s.per_decoder[d].expect("all decoders run"))
                .collect();
            costs.sort_by(f64::total_cmp);
            Ok(costs.iter().sum::<f64>() / costs.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate, DistributionKind, DistributionSpec};
    use crate::instance::ProblemKind;
    use crate::policy::PolicyConfig;

    fn policy(n_decoders: usize) -> Policy {
        let cfg = PolicyConfig {
            encoder_layers: 1,
            heads: 2,
            d_h: 8,
            ff_dim: 16,
            n_decoders,
            ..PolicyConfig::toy(ProblemKind::Tsp)
        };
        Policy::new(cfg, 9).unwrap()
    }

    fn insts(n: usize, count: usize) -> Vec<VrpInstance> {
        generate(&DistributionSpec::new(DistributionKind::Uniform, 13), n, count, ProblemKind::Tsp).unwrap()
    }

    #[test]
    fn aug8_never_worse() {
        let p = policy(1);
        for inst in insts(8, 5) {
            let plain = solve(&p, &inst, &InferenceConfig::default()).unwrap();
            let aug = InferenceConfig {
                aug8: true,
                ..InferenceConfig::default()
            };
            assert!(solve(&p, &inst, &aug).unwrap().tour.cost <= plain.tour.cost);
        }
    }

    #[test]
    fn more_samples_never_worse() {
        let p = policy(1);
        let inst = insts(7, 1).remove(0);
        let mut prev = f64::INFINITY;
        for k in [1, 2, 4, 8] {
            let cfg = InferenceConfig {
                mode: SearchMode::Sample(k),
                ..InferenceConfig::default()
            };
            let c = solve(&p, &inst, &cfg).unwrap().tour.cost;
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn single_decoder_selection_is_zero() {
        let p = policy(1);
        let cfg = InferenceConfig::default();
        let idx = select_decoder(&p, |_| Err(Error::Selection("unused".into())), 4, &cfg).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn identical_decoders_tie_to_zero() {
        let mut p = policy(3);
        p.decoders[1] = p.decoders[0].clone();
        p.decoders[2] = p.decoders[0].clone();
        let cfg = InferenceConfig::default();
        let idx = select_decoder(&p, |m| Ok(insts(6, m)), 5, &cfg).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn sampler_failure_is_selection_error() {
        let p = policy(2);
        let r = select_decoder(&p, |_| Err(Error::Config("boom".into())), 3, &InferenceConfig::default());
        assert!(matches!(r, Err(Error::Selection(_))));
    }
}
