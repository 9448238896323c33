//! REINFORCE with a shared multi-start baseline, gradient averaging across
//! distribution-specific decoders, and Adam.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use routenet_tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::generate::{generate, DistributionSpec};
use crate::instance::VrpInstance;
use crate::policy::{write_atomic, Checkpoint, DecodeMode, Policy};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Instances per distribution per step.
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Training size range (inclusive); a fixed size when equal.
    pub n_min: usize,
    pub n_max: usize,
    /// One entry per decoder, in decoder order.
    pub distributions: Vec<DistributionSpec>,
    pub seed: u64,
    /// Multi-start rollouts per instance; defaults to the instance size.
    pub starts: Option<usize>,
    pub log_every: u64,
    pub checkpoint_every: Option<u64>,
    /// Sample one distribution per step, cycling, instead of all of them.
    pub round_robin: bool,
}

impl TrainConfig {
    pub fn new(distributions: Vec<DistributionSpec>, n: usize, steps: u64, batch_size: usize) -> Self {
        TrainConfig {
            batch_size,
            steps,
            lr: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            n_min: n,
            n_max: n,
            distributions,
            seed: 0,
            starts: None,
            log_every: 100,
            checkpoint_every: None,
            round_robin: false,
        }
    }

    pub fn validate(&self, policy: &Policy) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.n_min < 2 || self.n_min > self.n_max {
            return bad(format!("size range {}..={}", self.n_min, self.n_max));
        }
        if self.distributions.len() != policy.n_decoders() {
            return bad(format!(
                "{} distributions for {} decoders",
                self.distributions.len(),
                policy.n_decoders()
            ));
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        for d in &self.distributions {
            d.validate()?;
        }
        Ok(())
    }
}

/// Adam moments for every parameter tensor (encoder first, then decoders).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Update count per tensor; tensors without gradients are not advanced.
    t: Vec<u64>,
}

impl Adam {
    pub fn new(policy: &Policy, lr: f64, betas: (f64, f64), eps: f64) -> Self {
        let sizes: Vec<usize> = param_tensors(policy).map(Tensor::len).collect();
        Adam {
            lr,
            betas,
            eps,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: vec![0; sizes.len()],
        }
    }

    /// One update; `grads[i] == None` leaves tensor `i` and its moments alone.
    pub fn step(&mut self, policy: &mut Policy, grads: &[Option<Vec<f64>>]) {
        let (b1, b2) = self.betas;
        let tensors = policy
            .encoder
            .iter_mut()
            .chain(policy.decoders.iter_mut().flatten());
        for (i, t) in tensors.enumerate() {
            let Some(g) = &grads[i] else { continue };
            self.t[i] += 1;
            let step = self.t[i] as i32;
            let c1 = 1.0 - b1.powi(step);
            let c2 = 1.0 - b2.powi(step);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

fn param_tensors(policy: &Policy) -> impl Iterator<Item = &Tensor> {
    policy.encoder.iter().chain(policy.decoders.iter().flatten())
}

/// Flat index of decoder `i`'s first tensor in the optimizer's order.
fn decoder_offset(policy: &Policy, i: usize) -> usize {
    policy.encoder.len() + policy.decoders[..i].iter().map(Vec::len).sum::<usize>()
}

/// Loss, costs and gradients of one instance.
pub struct InstanceGrad {
    pub loss: f64,
    pub costs: Vec<f64>,
    pub encoder: Vec<Vec<f64>>,
    pub decoder: Vec<Vec<f64>>,
}

/// REINFORCE with the shared mean baseline over the instance's starts:
/// `loss = mean_s (c_s - mean c) * log p_s`.
pub fn instance_gradient(
    policy: &Policy,
    decoder: usize,
    inst: &VrpInstance,
    starts: usize,
    esf: Option<f64>,
    rng_seed: u64,
) -> Result<InstanceGrad> {
    let tape = Tape::new();
    let b = policy.bind(&tape, true, &[decoder])?;
    let mut rng = stream(rng_seed, 0);
    let r = policy.rollout(&b, inst, decoder, DecodeMode::Sample, starts, esf, &mut rng)?;
    let s = r.costs.len() as f64;
    let mean = r.costs.iter().sum::<f64>() / s;
    let w: Vec<f64> = r.costs.iter().map(|c| (c - mean) / s).collect();
    let weights = tape.constant(Tensor::matrix(w.len(), 1, w)?);
    let loss = r.log_probs.mul(&weights)?.sum();
    let lv = loss.value().data()[0];
    let grads = tape.backward(&loss)?;
    let take = |vars: &[routenet_tensor::Var]| -> Vec<Vec<f64>> {
        vars.iter().map(|v| grads.wrt(v).into_data()).collect()
    };
    Ok(InstanceGrad {
        loss: lv,
        costs: r.costs,
        encoder: take(b.encoder_vars()),
        decoder: take(b.decoder_vars(decoder).expect("bound decoder")),
    })
}

/// One distribution's batch routed to its decoder.
#[derive(Debug, Clone)]
pub struct Batch {
    pub decoder: usize,
    pub instances: Vec<VrpInstance>,
    /// Per-instance rollout seeds.
    pub seeds: Vec<u64>,
    pub esf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub decoder: usize,
    pub loss: f64,
    pub mean_cost: f64,
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>], w: f64) {
    for (a, g) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(g) {
            *x += w * y;
        }
    }
}

/// Mean gradients of one batch, accumulated in instance order.
fn batch_gradient(
    policy: &Policy,
    batch: &Batch,
    starts: Option<usize>,
    step: u64,
) -> Result<(BatchStats, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if batch.instances.is_empty() || batch.seeds.len() != batch.instances.len() {
        return Err(Error::Config("batch needs instances with one seed each".into()));
    }
    let enc_shapes: Vec<usize> = policy.encoder.iter().map(Tensor::len).collect();
    let dec_shapes: Vec<usize> = policy.decoders[batch.decoder].iter().map(Tensor::len).collect();
    let mut enc: Vec<Vec<f64>> = enc_shapes.iter().map(|&s| vec![0.0; s]).collect();
    let mut dec: Vec<Vec<f64>> = dec_shapes.iter().map(|&s| vec![0.0; s]).collect();
    let w = 1.0 / batch.instances.len() as f64;
    let (mut loss, mut cost) = (0.0, 0.0);
    let chunk = rayon::current_num_threads().max(1) * 2;
    let items: Vec<(usize, &VrpInstance)> = batch.instances.iter().enumerate().collect();
    for part in items.chunks(chunk) {
        let results: Vec<Result<InstanceGrad>> = part
            .par_iter()
            .map(|&(i, inst)| {
                let s = starts.unwrap_or(inst.size()).min(inst.size());
                instance_gradient(policy, batch.decoder, inst, s, batch.esf, batch.seeds[i])
            })
            .collect();
        for (res, &(i, _)) in results.into_iter().zip(part) {
            let g = res?;
            if !g.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    seed: batch.seeds[i],
                });
            }
            loss += w * g.loss;
            cost += w * g.costs.iter().sum::<f64>() / g.costs.len() as f64;
            add_into(&mut enc, &g.encoder, w);
            add_into(&mut dec, &g.decoder, w);
        }
    }
    let stats = BatchStats {
        decoder: batch.decoder,
        loss,
        mean_cost: cost,
    };
    Ok((stats, enc, dec))
}

/// Gradients of one multi-distribution step, laid out in optimizer order:
/// the encoder receives the mean of the per-batch encoder gradients and
/// decoder `i` receives `1/len(batches)` of its own batch gradient.
pub fn multi_distribution_gradient(
    policy: &Policy,
    batches: &[Batch],
    starts: Option<usize>,
    step: u64,
) -> Result<(Vec<BatchStats>, Vec<Option<Vec<f64>>>)> {
    if batches.is_empty() {
        return Err(Error::Config("no batches".into()));
    }
    let k = batches.len() as f64;
    let total = param_tensors(policy).count();
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; total];
    let mut stats = Vec::with_capacity(batches.len());
    for batch in batches {
        if batch.decoder >= policy.n_decoders() {
            return Err(Error::Config(format!("decoder {} out of range", batch.decoder)));
        }
        let (st, enc, dec) = batch_gradient(policy, batch, starts, step)?;
        for (i, g) in enc.into_iter().enumerate() {
            let slot = grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in slot.iter_mut().zip(&g) {
                *a += b / k;
            }
        }
        let off = decoder_offset(policy, batch.decoder);
        for (i, g) in dec.into_iter().enumerate() {
            let slot = grads[off + i].get_or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in slot.iter_mut().zip(&g) {
                *a += b / k;
            }
        }
        stats.push(st);
    }
    Ok((stats, grads))
}

/// Averaged multi-distribution gradient followed by one Adam step.
pub fn multi_distribution_step(
    policy: &mut Policy,
    adam: &mut Adam,
    batches: &[Batch],
    starts: Option<usize>,
    step: u64,
) -> Result<Vec<BatchStats>> {
    let (stats, grads) = multi_distribution_gradient(policy, batches, starts, step)?;
    adam.step(policy, &grads);
    Ok(stats)
}

/// Single-decoder update: encoder and `batch.decoder` only.
pub fn reinforce_step(
    policy: &mut Policy,
    adam: &mut Adam,
    batch: &Batch,
    starts: Option<usize>,
    step: u64,
) -> Result<BatchStats> {
    let mut s = multi_distribution_step(policy, adam, std::slice::from_ref(batch), starts, step)?;
    Ok(s.remove(0))
}

/// Everything needed to continue training bitwise.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub policy: Policy,
    pub adam: Adam,
    /// Number of completed steps.
    pub step: u64,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    policy: Checkpoint,
    adam: Adam,
    step: u64,
    config: TrainConfig,
}

impl TrainState {
    pub fn new(mut policy: Policy, config: TrainConfig) -> Result<Self> {
        config.validate(&policy)?;
        policy.training_record = config
            .distributions
            .iter()
            .map(|d| d.kind.to_string())
            .collect();
        let adam = Adam::new(&policy, config.lr, config.betas, config.eps);
        Ok(TrainState {
            policy,
            adam,
            step: 0,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = StateFile {
            policy: self.policy.to_checkpoint(),
            adam: self.adam.clone(),
            step: self.step,
            config: self.config.clone(),
        };
        write_atomic(path, serde_json::to_string(&file)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: StateFile = serde_json::from_str(&text)?;
        Ok(TrainState {
            policy: Policy::from_checkpoint(f.policy)?,
            adam: f.adam,
            step: f.step,
            config: f.config,
        })
    }

    /// Batches for step `step`, derived only from the seed and step index.
    pub fn batches_for(&self, step: u64) -> Result<Vec<Batch>> {
        let c = &self.config;
        let n = if c.n_min == c.n_max {
            c.n_min
        } else {
            stream(derive_seed(c.seed, &[step, u64::MAX]), 0).gen_range(c.n_min..=c.n_max)
        };
        let dists: Vec<usize> = if c.round_robin {
            vec![(step % c.distributions.len() as u64) as usize]
        } else {
            (0..c.distributions.len()).collect()
        };
        let esf = self.policy.config.esf_mode.factor(n)?;
        dists
            .into_iter()
            .map(|i| {
                let base = derive_seed(c.seed, &[step, i as u64]);
                let spec = DistributionSpec {
                    seed: base,
                    ..c.distributions[i].clone()
                };
                let instances = generate(&spec, n, c.batch_size, self.policy.config.kind)?
                    .into_iter()
                    .map(|inst| inst.normalize_coords())
                    .collect::<Result<Vec<_>>>()?;
                let seeds = (0..c.batch_size as u64)
                    .map(|j| derive_seed(base, &[j, 1]))
                    .collect();
                Ok(Batch {
                    decoder: i,
                    instances,
                    seeds,
                    esf,
                })
            })
            .collect()
    }

    /// Runs one step and returns its per-batch statistics.
    pub fn step_once(&mut self) -> Result<Vec<BatchStats>> {
        let batches = self.batches_for(self.step)?;
        let stats = multi_distribution_step(
            &mut self.policy,
            &mut self.adam,
            &batches,
            self.config.starts,
            self.step,
        )?;
        self.step += 1;
        Ok(stats)
    }
}

/// One CSV metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub distribution: String,
    pub mean_cost: f64,
    pub loss: f64,
    pub esf_value: f64,
    pub wallclock: f64,
}

/// Where `train` writes its artifacts; all optional.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub metrics_csv: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Trains until `state.config.steps` steps are complete, logging running
/// means every `log_every` steps. Returns the logged rows.
pub fn train(state: &mut TrainState, out: &TrainOutputs) -> Result<Vec<MetricsRow>> {
    let start = Instant::now();
    let names: Vec<String> = state.policy.training_record.clone();
    let mut sums = vec![(0.0, 0.0, 0usize); names.len()];
    let mut rows = Vec::new();
    while state.step < state.config.steps {
        let stats = state.step_once()?;
        for s in &stats {
            let e = &mut sums[s.decoder];
            e.0 += s.mean_cost;
            e.1 += s.loss;
            e.2 += 1;
        }
        let done = state.step;
        if done.is_multiple_of(state.config.log_every) || done == state.config.steps {
            let esf = state
                .policy
                .config
                .esf_mode
                .factor(state.config.n_max)?
                .unwrap_or(1.0);
            let mut fresh = Vec::new();
            for (i, e) in sums.iter_mut().enumerate() {
                if e.2 == 0 {
                    continue;
                }
                fresh.push(MetricsRow {
                    step: done,
                    distribution: names[i].clone(),
                    mean_cost: e.0 / e.2 as f64,
                    loss: e.1 / e.2 as f64,
                    esf_value: esf,
                    wallclock: start.elapsed().as_secs_f64(),
                });
                *e = (0.0, 0.0, 0);
            }
            if let Some(p) = &out.metrics_csv {
                append_metrics(p, &fresh)?;
            }
            rows.extend(fresh);
        }
        if let (Some(every), Some(p)) = (state.config.checkpoint_every, &out.checkpoint) {
            if done.is_multiple_of(every) || done == state.config.steps {
                state.save(p)?;
            }
        }
    }
    Ok(rows)
}

fn append_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    w.into_inner()
        .map_err(|e| Error::Serde(e.to_string()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::DistributionKind;
    use crate::instance::ProblemKind;
    use crate::policy::PolicyConfig;

    fn tiny_policy(n_decoders: usize) -> Policy {
        let cfg = PolicyConfig {
            encoder_layers: 1,
            heads: 2,
            d_h: 8,
            ff_dim: 16,
            n_decoders,
            ..PolicyConfig::toy(ProblemKind::Tsp)
        };
        Policy::new(cfg, 3).unwrap()
    }

    #[test]
    fn adam_skips_missing_gradients() {
        let mut p = tiny_policy(2);
        let before = p.clone();
        let mut adam = Adam::new(&p, 1e-2, (0.9, 0.999), 1e-8);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; param_tensors(&p).count()];
        grads[0] = Some(vec![1.0; p.encoder[0].len()]);
        adam.step(&mut p, &grads);
        assert_ne!(p.encoder[0], before.encoder[0]);
        assert_eq!(p.encoder[1..], before.encoder[1..]);
        assert_eq!(p.decoders, before.decoders);
        // First Adam step moves every coordinate by lr.
        for (a, b) in p.encoder[0].data().iter().zip(before.encoder[0].data()) {
            assert!((b - a - 1e-2).abs() < 1e-9);
        }
    }

    #[test]
    fn batches_depend_only_on_step() {
        let spec = DistributionSpec::new(DistributionKind::Uniform, 0);
        let cfg = TrainConfig::new(vec![spec], 6, 10, 2);
        let a = TrainState::new(tiny_policy(1), cfg.clone()).unwrap();
        let b = TrainState::new(tiny_policy(1), cfg).unwrap();
        let (x, y) = (a.batches_for(3).unwrap(), b.batches_for(3).unwrap());
        assert_eq!(x[0].instances, y[0].instances);
        assert_eq!(x[0].seeds, y[0].seeds);
        assert_ne!(a.batches_for(4).unwrap()[0].instances, x[0].instances);
    }

    #[test]
    fn config_must_match_decoders() {
        let spec = DistributionSpec::new(DistributionKind::Uniform, 0);
        let cfg = TrainConfig::new(vec![spec], 6, 10, 2);
        assert!(TrainState::new(tiny_policy(2), cfg).is_err());
    }
}
