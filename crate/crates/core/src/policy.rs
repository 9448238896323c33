//! Attention encoder with distribution-specific decoders.
//!
//! One shared encoder embeds the nodes; each of the `n_decoders` light
//! decoders turns those embeddings into a pointer distribution over the next
//! node. The entropy-based scaling factor multiplies the softmax logits of
//! every attention call (and, by default, the pointer logits).

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use routenet_tensor::nn::{layer_norm, linear, logit_scale, multi_head_attention};
use routenet_tensor::{Mask, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::instance::{tour_cost, ProblemKind, VrpInstance, CAPACITY_TOLERANCE};
use crate::rng::stream;
use crate::{Error, Result};

/// How the attention scaling factor is derived from the instance size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "n", rename_all = "snake_case")]
pub enum EsfMode {
    Off,
    /// `log_{n_tr} n`.
    FixedTrain(usize),
    /// `log_{n_b} n`, applied at train and test time alike.
    Baseline(usize),
}

impl EsfMode {
    /// The factor at size `n`; `None` when scaling is off.
    pub fn factor(self, n: usize) -> Result<Option<f64>> {
        match self {
            EsfMode::Off => Ok(None),
            EsfMode::FixedTrain(base) | EsfMode::Baseline(base) => esf_ratio(base, n).map(Some),
        }
    }
}

impl std::fmt::Display for EsfMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EsfMode::Off => f.write_str("off"),
            EsfMode::FixedTrain(n) => write!(f, "fixed:{n}"),
            EsfMode::Baseline(n) => write!(f, "base:{n}"),
        }
    }
}

impl std::str::FromStr for EsfMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad esf mode `{s}` (off, fixed:<n>, base:<n>)"));
        if s.eq_ignore_ascii_case("off") {
            return Ok(EsfMode::Off);
        }
        let (tag, n) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        if n < 2 {
            return Err(bad());
        }
        match tag.trim().to_ascii_lowercase().as_str() {
            "fixed" => Ok(EsfMode::FixedTrain(n)),
            "base" => Ok(EsfMode::Baseline(n)),
            _ => Err(bad()),
        }
    }
}

fn esf_ratio(base: usize, n: usize) -> Result<f64> {
    if base < 2 || n < 2 {
        return Err(Error::Domain(format!(
            "scaling factor needs sizes >= 2, got base {base}, n {n}"
        )));
    }
    Ok((n as f64).ln() / (base as f64).ln())
}

/// Scalar factor at size `n`: 1 when off.
pub fn esf_value(mode: EsfMode, n: usize) -> Result<f64> {
    Ok(mode.factor(n)?.unwrap_or(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: ProblemKind,
    pub encoder_layers: usize,
    pub heads: usize,
    pub d_h: usize,
    pub ff_dim: usize,
    pub logit_clip: f64,
    pub n_decoders: usize,
    pub esf_mode: EsfMode,
    /// Apply the factor to the pointer logits as well.
    pub esf_pointer: bool,
}

impl PolicyConfig {
    /// 3 layers, 4 heads, width 64.
    pub fn toy(kind: ProblemKind) -> Self {
        PolicyConfig {
            kind,
            encoder_layers: 3,
            heads: 4,
            d_h: 64,
            ff_dim: 256,
            logit_clip: 10.0,
            n_decoders: 1,
            esf_mode: EsfMode::Off,
            esf_pointer: true,
        }
    }

    /// 6 layers, 8 heads, width 128.
    pub fn full(kind: ProblemKind) -> Self {
        PolicyConfig {
            encoder_layers: 6,
            heads: 8,
            d_h: 128,
            ff_dim: 512,
            ..Self::toy(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.d_h == 0 || !self.d_h.is_multiple_of(self.heads) {
            return bad(format!("d_h {} not divisible by {} heads", self.d_h, self.heads));
        }
        if self.n_decoders == 0 {
            return bad("need at least one decoder".into());
        }
        if !(self.logit_clip > 0.0 && self.logit_clip.is_finite()) {
            return bad(format!("logit clip {}", self.logit_clip));
        }
        if self.ff_dim == 0 {
            return bad("ff_dim must be positive".into());
        }
        if let EsfMode::FixedTrain(n) | EsfMode::Baseline(n) = self.esf_mode {
            if n < 2 {
                return bad(format!("esf operand {n} < 2"));
            }
        }
        Ok(())
    }

    fn encoder_layout(&self) -> Vec<(String, [usize; 2])> {
        let (d, ff) = (self.d_h, self.ff_dim);
        let mut out: Vec<(String, [usize; 2])> = match self.kind {
            ProblemKind::Tsp => vec![("embed.w".into(), [2, d]), ("embed.b".into(), [1, d])],
            ProblemKind::Cvrp => vec![
                ("embed_depot.w".into(), [2, d]),
                ("embed_depot.b".into(), [1, d]),
                ("embed.w".into(), [3, d]),
                ("embed.b".into(), [1, d]),
            ],
        };
        for l in 0..self.encoder_layers {
            let shapes = [
                ("wq", [d, d]),
                ("wk", [d, d]),
                ("wv", [d, d]),
                ("wo", [d, d]),
                ("bo", [1, d]),
                ("norm1.g", [1, d]),
                ("norm1.b", [1, d]),
                ("ff1.w", [d, ff]),
                ("ff1.b", [1, ff]),
                ("ff2.w", [ff, d]),
                ("ff2.b", [1, d]),
                ("norm2.g", [1, d]),
                ("norm2.b", [1, d]),
            ];
            out.extend(shapes.iter().map(|(n, s)| (format!("layer{l}.{n}"), *s)));
        }
        out
    }

    fn decoder_layout(&self) -> Vec<(String, [usize; 2])> {
        let d = self.d_h;
        let third = match self.kind {
            ProblemKind::Tsp => ("ctx_first", [d, d]),
            ProblemKind::Cvrp => ("ctx_capacity", [1, d]),
        };
        [
            ("ctx_graph", [d, d]),
            ("ctx_last", [d, d]),
            third,
            ("wk", [d, d]),
            ("wv", [d, d]),
            ("wo", [d, d]),
            ("bo", [1, d]),
            ("pointer_k", [d, d]),
        ]
        .iter()
        .map(|(n, s)| (n.to_string(), *s))
        .collect()
    }
}

const ENC_LAYER: usize = 13;
const DEC_GRAPH: usize = 0;
const DEC_LAST: usize = 1;
const DEC_THIRD: usize = 2;
const DEC_WK: usize = 3;
const DEC_WV: usize = 4;
const DEC_WO: usize = 5;
const DEC_BO: usize = 6;
const DEC_PK: usize = 7;

fn init_group(layout: &[(String, [usize; 2])], rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut fan_in = 1;
    layout
        .iter()
        .map(|(name, [r, c])| {
            if name.contains("norm") {
                let v = if name.ends_with(".g") { 1.0 } else { 0.0 };
                return Tensor::filled(*r, *c, v);
            }
            // A bias shares the fan-in of the weight listed just before it.
            if !(name.ends_with(".b") || name.ends_with("bo")) {
                fan_in = *r;
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..r * c).map(|_| rng.gen_range(-bound..=bound)).collect();
            Tensor::matrix(*r, *c, data).expect("nonempty layout shape")
        })
        .collect()
}

/// Shared encoder plus `n_decoders` distribution-specific decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub encoder: Vec<Tensor>,
    pub decoders: Vec<Vec<Tensor>>,
    /// Training distribution bound to each decoder.
    pub training_record: Vec<String>,
    pub seed: u64,
}

/// Decoding rule per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Policy parameters registered on one tape.
pub struct Bound<'t> {
    tape: &'t Tape,
    enc: Vec<Var<'t>>,
    dec: Vec<Option<Vec<Var<'t>>>>,
}

impl<'t> Bound<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn encoder_vars(&self) -> &[Var<'t>] {
        &self.enc
    }

    pub fn decoder_vars(&self, i: usize) -> Option<&[Var<'t>]> {
        self.dec.get(i).and_then(|d| d.as_deref())
    }

    /// Swaps encoder tensor `i` for `v`, e.g. to differentiate through it.
    pub fn replace_encoder(&mut self, i: usize, v: Var<'t>) -> Result<()> {
        let slot = self
            .enc
            .get_mut(i)
            .ok_or_else(|| Error::Config(format!("encoder tensor {i} out of range")))?;
        if slot.value().shape() != v.value().shape() {
            return Err(Error::Config(format!("encoder tensor {i} shape mismatch")));
        }
        *slot = v;
        Ok(())
    }

    /// Swaps tensor `i` of bound decoder `d` for `v`.
    pub fn replace_decoder(&mut self, d: usize, i: usize, v: Var<'t>) -> Result<()> {
        let slot = self
            .dec
            .get_mut(d)
            .and_then(|g| g.as_mut())
            .and_then(|g| g.get_mut(i))
            .ok_or_else(|| Error::Config(format!("decoder {d} tensor {i} not bound")))?;
        if slot.value().shape() != v.value().shape() {
            return Err(Error::Config(format!("decoder {d} tensor {i} shape mismatch")));
        }
        *slot = v;
        Ok(())
    }
}

/// Encoder output.
pub struct Encoded<'t> {
    /// `[n, d_h]` node embeddings.
    pub nodes: Var<'t>,
    /// `[1, d_h]` mean embedding.
    pub graph: Var<'t>,
}

/// Per-instance decoder quantities computed once per rollout.
pub struct Prepared<'t> {
    decoder: usize,
    k_heads: Vec<Var<'t>>,
    v_heads: Vec<Var<'t>>,
    pointer_keys: Var<'t>,
    graph_q: Var<'t>,
    last_proj: Var<'t>,
    first_proj: Option<Var<'t>>,
}

/// Batched decoding state: one row per start.
#[derive(Debug, Clone)]
pub struct RolloutState {
    n: usize,
    depot: Option<usize>,
    visited: Vec<bool>,
    pub first: Vec<usize>,
    pub last: Vec<usize>,
    pub remaining: Vec<f64>,
    left: Vec<usize>,
    pub tours: Vec<Vec<usize>>,
}

impl RolloutState {
    /// Starts with forced distinct first moves: nodes `0..starts` for TSP,
    /// the first `starts` customers for CVRP.
    pub fn new(inst: &VrpInstance, starts: usize) -> Result<Self> {
        let firsts: Vec<usize> = match inst.depot() {
            None => (0..inst.n()).collect(),
            Some(d) => (0..inst.n()).filter(|&v| v != d).collect(),
        };
        if starts == 0 || starts > firsts.len() {
            return Err(Error::Config(format!(
                "starts {starts} must be in 1..={}",
                firsts.len()
            )));
        }
        Self::with_firsts(inst, &firsts[..starts])
    }

    pub fn with_firsts(inst: &VrpInstance, firsts: &[usize]) -> Result<Self> {
        let n = inst.n();
        let s = firsts.len();
        let depot = inst.depot();
        let mut st = RolloutState {
            n,
            depot,
            visited: vec![false; s * n],
            first: firsts.to_vec(),
            last: firsts.to_vec(),
            remaining: vec![1.0; s],
            left: vec![inst.size(); s],
            tours: vec![Vec::with_capacity(2 * n); s],
        };
        for (row, &f) in firsts.iter().enumerate() {
            if f >= n || Some(f) == depot {
                return Err(Error::Config(format!("invalid first node {f}")));
            }
            if let Some(d) = depot {
                st.tours[row].push(d);
            }
            st.visit(inst, row, f);
        }
        Ok(st)
    }

    pub fn starts(&self) -> usize {
        self.first.len()
    }

    fn visit(&mut self, inst: &VrpInstance, row: usize, v: usize) {
        if Some(v) == self.depot {
            if self.left[row] == 0 && self.last[row] == v {
                return;
            }
            self.remaining[row] = 1.0;
        } else {
            self.visited[row * self.n + v] = true;
            self.left[row] -= 1;
            self.remaining[row] -= inst.demand(v);
        }
        self.last[row] = v;
        self.tours[row].push(v);
    }

    pub fn is_done(&self) -> bool {
        (0..self.starts()).all(|r| self.row_done(r))
    }

    fn row_done(&self, row: usize) -> bool {
        self.left[row] == 0 && self.depot.is_none_or(|d| self.last[row] == d)
    }

    /// Feasibility mask (`true` = excluded) for every row.
    pub fn mask(&self, inst: &VrpInstance) -> Result<Mask> {
        let (s, n) = (self.starts(), self.n);
        let mut m = Mask::from_vec(s, n, self.visited.clone())?;
        if let Some(d) = self.depot {
            for r in 0..s {
                let row = m.row_mut(r);
                for (v, masked) in row.iter_mut().enumerate() {
                    if v != d && !*masked && inst.demand(v) > self.remaining[r] + CAPACITY_TOLERANCE {
                        *masked = true;
                    }
                }
                row[d] = self.last[r] == d && self.left[r] > 0;
            }
        }
        for r in 0..s {
            if m.row(r).iter().all(|&x| x) {
                return Err(Error::DecodeStuck(format!(
                    "no feasible node for start {r} after {:?}",
                    self.tours[r]
                )));
            }
        }
        Ok(m)
    }

    pub fn apply(&mut self, inst: &VrpInstance, actions: &[usize]) {
        for (r, &a) in actions.iter().enumerate() {
            self.visit(inst, r, a);
        }
    }
}

/// Rollout output for `S` starts.
pub struct Rollout<'t> {
    pub tours: Vec<Vec<usize>>,
    pub costs: Vec<f64>,
    /// `[S, 1]` summed log-probabilities of the chosen (unforced) moves.
    pub log_probs: Var<'t>,
}

impl<'t> Rollout<'t> {
    /// Index and cost of the cheapest start (first on ties).
    pub fn best(&self) -> (usize, f64) {
        let mut best = 0;
        for (i, &c) in self.costs.iter().enumerate() {
            if c < self.costs[best] {
                best = i;
            }
        }
        (best, self.costs[best])
    }
}

impl Policy {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, 0);
        let encoder = init_group(&config.encoder_layout(), &mut rng);
        let decoders = (0..config.n_decoders)
            .map(|i| init_group(&config.decoder_layout(), &mut stream(seed, 1 + i as u64)))
            .collect();
        let training_record = (0..config.n_decoders).map(|i| format!("decoder{i}")).collect();
        Ok(Policy {
            config,
            encoder,
            decoders,
            training_record,
            seed,
        })
    }

    pub fn n_decoders(&self) -> usize {
        self.decoders.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder
            .iter()
            .chain(self.decoders.iter().flatten())
            .map(Tensor::len)
            .sum()
    }

    /// Scaling factor for `inst` under the configured mode.
    pub fn esf_for(&self, inst: &VrpInstance) -> Result<Option<f64>> {
        self.config.esf_mode.factor(inst.size())
    }

    /// Registers parameters on `tape`; trainable when `train` is set.
    /// Only the listed decoders are bound.
    pub fn bind<'t>(&self, tape: &'t Tape, train: bool, decoders: &[usize]) -> Result<Bound<'t>> {
        let reg = |t: &Tensor| {
            if train {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let mut dec: Vec<Option<Vec<Var<'t>>>> = vec![None; self.decoders.len()];
        for &i in decoders {
            let group = self
                .decoders
                .get(i)
                .ok_or_else(|| Error::Config(format!("decoder {i} of {}", self.decoders.len())))?;
            if dec[i].is_none() {
                dec[i] = Some(group.iter().map(reg).collect());
            }
        }
        Ok(Bound {
            tape,
            enc: self.encoder.iter().map(reg).collect(),
            dec,
        })
    }

    /// Node and graph embeddings.
    pub fn encode<'t>(&self, b: &Bound<'t>, inst: &VrpInstance, esf: Option<f64>) -> Result<Encoded<'t>> {
        if inst.kind() != self.config.kind {
            return Err(Error::Config(format!(
                "{} policy given a {} instance",
                self.config.kind,
                inst.kind()
            )));
        }
        let tape = b.tape;
        let p = &b.enc;
        let n = inst.n();
        let (mut h, base) = match inst.depot() {
            None => {
                let xy: Vec<f64> = inst.coords().iter().flatten().copied().collect();
                let x = tape.constant(Tensor::matrix(n, 2, xy)?);
                (linear(&x, &p[0], Some(&p[1]))?, 2)
            }
            Some(d) => {
                let dx = tape.constant(Tensor::matrix(1, 2, inst.coords()[d].to_vec())?);
                let depot = linear(&dx, &p[0], Some(&p[1]))?;
                let customers: Vec<usize> = (0..n).filter(|&v| v != d).collect();
                let feats: Vec<f64> = customers
                    .iter()
                    .flat_map(|&v| {
                        let [x, y] = inst.coords()[v];
                        [x, y, inst.demand(v)]
                    })
                    .collect();
                let cx = tape.constant(Tensor::matrix(customers.len(), 3, feats)?);
                let cust = linear(&cx, &p[2], Some(&p[3]))?;
                let stacked = Var::concat_rows(&[depot, cust])?;
                let h = if d == 0 {
                    stacked
                } else {
                    // Row order of `stacked` is depot, then customers ascending.
                    let order: Vec<usize> = (0..n)
                        .map(|v| match v.cmp(&d) {
                            std::cmp::Ordering::Equal => 0,
                            std::cmp::Ordering::Less => v + 1,
                            std::cmp::Ordering::Greater => v,
                        })
                        .collect();
                    stacked.gather_rows(&order)?
                };
                (h, 4)
            }
        };
        let heads = self.config.heads;
        for l in 0..self.config.encoder_layers {
            let w = &p[base + l * ENC_LAYER..base + (l + 1) * ENC_LAYER];
            let q = h.matmul(&w[0])?;
            let k = h.matmul(&w[1])?;
            let v = h.matmul(&w[2])?;
            let att = multi_head_attention(&q, &k, &v, heads, esf, None, &w[3], Some(&w[4]))?;
            let h1 = layer_norm(&h.add(&att)?, &w[5], &w[6])?;
            let ff = linear(&linear(&h1, &w[7], Some(&w[8]))?.relu(), &w[9], Some(&w[10]))?;
            h = layer_norm(&h1.add(&ff)?, &w[11], &w[12])?;
        }
        let graph = h.mean_rows()?;
        Ok(Encoded { nodes: h, graph })
    }

    /// Decoder-specific keys, values and context projections.
    pub fn prepare<'t>(&self, b: &Bound<'t>, decoder: usize, enc: &Encoded<'t>) -> Result<Prepared<'t>> {
        let p = b
            .decoder_vars(decoder)
            .ok_or_else(|| Error::Config(format!("decoder {decoder} not bound")))?;
        let heads = self.config.heads;
        let dh = self.config.d_h / heads;
        let k = enc.nodes.matmul(&p[DEC_WK])?;
        let v = enc.nodes.matmul(&p[DEC_WV])?;
        let split = |m: &Var<'t>| -> Result<Vec<Var<'t>>> {
            if heads == 1 {
                return Ok(vec![m.clone()]);
            }
            (0..heads).map(|h| Ok(m.slice_cols(h * dh, dh)?)).collect()
        };
        Ok(Prepared {
            decoder,
            k_heads: split(&k)?,
            v_heads: split(&v)?,
            pointer_keys: enc.nodes.matmul(&p[DEC_PK])?,
            graph_q: enc.graph.matmul(&p[DEC_GRAPH])?,
            last_proj: enc.nodes.matmul(&p[DEC_LAST])?,
            first_proj: match self.config.kind {
                ProblemKind::Tsp => Some(enc.nodes.matmul(&p[DEC_THIRD])?),
                ProblemKind::Cvrp => None,
            },
        })
    }

    /// Log-probabilities `[S, n]` of the next node for every row of `state`;
    /// masked entries are `-inf`.
    pub fn decode_step<'t>(
        &self,
        b: &Bound<'t>,
        prep: &Prepared<'t>,
        state: &RolloutState,
        mask: &Mask,
        esf: Option<f64>,
    ) -> Result<Var<'t>> {
        let p = b
            .decoder_vars(prep.decoder)
            .ok_or_else(|| Error::Config(format!("decoder {} not bound", prep.decoder)))?;
        let s = state.starts();
        let mut q = prep
            .graph_q
            .repeat_rows(s)?
            .add(&prep.last_proj.gather_rows(&state.last)?)?;
        match &prep.first_proj {
            Some(fp) => q = q.add(&fp.gather_rows(&state.first)?)?,
            None => {
                let cap = b.tape.constant(Tensor::matrix(s, 1, state.remaining.clone())?);
                q = q.add(&cap.matmul(&p[DEC_THIRD])?)?;
            }
        }
        let heads = self.config.heads;
        let dh = self.config.d_h / heads;
        let scale = logit_scale(dh, esf)?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = if heads == 1 { q.clone() } else { q.slice_cols(h * dh, dh)? };
            let w = qh.matmul_t(&prep.k_heads[h])?.softmax_rows(scale, Some(mask))?;
            outs.push(w.matmul(&prep.v_heads[h])?);
        }
        let glimpse = if heads == 1 {
            outs.pop().expect("one head")
        } else {
            Var::concat_cols(&outs)?
        };
        let glimpse = linear(&glimpse, &p[DEC_WO], Some(&p[DEC_BO]))?;
        let pointer_esf = if self.config.esf_pointer { esf } else { None };
        let pscale = logit_scale(self.config.d_h, pointer_esf)?;
        let u = glimpse
            .matmul_t(&prep.pointer_keys)?
            .scale(pscale)
            .tanh_clip(self.config.logit_clip)?;
        Ok(u.log_softmax_rows(1.0, Some(mask))?)
    }

    /// Builds tours for every row of `state` with one decoder.
    pub fn rollout_from<'t>(
        &self,
        b: &Bound<'t>,
        prep: &Prepared<'t>,
        inst: &VrpInstance,
        mut state: RolloutState,
        mode: DecodeMode,
        esf: Option<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Rollout<'t>> {
        let s = state.starts();
        let n = inst.n();
        let mut total: Option<Var<'t>> = None;
        while !state.is_done() {
            let mask = state.mask(inst)?;
            let options: Vec<Vec<usize>> = (0..s)
                .map(|r| (0..n).filter(|&v| !mask.is_masked(r, v)).collect())
                .collect();
            if options.iter().all(|o| o.len() == 1) {
                let actions: Vec<usize> = options.iter().map(|o| o[0]).collect();
                state.apply(inst, &actions);
                continue;
            }
            let logp = self.decode_step(b, prep, &state, &mask, esf)?;
            let lp = logp.value();
            let actions: Vec<usize> = (0..s)
                .map(|r| {
                    let row = lp.row_slice(r);
                    match mode {
                        DecodeMode::Greedy => options[r]
                            .iter()
                            .copied()
                            .fold(options[r][0], |best, v| if row[v] > row[best] { v } else { best }),
                        DecodeMode::Sample => {
                            let u: f64 = rng.gen();
                            let mut acc = 0.0;
                            let mut pick = *options[r].last().expect("nonempty");
                            for &v in &options[r] {
                                acc += row[v].exp();
                                if u < acc {
                                    pick = v;
                                    break;
                                }
                            }
                            pick
                        }
                    }
                })
                .collect();
            let chosen = logp.pick(&actions)?;
            total = Some(match total {
                None => chosen,
                Some(t) => t.add(&chosen)?,
            });
            state.apply(inst, &actions);
        }
        let log_probs = match total {
            Some(t) => t,
            None => b.tape.constant(Tensor::zeros(s, 1)),
        };
        let tours = state.tours;
        let costs = tours
            .iter()
            .map(|t| tour_cost(inst, t))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Rollout {
            tours,
            costs,
            log_probs,
        })
    }

    /// Encodes `inst` and decodes `starts` forced starts with `decoder`.
    pub fn rollout<'t>(
        &self,
        b: &Bound<'t>,
        inst: &VrpInstance,
        decoder: usize,
        mode: DecodeMode,
        starts: usize,
        esf: Option<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Rollout<'t>> {
        let enc = self.encode(b, inst, esf)?;
        let prep = self.prepare(b, decoder, &enc)?;
        let state = RolloutState::new(inst, starts)?;
        self.rollout_from(b, &prep, inst, state, mode, esf, rng)
    }

    /// Next-node probabilities for a single partial tour (row 0 of `state`).
    pub fn step_probabilities(
        &self,
        inst: &VrpInstance,
        decoder: usize,
        state: &RolloutState,
        esf: Option<f64>,
    ) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let b = self.bind(&tape, false, &[decoder])?;
        let enc = self.encode(&b, inst, esf)?;
        let prep = self.prepare(&b, decoder, &enc)?;
        let mask = state.mask(inst)?;
        let logp = self.decode_step(&b, &prep, state, &mask, esf)?;
        Ok(logp.value().row_slice(0).iter().map(|v| v.exp()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        Self::from_checkpoint(ck)
    }

    pub(crate) fn to_checkpoint(&self) -> Checkpoint {
        let group = |layout: Vec<(String, [usize; 2])>, ts: &[Tensor]| {
            layout
                .into_iter()
                .zip(ts)
                .map(|((name, shape), t)| NamedTensor {
                    name,
                    shape: shape.to_vec(),
                    data: t.data().to_vec(),
                })
                .collect()
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            encoder: group(self.config.encoder_layout(), &self.encoder),
            decoders: self
                .decoders
                .iter()
                .map(|d| group(self.config.decoder_layout(), d))
                .collect(),
            training_record: self.training_record.clone(),
            seed: self.seed,
        }
    }

    pub(crate) fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!(
                "checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.config.validate()?;
        let group = |layout: Vec<(String, [usize; 2])>, ts: Vec<NamedTensor>| -> Result<Vec<Tensor>> {
            if layout.len() != ts.len() {
                return Err(Error::Serde(format!(
                    "expected {} tensors, found {}",
                    layout.len(),
                    ts.len()
                )));
            }
            layout
                .into_iter()
                .zip(ts)
                .map(|((name, shape), t)| {
                    if name != t.name || shape[..] != t.shape[..] {
                        return Err(Error::Serde(format!(
                            "tensor {} {:?} where {name} {shape:?} expected",
                            t.name, t.shape
                        )));
                    }
                    Ok(Tensor::new(t.shape, t.data)?)
                })
                .collect()
        };
        if ck.decoders.len() != ck.config.n_decoders || ck.training_record.len() != ck.config.n_decoders {
            return Err(Error::Serde("decoder count mismatch".into()));
        }
        let encoder = group(ck.config.encoder_layout(), ck.encoder)?;
        let decoders = ck
            .decoders
            .into_iter()
            .map(|d| group(ck.config.decoder_layout(), d))
            .collect::<Result<_>>()?;
        Ok(Policy {
            config: ck.config,
            encoder,
            decoders,
            training_record: ck.training_record,
            seed: ck.seed,
        })
    }
}

const CHECKPOINT_FORMAT: &str = "routenet-policy";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Checkpoint {
    format: String,
    version: u32,
    config: PolicyConfig,
    encoder: Vec<NamedTensor>,
    decoders: Vec<Vec<NamedTensor>>,
    training_record: Vec<String>,
    seed: u64,
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
