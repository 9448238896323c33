use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use routenet_core::analysis::{
    audit_policy_entropy, decoder_choice_proportions, sweep_scaling, write_proportions_csv, write_sweep_csv,
};
use routenet_core::bench::{benchmark_cost, gap, parse_benchmark, summarize, write_results_csv, BenchmarkInstance, ResultRow};
use routenet_core::generate::generate;
use routenet_core::inference::{select_decoder, solve as solve_one, DecoderChoice, EsfChoice, InferenceConfig, SearchMode};
use routenet_core::oracle::reference;
use routenet_core::policy::esf_value;
use routenet_core::rng::derive_seed;
use routenet_core::text::{from_text, to_text};
use routenet_core::training::{train as run_training, TrainConfig, TrainOutputs, TrainState};
use routenet_core::{DistributionSpec, EsfMode, Policy, PolicyConfig, ProblemKind, VrpInstance};
use serde::Serialize;

use crate::options::{need, Options};
use crate::{Artifacts, Input, Usage};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn kind(o: &Options) -> anyhow::Result<ProblemKind> {
    match need(&o.kind, "kind")?.to_ascii_lowercase().as_str() {
        "tsp" => Ok(ProblemKind::Tsp),
        "cvrp" => Ok(ProblemKind::Cvrp),
        k => Err(usage(format!("unknown --kind `{k}` (tsp, cvrp)"))),
    }
}

fn dists(o: &Options) -> anyhow::Result<Vec<DistributionSpec>> {
    let seed = need(&o.seed, "seed")?;
    need(&o.dist, "dist")?
        .split(',')
        .map(|s| {
            let k = s.parse().map_err(|e: routenet_core::Error| usage(e.to_string()))?;
            Ok(DistributionSpec::new(k, seed))
        })
        .collect()
}

fn esf_mode(o: &Options) -> anyhow::Result<EsfMode> {
    need(&o.esf, "esf")?
        .parse()
        .map_err(|e: routenet_core::Error| usage(e.to_string()))
}

fn manifest_for(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn create(path: &Path) -> anyhow::Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Input(format!("creating {}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(f))
}

fn load_policy(o: &Options) -> anyhow::Result<Policy> {
    let path = need(&o.checkpoint, "checkpoint")?;
    if !path.exists() {
        return Err(Input(format!("checkpoint {} not found", path.display())).into());
    }
    Ok(Policy::load(&path)?)
}

fn inference_config(o: &Options, policy: &Policy) -> anyhow::Result<InferenceConfig> {
    let mode = match need(&o.mode, "mode")?.as_str() {
        "greedy" => SearchMode::Greedy,
        m => match m.split_once(':') {
            Some(("sample", k)) => SearchMode::Sample(k.parse().map_err(|_| usage(format!("bad --mode `{m}`")))?),
            _ => return Err(usage(format!("bad --mode `{m}` (greedy, sample:<k>)"))),
        },
    };
    let esf = match &o.esf {
        // Without an explicit flag the checkpoint's own mode applies.
        Some(_) if o.esf != Options::defaults().esf => EsfChoice::Mode(esf_mode(o)?),
        _ => EsfChoice::Policy,
    };
    let cfg = InferenceConfig {
        mode,
        aug8: o.aug8.unwrap_or(false),
        starts: o.starts,
        esf,
        decoder: DecoderChoice::Fixed(0),
        seed: need(&o.seed, "seed")?,
    };
    cfg.validate(policy)?;
    Ok(cfg)
}

/// Resolves `--select` into a decoder choice for instances of `size`.
fn choose_decoder(o: &Options, policy: &Policy, cfg: &InferenceConfig, size: usize) -> anyhow::Result<DecoderChoice> {
    let sel = need(&o.select, "select")?;
    if sel == "min" {
        return Ok(DecoderChoice::MinOverAll);
    }
    let bad = || usage(format!("bad --select `{sel}` (fixed:<i>, sample:<m>, min)"));
    let (tag, v) = sel.split_once(':').ok_or_else(bad)?;
    let v: usize = v.parse().map_err(|_| bad())?;
    match tag {
        "fixed" if v < policy.n_decoders() => Ok(DecoderChoice::Fixed(v)),
        "fixed" => Err(usage(format!("decoder {v} of {}", policy.n_decoders()))),
        "sample" => {
            let spec = dists(o)?.remove(0);
            let spec = DistributionSpec {
                seed: derive_seed(spec.seed, &[size as u64, 8]),
                ..spec
            };
            let kind = policy.config.kind;
            let d = select_decoder(policy, |m| generate(&spec, size, m, kind), v, cfg)?;
            Ok(DecoderChoice::Fixed(d))
        }
        _ => Err(bad()),
    }
}

pub fn generate_cmd(o: &Options) -> anyhow::Result<Artifacts> {
    let specs = dists(o)?;
    if specs.len() != 1 {
        return Err(usage("generate takes a single --dist"));
    }
    let insts = generate(&specs[0], need(&o.n, "n")?, need(&o.count, "count")?, kind(o)?)?;
    let text = to_text(&insts);
    match &o.out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Input(format!("writing {}: {e}", p.display())))?;
            Ok(Artifacts {
                outputs: vec![p.clone()],
                manifest: Some(manifest_for(p)),
                ..Artifacts::default()
            })
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(Artifacts::default())
        }
    }
}


pub fn train(o: &Options) -> anyhow::Result<Artifacts> {
    let out = need(&o.out, "out")?;
    std::fs::create_dir_all(&out).map_err(|e| Input(format!("creating {}: {e}", out.display())))?;
    let specs = dists(o)?;
    let n_dec = o.decoders.unwrap_or(specs.len());
    if n_dec != specs.len() {
        return Err(usage(format!("--decoders {n_dec} but {} distributions", specs.len())));
    }
    let kind = kind(o)?;
    let base = match need(&o.model, "model")?.as_str() {
        "toy" => PolicyConfig::toy(kind),
        "full" => PolicyConfig::full(kind),
        m => return Err(usage(format!("unknown --model `{m}` (toy, full)"))),
    };
    let width = o.width.unwrap_or(base.d_h);
    let pcfg = PolicyConfig {
        encoder_layers: o.layers.unwrap_or(base.encoder_layers),
        heads: o.heads.unwrap_or(base.heads),
        d_h: width,
        ff_dim: if o.width.is_some() { 4 * width } else { base.ff_dim },
        n_decoders: n_dec,
        esf_mode: esf_mode(o)?,
        ..base
    };
    let n = need(&o.n, "n")?;
    let seed = need(&o.seed, "seed")?;
    let mut tcfg = TrainConfig::new(specs, n, need(&o.steps, "steps")?, need(&o.batch, "batch")?);
    tcfg.n_max = o.n_max.unwrap_or(n);
    tcfg.lr = need(&o.lr, "lr")?;
    tcfg.seed = seed;
    tcfg.starts = o.starts;
    tcfg.log_every = need(&o.log_every, "log_every")?;
    tcfg.checkpoint_every = o.checkpoint_every;
    tcfg.round_robin = o.round_robin.unwrap_or(false);

    let state_path = out.join("state.json");
    let metrics = out.join("metrics.csv");
    let mut state = if o.resume.unwrap_or(false) && state_path.exists() {
        let mut s = TrainState::load(&state_path)?;
        if s.policy.config != pcfg {
            return Err(usage("resumed state was trained with a different model config"));
        }
        s.config.steps = tcfg.steps;
        s
    } else {
        let _ = std::fs::remove_file(&metrics);
        TrainState::new(Policy::new(pcfg, seed)?, tcfg)?
    };
    let rows = run_training(
        &mut state,
        &TrainOutputs {
            metrics_csv: Some(metrics.clone()),
            checkpoint: Some(state_path.clone()),
        },
    )?;
    let policy_path = out.join("policy.json");
    state.policy.save(&policy_path)?;
    state.save(&state_path)?;
    if let Some(last) = rows.last() {
        eprintln!("step {}: mean cost {:.4}", last.step, last.mean_cost);
    }
    Ok(Artifacts {
        inputs: Vec::new(),
        outputs: vec![policy_path, state_path, metrics],
        manifest: Some(out.join("manifest.json")),
    })
}

/// Benchmark files or canonical text records.
enum Loaded {
    Bench(Vec<BenchmarkInstance>),
    Plain(Vec<VrpInstance>),
}

fn read_instances(path: &Path) -> anyhow::Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| Input(format!("reading {}: {e}", path.display())))?;
    if text.contains("NODE_COORD_SECTION") {
        let b = parse_benchmark(&text).with_context(|| path.display().to_string())?;
        Ok(Loaded::Bench(vec![b]))
    } else {
        Ok(Loaded::Plain(from_text(&text).with_context(|| path.display().to_string())?))
    }
}

#[derive(Serialize)]
struct SolveLine {
    instance: String,
    n: usize,
    cost: f64,
    tour: Vec<usize>,
    decoder: usize,
    augmentation: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    benchmark_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    known_optimum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_pct: Option<f64>,
}

pub fn solve(o: &Options) -> anyhow::Result<Artifacts> {
    let policy = load_policy(o)?;
    let cfg = inference_config(o, &policy)?;
    let input = need(&o.input, "input")?;
    let items: Vec<(String, VrpInstance, Option<f64>)> = match read_instances(&input)? {
        Loaded::Bench(bs) => bs
            .into_iter()
            .map(|b| (b.name, b.raw, b.known_optimum.map(|k| k.value)))
            .collect(),
        Loaded::Plain(v) => v
            .into_iter()
            .enumerate()
            .map(|(i, inst)| {
                let name = if inst.meta.source.is_empty() {
                    format!("instance-{i}")
                } else {
                    inst.meta.source.clone()
                };
                (name, inst, None)
            })
            .collect(),
    };
    let mut choices: BTreeMap<usize, DecoderChoice> = BTreeMap::new();
    let mut lines = String::new();
    for (name, inst, opt) in items {
        let decoder = match choices.get(&inst.size()) {
            Some(d) => *d,
            None => {
                let d = choose_decoder(o, &policy, &cfg, inst.size())?;
                choices.insert(inst.size(), d);
                d
            }
        };
        let sol = solve_one(&policy, &inst, &InferenceConfig { decoder, ..cfg.clone() })?;
        let (bcost, gap_pct) = match opt {
            Some(opt) => {
                let c = benchmark_cost(&inst, &sol.tour.nodes)?;
                (Some(c), Some(gap(c, opt)?.pct))
            }
            None => (None, None),
        };
        let line = SolveLine {
            instance: name,
            n: inst.size(),
            cost: sol.tour.cost,
            tour: sol.tour.nodes,
            decoder: sol.decoder,
            augmentation: sol.augmentation,
            benchmark_cost: bcost,
            known_optimum: opt,
            gap_pct,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    let mut art = Artifacts {
        inputs: vec![input, need(&o.checkpoint, "checkpoint")?],
        ..Artifacts::default()
    };
    match &o.out {
        Some(p) => {
            std::fs::write(p, lines).map_err(|e| Input(format!("writing {}: {e}", p.display())))?;
            art.outputs.push(p.clone());
            art.manifest = Some(manifest_for(p));
        }
        None => std::io::stdout().write_all(lines.as_bytes())?,
    }
    Ok(art)
}

pub fn bench(o: &Options) -> anyhow::Result<Artifacts> {
    let dir = need(&o.dir, "dir")?;
    let entries = std::fs::read_dir(&dir).map_err(|e| Input(format!("reading {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsp" || x == "vrp"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Input(format!("no .tsp or .vrp files in {}", dir.display())).into());
    }
    let policy = load_policy(o)?;
    let cfg = inference_config(o, &policy)?;
    let mut rows = Vec::new();
    for f in &files {
        let b = match read_instances(f)? {
            Loaded::Bench(mut v) => v.remove(0),
            Loaded::Plain(_) => return Err(Input(format!("{} is not a TSPLIB/CVRPLIB file", f.display())).into()),
        };
        if b.raw.kind() != policy.config.kind {
            eprintln!("skipping {}: {} policy", b.name, policy.config.kind);
            continue;
        }
        let t = Instant::now();
        let decoder = choose_decoder(o, &policy, &cfg, b.raw.size())?;
        let sol = solve_one(&policy, &b.raw, &InferenceConfig { decoder, ..cfg.clone() })?;
        let secs = t.elapsed().as_secs_f64();
        let (cost, reference) = match &b.known_optimum {
            Some(k) => (benchmark_cost(&b.raw, &sol.tour.nodes)?, Some(k.value)),
            None => {
                let r = reference(&b.raw, 8, need(&o.seed, "seed")?).ok().map(|r| r.cost);
                (sol.tour.cost, r)
            }
        };
        rows.push(ResultRow {
            instance: b.name.clone(),
            n: b.raw.size(),
            method: "policy".into(),
            cost,
            reference,
            gap_pct: match reference {
                Some(r) => Some(gap(cost, r)?.pct),
                None => None,
            },
            seconds: secs,
        });
    }
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("bench.csv"));
    write_results_csv(&rows, create(&out)?)?;
    for s in summarize(&rows) {
        eprintln!("{s:?}");
    }
    let mut inputs = files;
    inputs.push(need(&o.checkpoint, "checkpoint")?);
    Ok(Artifacts {
        inputs,
        outputs: vec![out.clone()],
        manifest: Some(manifest_for(&out)),
    })
}

/// `--count` instances of `--n` from each `--dist`, in the policy's kind.
fn eval_sets(o: &Options, policy: &Policy) -> anyhow::Result<Vec<(String, Vec<VrpInstance>)>> {
    let n = need(&o.n, "n")?;
    let count = need(&o.count, "count")?;
    dists(o)?
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            let spec = DistributionSpec {
                seed: derive_seed(spec.seed, &[i as u64]),
                ..spec
            };
            Ok((spec.kind.to_string(), generate(&spec, n, count, policy.config.kind)?))
        })
        .collect()
}

fn analysis_out(o: &Options, default: &str) -> PathBuf {
    o.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

pub fn sweep(o: &Options) -> anyhow::Result<Artifacts> {
    let policy = load_policy(o)?;
    let mut cfg = inference_config(o, &policy)?;
    cfg.decoder = choose_decoder(o, &policy, &cfg, need(&o.n, "n")?)?;
    let grid: Vec<f64> = need(&o.grid, "grid")?
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| usage(format!("bad --grid value `{s}`"))))
        .collect::<anyhow::Result<_>>()?;
    let mode = match esf_mode(o)? {
        EsfMode::Off => policy.config.esf_mode,
        m => m,
    };
    let n = need(&o.n, "n")?;
    let esf = match mode {
        EsfMode::Off => 1.0,
        m => esf_value(m, n)?,
    };
    let (_, insts) = eval_sets(o, &policy)?.remove(0);
    let seed = need(&o.seed, "seed")?;
    let refs = insts
        .iter()
        .map(|i| Ok(reference(i, 8, seed)?.cost))
        .collect::<anyhow::Result<Vec<f64>>>()?;
    let id = need(&o.checkpoint, "checkpoint")?.display().to_string();
    let r = sweep_scaling(&policy, &id, &insts, &refs, &grid, esf, &cfg)?;
    eprintln!(
        "baseline gap {:.3}%, gap at {:.4}: {:.3}%",
        r.baseline_gap, r.esf_value, r.esf_gap
    );
    let out = analysis_out(o, "sweep.csv");
    write_sweep_csv(&r, create(&out)?)?;
    Ok(Artifacts {
        inputs: vec![need(&o.checkpoint, "checkpoint")?],
        outputs: vec![out.clone()],
        manifest: Some(manifest_for(&out)),
    })
}

pub fn entropy(o: &Options) -> anyhow::Result<Artifacts> {
    let policy = load_policy(o)?;
    let cfg = inference_config(o, &policy)?;
    let out = analysis_out(o, "entropy.csv");
    let mut w = create(&out)?;
    writeln!(w, "distribution,rows,min_slack,violations,max_excess")?;
    for (name, insts) in eval_sets(o, &policy)? {
        let a = audit_policy_entropy(&policy, &insts, &cfg)?;
        writeln!(w, "{name},{},{},{},{}", a.rows, a.min_slack, a.violations, a.max_excess)?;
    }
    w.flush()?;
    Ok(Artifacts {
        inputs: vec![need(&o.checkpoint, "checkpoint")?],
        outputs: vec![out.clone()],
        manifest: Some(manifest_for(&out)),
    })
}

pub fn proportions(o: &Options) -> anyhow::Result<Artifacts> {
    let policy = load_policy(o)?;
    let cfg = inference_config(o, &policy)?;
    let rows = decoder_choice_proportions(&policy, &eval_sets(o, &policy)?, &cfg)?;
    let out = analysis_out(o, "proportions.csv");
    write_proportions_csv(&rows, create(&out)?)?;
    Ok(Artifacts {
        inputs: vec![need(&o.checkpoint, "checkpoint")?],
        outputs: vec![out.clone()],
        manifest: Some(manifest_for(&out)),
    })
}
