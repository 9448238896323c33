//! `routenet`: generate instances, train policies, solve, benchmark and
//! run the scaling-factor analyses.

mod commands;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use options::{load_config, Options};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "routenet", version, about = "Neural TSP/CVRP solver toolkit")]
struct Cli {
    /// TOML config mirroring the flags, or a run manifest to replay
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write random instances in the canonical text format
    Generate(Options),
    /// Train a policy with REINFORCE
    Train(Options),
    /// Solve instances with a trained policy (JSON lines)
    Solve(Options),
    /// Gap table over a directory of TSPLIB/CVRPLIB files
    Bench(Options),
    /// Gap per scaling factor
    Sweep(Options),
    /// Check attention rows against the entropy lower bound
    Entropy(Options),
    /// Share of instances won by each decoder
    Proportions(Options),
}

/// Bad flags or config: exit 2.
#[derive(Debug)]
pub struct Usage(pub String);

/// Missing or unreadable input: exit 3.
#[derive(Debug)]
pub struct Input(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for Input {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}
impl std::error::Error for Input {}

/// Record of one run; replay with `--config <manifest>`.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Options,
    pub seeds: Vec<u64>,
    pub code_version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wallclock: f64,
}

/// What a command read and wrote, for its manifest.
#[derive(Default)]
pub struct Artifacts {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Where the manifest goes; stderr when unset.
    pub manifest: Option<PathBuf>,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use routenet_core::Error as E;
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<Input>() || cause.is::<std::io::Error>() {
            return 3;
        }
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Config(_) => 2,
                E::Parse { .. } | E::Unsupported(_) | E::InvalidInstance(_) | E::Io { .. } | E::Serde(_) => 3,
                E::SizeLimit { .. } => 5,
                _ => 4,
            };
        }
    }
    4
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let start = Instant::now();
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => Options::default(),
    };
    let (name, flags) = match cli.command {
        Command::Generate(o) => ("generate", o),
        Command::Train(o) => ("train", o),
        Command::Solve(o) => ("solve", o),
        Command::Bench(o) => ("bench", o),
        Command::Sweep(o) => ("sweep", o),
        Command::Entropy(o) => ("entropy", o),
        Command::Proportions(o) => ("proportions", o),
    };
    let opts = flags.over(file).over(Options::defaults());
    if let Some(j) = opts.jobs {
        if j == 0 {
            return Err(Usage("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Usage(e.to_string()))?;
    }
    let art = match name {
        "generate" => commands::generate_cmd(&opts)?,
        "train" => commands::train(&opts)?,
        "solve" => commands::solve(&opts)?,
        "bench" => commands::bench(&opts)?,
        "sweep" => commands::sweep(&opts)?,
        "entropy" => commands::entropy(&opts)?,
        _ => commands::proportions(&opts)?,
    };
    let manifest = RunManifest {
        command: name.to_string(),
        seeds: opts.seed.into_iter().collect(),
        config: opts,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: art.inputs,
        outputs: art.outputs,
        wallclock: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    match art.manifest {
        Some(p) => std::fs::write(&p, json + "\n").map_err(|e| Input(format!("writing {}: {e}", p.display())))?,
        None => eprintln!("{json}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
