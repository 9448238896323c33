//! Flags and config files share one option set. Precedence: flags, then the
//! config file, then built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::Usage;

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// tsp or cvrp
    #[arg(long)]
    pub kind: Option<String>,
    /// Distribution name, or a comma-separated list (one per decoder)
    #[arg(long)]
    pub dist: Option<String>,
    /// Problem size (customers for cvrp)
    #[arg(long)]
    pub n: Option<usize>,
    /// Upper end of the training size range
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// off, fixed:<n_tr> or base:<n_b>
    #[arg(long)]
    pub esf: Option<String>,
    /// Number of decoders
    #[arg(long)]
    pub decoders: Option<usize>,
    /// greedy or sample:<k>
    #[arg(long)]
    pub mode: Option<String>,
    /// Try all eight symmetries of the unit square
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub aug8: Option<bool>,
    /// Multi-start count (default: instance size)
    #[arg(long)]
    pub starts: Option<usize>,
    /// fixed:<i>, sample:<m> or min
    #[arg(long)]
    pub select: Option<String>,
    /// Worker threads (default: available cores)
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Policy checkpoint (JSON)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Instance file: canonical text, TSPLIB or CVRPLIB
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory of TSPLIB/CVRPLIB files
    #[arg(long)]
    pub dir: Option<PathBuf>,

    /// toy or full
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Instances per distribution per step
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// One distribution per step, cycling
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub round_robin: Option<bool>,
    /// Continue from the state file in --out
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub resume: Option<bool>,

    /// Comma-separated scaling factors
    #[arg(long)]
    pub grid: Option<String>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),* $(,)?) => {
        Options { $($f: $hi.$f.or($lo.$f),)* }
    };
}

impl Options {
    /// Fields set in `self` win over `lower`.
    pub fn over(self, lower: Options) -> Options {
        overlay!(
            self, lower, kind, dist, n, n_max, count, seed, esf, decoders, mode, aug8, starts, select,
            jobs, out, checkpoint, input, dir, model, layers, heads, width, steps, batch, lr, log_every,
            checkpoint_every, round_robin, resume, grid
        )
    }

    pub fn defaults() -> Options {
        Options {
            kind: Some("tsp".into()),
            dist: Some("uniform".into()),
            n: Some(20),
            count: Some(100),
            seed: Some(0),
            esf: Some("off".into()),
            mode: Some("greedy".into()),
            aug8: Some(false),
            select: Some("fixed:0".into()),
            model: Some("toy".into()),
            steps: Some(1000),
            batch: Some(64),
            lr: Some(1e-4),
            log_every: Some(100),
            checkpoint_every: Some(500),
            round_robin: Some(false),
            resume: Some(false),
            grid: Some("0.8,0.9,1.0,1.1,1.2,1.3,1.4,1.5".into()),
            ..Options::default()
        }
    }
}

/// Reads a TOML config, or the `config` section of a JSON run manifest.
pub fn load_config(path: &Path) -> anyhow::Result<Options> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(|e| Usage(format!("{e:#}")))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        #[derive(Deserialize)]
        struct ManifestConfig {
            config: Options,
        }
        let m: ManifestConfig =
            serde_json::from_str(&text).map_err(|e| Usage(format!("manifest {}: {e}", path.display())))?;
        Ok(m.config)
    } else {
        toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
    }
}

pub fn need<T: Clone>(v: &Option<T>, flag: &str) -> anyhow::Result<T> {
    v.clone().ok_or_else(|| Usage(format!("missing --{flag}")).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let flags = Options {
            n: Some(50),
            ..Options::default()
        };
        let file: Options = toml::from_str("n = 30\nseed = 9\n").unwrap();
        let o = flags.over(file).over(Options::defaults());
        assert_eq!(o.n, Some(50));
        assert_eq!(o.seed, Some(9));
        assert_eq!(o.count, Some(100));
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(toml::from_str::<Options>("bogus = 1").is_err());
    }
}
