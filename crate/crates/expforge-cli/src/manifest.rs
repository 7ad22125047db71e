//! Run manifests: JSON config files merged with command-line flags.

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use expforge::engine::McConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Exponent,
    Region,
    Simulate,
    Sweep,
    Validate,
}

/// Either spec kind; one-way commands read `snr_fwd`/`snr_fb`, two-way
/// commands read `snr12`/`snr21`, and each falls back to the other pair.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecInput {
    pub m: Option<usize>,
    pub snr_fwd: Option<f64>,
    pub snr_fb: Option<f64>,
    pub snr12: Option<f64>,
    pub snr21: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McInput {
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub batch_size: Option<u64>,
    pub confidence: Option<f64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputInput {
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Scheme parameters. Every field is also a flag of the same name.
#[derive(Debug, Clone, Default, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Block length in channel uses
    #[arg(long)]
    pub n: Option<usize>,
    /// Protection-region parameter in [0, 1]
    #[arg(long)]
    pub s: Option<f64>,
    /// NACK-band parameter in (0, 1)
    #[arg(long)]
    pub t: Option<f64>,
    /// Power each receiver keeps for NACK signalling
    #[arg(long)]
    pub eta: Option<f64>,
    /// Power or block-length split, depending on the scheme
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Retransmission detection threshold (default n)
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub k2: Option<f64>,
    #[arg(long)]
    pub j1: Option<f64>,
    #[arg(long)]
    pub j2: Option<f64>,
    /// Set from the global `--grid` flag.
    #[arg(skip)]
    pub grid: Option<usize>,
    /// Block lengths for `sweep`, comma separated
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    /// Criteria for `validate`, by number or name, comma separated
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<String>>,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Scheme id
    #[arg(long)]
    pub scheme: Option<String>,
    /// Number of messages
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long = "snr-fwd")]
    pub snr_fwd: Option<f64>,
    #[arg(long = "snr-fb")]
    pub snr_fb: Option<f64>,
    #[arg(long)]
    pub snr12: Option<f64>,
    #[arg(long)]
    pub snr21: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<u64>,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub params: Params,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: Option<CommandKind>,
    pub scheme: Option<String>,
    #[serde(default)]
    pub spec: SpecInput,
    #[serde(default)]
    pub params: Params,
    pub mc: Option<McInput>,
    #[serde(default)]
    pub output: OutputInput,
}

pub const DEFAULT_TRIALS: u64 = 100_000;
pub const DEFAULT_SEED: u64 = 1;

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Layers flags over the file; `None` flags leave file values alone.
    pub fn apply(&mut self, o: &Overrides, g: &Globals) {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = Some(v);
                }
            };
        }
        set!(self.scheme, o.scheme);
        set!(self.spec.m, o.m);
        set!(self.spec.snr_fwd, o.snr_fwd);
        set!(self.spec.snr_fb, o.snr_fb);
        set!(self.spec.snr12, o.snr12);
        set!(self.spec.snr21, o.snr21);
        let p = &o.params;
        let q = &mut self.params;
        set!(q.n, p.n);
        set!(q.s, p.s);
        set!(q.t, p.t);
        set!(q.eta, p.eta);
        set!(q.lambda, p.lambda);
        set!(q.threshold, p.threshold);
        set!(q.k1, p.k1);
        set!(q.k2, p.k2);
        set!(q.j1, p.j1);
        set!(q.j2, p.j2);
        set!(q.grid, p.grid);
        set!(q.ns, p.ns);
        set!(q.only, p.only);
        set!(q.grid, g.grid);
        let mc = self.mc.get_or_insert_with(McInput::default);
        set!(mc.trials, g.trials);
        set!(mc.batch_size, o.batch_size);
        set!(mc.confidence, o.confidence);
        set!(mc.workers, o.workers);
        set!(self.output.path, g.out);
        set!(self.output.format, g.format);
    }

    pub fn scheme(&self) -> Result<&str> {
        self.scheme.as_deref().context("no scheme given (use --scheme)")
    }

    pub fn m(&self) -> Result<usize> {
        self.spec.m.context("no message count given (use --m)")
    }

    /// `(snr_fwd, snr_fb)`; a missing feedback SNR is 0.
    pub fn one_way_snrs(&self) -> Result<(f64, f64)> {
        let fwd = self.spec.snr_fwd.or(self.spec.snr12).context("no forward SNR given (use --snr-fwd)")?;
        Ok((fwd, self.spec.snr_fb.or(self.spec.snr21).unwrap_or(0.0)))
    }

    pub fn two_way_snrs(&self) -> Result<(f64, f64)> {
        let a = self.spec.snr12.or(self.spec.snr_fwd).context("no snr12 given (use --snr12)")?;
        let b = self.spec.snr21.or(self.spec.snr_fb).context("no snr21 given (use --snr21)")?;
        Ok((a, b))
    }

    pub fn n(&self) -> Result<usize> {
        self.params.n.context("no block length given (use --n)")
    }

    /// Seed precedence: `--seed`, then `EXPFORGE_SEED`, then the file.
    pub fn seed_opt(&self, flag: Option<u64>) -> Result<Option<u64>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match std::env::var("EXPFORGE_SEED") {
            Ok(v) => Ok(Some(
                v.trim().parse().with_context(|| format!("EXPFORGE_SEED is not an unsigned integer: `{v}`"))?,
            )),
            Err(_) => Ok(self.mc.as_ref().and_then(|m| m.seed)),
        }
    }

    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        Ok(self.seed_opt(flag)?.unwrap_or(DEFAULT_SEED))
    }

    pub fn mc(&self, seed_flag: Option<u64>) -> Result<McConfig> {
        let input = self.mc.clone().unwrap_or_default();
        let trials = input.trials.unwrap_or(DEFAULT_TRIALS);
        let mut mc = McConfig::new(trials, self.seed(seed_flag)?)?;
        if let Some(b) = input.batch_size {
            mc = mc.with_batch_size(b)?;
        }
        if let Some(c) = input.confidence {
            mc = mc.with_confidence(c)?;
        }
        if let Some(w) = input.workers {
            mc = mc.with_workers(w);
        }
        Ok(mc)
    }

    /// Explicit format, else the output extension, else `default`.
    pub fn format(&self, default: Format) -> Format {
        if let Some(f) = self.output.format {
            return f;
        }
        match self.output.path.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            Some("json") => Format::Json,
            _ => default,
        }
    }

    pub fn require_one_of(&self, allowed: &[&str]) -> Result<String> {
        let s = self.scheme()?;
        if !allowed.contains(&s) {
            bail!("unknown scheme `{s}`; expected one of: {}", allowed.join(", "));
        }
        Ok(s.to_string())
    }
}

/// Flags that apply to the whole invocation.
#[derive(Debug, Clone, Default, Args)]
pub struct Globals {
    /// JSON run manifest; flags override its fields
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (default stdout)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Monte Carlo trials (for `validate`: trials per slope point)
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// RNG seed; overrides EXPFORGE_SEED and the manifest
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Grid points for region sweeps
    #[arg(long, global = true)]
    pub grid: Option<usize>,
}
