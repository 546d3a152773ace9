//! Command-line flags and their resolution against the `paper`/`desk` presets.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ddsr::adaptation::FreezePolicy;
use ddsr::degrade::DegradationSpec;
use ddsr::trainer::{Regime, TrainConfig};
use ddsr::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "ddsr", version, about = "Dual-domain adaptation for realistic super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a plain backbone from scratch.
    Pretrain(PretrainArgs),
    /// Adapt a pretrained backbone (or retrain one) on target-profile data.
    Adapt(AdaptArgs),
    /// Super-resolve one PNG.
    Infer(InferArgs),
    /// Score a checkpoint on a held-out set.
    Eval(EvalArgs),
    /// Sweep one adaptation setting, one full adapt+eval per value.
    Ablate(AblateArgs),
    /// PSNR-versus-iteration curves for several training-set sizes.
    Probe(ProbeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileArg {
    Simulated,
    Realistic,
    RealisticAlt,
}

impl ProfileArg {
    pub fn spec(self, scale: usize, seed: u64) -> DegradationSpec {
        match self {
            ProfileArg::Simulated => DegradationSpec::simulated(scale, seed),
            ProfileArg::Realistic => DegradationSpec::realistic(scale, seed),
            ProfileArg::RealisticAlt => DegradationSpec::realistic_alt(scale, seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    FreezePolicy,
    Rank,
    Df,
    Nf,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: ddsr::Error| e.to_string())
}

fn parse_policy(s: &str) -> Result<FreezePolicy, String> {
    s.parse().map_err(|e: ddsr::Error| e.to_string())
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    /// Upsampling ratio ρ.
    #[arg(long)]
    pub scale: Option<usize>,
    /// Transformer groups N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Units per group M.
    #[arg(long)]
    pub m: Option<usize>,
    /// Feature width d.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub up_dim: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct AdaptFlags {
    /// Frozen leading units per group M^sta (budget of the chosen policy).
    #[arg(long)]
    pub msta: Option<usize>,
    /// LoRA rank r; 0 disables adapters.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub alpha: Option<usize>,
    /// Frequency-branch width d^f.
    #[arg(long)]
    pub df: Option<usize>,
    /// Fusion stages n^f.
    #[arg(long)]
    pub nf: Option<usize>,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<FreezePolicy>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub iters: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub halve_every: Option<usize>,
    /// LR patch side.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Weight of the frequency L1 term.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataFlags {
    /// Directory of HR PNGs; procedural images are used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory of held-out HR PNGs.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Degradation applied to the HR images.
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Number of procedural training images.
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub hr_size: Option<usize>,
    #[arg(long)]
    pub eval_images: Option<usize>,
    #[arg(long)]
    pub eval_size: Option<usize>,
    /// Seed of the procedural corpus and of its degradations.
    #[arg(long, default_value_t = 1)]
    pub corpus_seed: u64,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Source checkpoint, or a directory holding `model.ddsr`.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long, value_parser = parse_regime)]
    pub regime: Regime,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub adapt: AdaptFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
    /// Also write a copy with adapters folded into the base weights.
    #[arg(long)]
    pub merged: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Ground-truth HR image for amplitude maps and scores.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Write log-amplitude spectra of input, O^s, O and ground truth.
    #[arg(long)]
    pub emit_freq: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Must agree with the checkpoint when given.
    #[arg(long)]
    pub scale: Option<usize>,
    #[command(flatten)]
    pub data: DataFlags,
    /// Directory for `eval.json` and the manifest; stdout only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long, value_enum)]
    pub sweep: Sweep,
    /// Comma-separated sweep values; defaults depend on the sweep.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<usize>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub adapt: AdaptFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub from: PathBuf,
    /// Accepted for symmetry with the probe's name; the probe always runs.
    #[arg(long)]
    pub overfit: bool,
    #[arg(long, value_delimiter = ',', default_values_t = vec![10, 25, 50, 100])]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_regime, default_values = ["ft", "dan-p"])]
    pub regimes: Vec<Regime>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub adapt: AdaptFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub out: PathBuf,
}

impl Preset {
    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Paper => ModelConfig::paper(),
            Preset::Desk => ModelConfig::desk(),
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Preset::Paper => TrainConfig::paper(),
            Preset::Desk => TrainConfig::desk(),
        }
    }

    /// `(training images, HR side, held-out images, held-out HR side)`.
    pub fn corpus(self) -> (usize, usize, usize, usize) {
        match self {
            Preset::Paper => (800, 480, 100, 480),
            Preset::Desk => (64, 96, 8, 64),
        }
    }
}

impl ModelFlags {
    pub fn apply(&self, mut cfg: ModelConfig) -> ModelConfig {
        let set = |field: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *field = v;
            }
        };
        set(&mut cfg.scale, self.scale);
        set(&mut cfg.groups, self.n);
        set(&mut cfg.units, self.m);
        set(&mut cfg.dim, self.d);
        set(&mut cfg.window, self.window);
        set(&mut cfg.up_dim, self.up_dim);
        cfg
    }

    pub fn is_empty(&self) -> bool {
        [self.scale, self.n, self.m, self.d, self.window, self.up_dim].iter().all(Option::is_none)
    }
}

impl AdaptFlags {
    pub fn apply(&self, mut cfg: ModelConfig) -> ModelConfig {
        let set = |field: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *field = v;
            }
        };
        set(&mut cfg.frozen_units, self.msta);
        set(&mut cfg.rank, self.rank);
        set(&mut cfg.alpha, self.alpha);
        set(&mut cfg.freq_dim, self.df);
        set(&mut cfg.freq_stages, self.nf);
        cfg
    }

    pub fn is_empty(&self) -> bool {
        [self.msta, self.rank, self.alpha, self.df, self.nf].iter().all(Option::is_none) && self.policy.is_none()
    }
}

impl TrainFlags {
    pub fn apply(&self, mut tc: TrainConfig) -> TrainConfig {
        tc.iters = self.iters.unwrap_or(tc.iters);
        tc.lr0 = self.lr.unwrap_or(tc.lr0);
        tc.halve_every = self.halve_every.unwrap_or(tc.halve_every);
        tc.patch = self.patch.unwrap_or(tc.patch);
        tc.batch = self.batch.unwrap_or(tc.batch);
        tc.lambda = self.lambda.unwrap_or(tc.lambda);
        tc.eval_every = self.eval_every.unwrap_or(tc.eval_every);
        tc.seed = self.seed;
        tc
    }
}

/// Fully resolved data recipe, recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPlan {
    pub train_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
    pub profile: ProfileArg,
    pub images: usize,
    pub hr_size: usize,
    pub eval_images: usize,
    pub eval_size: usize,
    pub corpus_seed: u64,
}

/// First corpus index of the held-out procedural images.
pub const HELD_OUT_OFFSET: u64 = 1_000_000;

impl DataFlags {
    pub fn resolve(&self, preset: Preset, default_profile: ProfileArg) -> Result<DataPlan, CliError> {
        let (images, hr_size, eval_images, eval_size) = preset.corpus();
        let plan = DataPlan {
            train_dir: self.data.clone(),
            eval_dir: self.eval_data.clone(),
            profile: self.profile.unwrap_or(default_profile),
            images: self.images.unwrap_or(images),
            hr_size: self.hr_size.unwrap_or(hr_size),
            eval_images: self.eval_images.unwrap_or(eval_images),
            eval_size: self.eval_size.unwrap_or(eval_size),
            corpus_seed: self.corpus_seed,
        };
        if plan.images == 0 || plan.eval_images == 0 || plan.hr_size == 0 || plan.eval_size == 0 {
            return Err(CliError::Usage("image counts and sizes must be positive".into()));
        }
        Ok(plan)
    }
}
