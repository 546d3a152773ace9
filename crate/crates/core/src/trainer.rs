//! Training regimes, learning-rate schedule, the training loop and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{apply_freeze_plan, FreezePlan, FreezePolicy};
use crate::autograd::Graph;
use crate::config::ModelConfig;
use crate::data::Dataset;
use crate::error::{arg_err, Error, Result};
use crate::loss::dual_loss;
use crate::metrics::{high_band_error, psnr, ssim};
use crate::model::{forward, Model};
use crate::optim::{adam_step, AdamState, Slot};
use crate::tensor::Tensor;

/// Normalised frequency from which spectral bins of an HR image count as high
/// band: half the LR Nyquist frequency, so the band covers the upper half of
/// what the input can represent plus everything beyond it.
pub fn high_band_cutoff(scale: usize) -> f64 {
    0.5 / scale.max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Backbone from scratch on the source data.
    Pretrain,
    /// Backbone from scratch on the target data.
    Ret,
    /// Pretrained backbone, everything trainable.
    Ft,
    /// Pretrained backbone with partial freezing, adapters and the frequency branch.
    DanP,
    /// Pretrained backbone, everything trainable, plus the frequency branch.
    DanF,
}

impl Regime {
    pub const ALL: [Regime; 5] = [Regime::Pretrain, Regime::Ret, Regime::Ft, Regime::DanP, Regime::DanF];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Pretrain => "pretrain",
            Regime::Ret => "ret",
            Regime::Ft => "ft",
            Regime::DanP => "dan-p",
            Regime::DanF => "dan-f",
        }
    }

    pub fn uses_fda(&self) -> bool {
        matches!(self, Regime::DanP | Regime::DanF)
    }

    pub fn needs_source(&self) -> bool {
        matches!(self, Regime::Ft | Regime::DanP | Regime::DanF)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| arg_err!("unknown regime {s:?}; expected pretrain, ret, ft, dan-p or dan-f"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub halve_every: usize,
    /// LR patch side.
    pub patch: usize,
    pub batch: usize,
    pub iters: usize,
    pub lambda: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub policy: FreezePolicy,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            lr0: 2e-4,
            halve_every: 2000,
            patch: 96,
            batch: 4,
            iters: 70_000,
            lambda: crate::loss::LAMBDA,
            eval_every: 1000,
            seed: 0,
            policy: FreezePolicy::ShallowUnitsPerGroup,
        }
    }

    pub fn desk() -> Self {
        Self { patch: 24, iters: 1500, eval_every: 250, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(arg_err!("learning rate must be positive, got {}", self.lr0));
        }
        if self.halve_every == 0 || self.patch == 0 || self.batch == 0 || self.eval_every == 0 {
            return Err(arg_err!("halve_every, patch, batch and eval_every must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(arg_err!("lambda must be non-negative, got {}", self.lambda));
        }
        Ok(())
    }
}

/// `lr0 · 0.5^⌊iter / halve_every⌋`.
pub fn lr_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * 0.5f64.powi((iter / cfg.halve_every) as i32)
}

fn same_backbone(a: &ModelConfig, b: &ModelConfig) -> bool {
    (a.groups, a.units, a.dim, a.window, a.scale, a.channels, a.up_dim)
        == (b.groups, b.units, b.dim, b.window, b.scale, b.channels, b.up_dim)
}

/// Builds the model and freeze plan a regime starts from.
///
/// `config` supplies the adaptation fields (rank, α, d^f, n^f, M^sta); its
/// backbone fields must match the source checkpoint.
pub fn prepare(
    regime: Regime,
    source: Option<Model<f32>>,
    config: ModelConfig,
    tc: &TrainConfig,
) -> Result<(Model<f32>, FreezePlan)> {
    config.validate()?;
    let mut model = match (regime.needs_source(), source) {
        (true, Some(src)) => {
            if !same_backbone(&src.config, &config) {
                return Err(arg_err!("source backbone {:?} does not match {:?}", src.config, config));
            }
            if src.has_fda() || src.has_adapters() {
                return Err(arg_err!("source checkpoint must be a plain backbone"));
            }
            Model { config, params: src.params }
        }
        (true, None) => return Err(arg_err!("regime {regime} needs a source checkpoint")),
        (false, Some(_)) => return Err(arg_err!("regime {regime} trains from scratch and takes no source")),
        (false, None) => Model::init(config, tc.seed)?,
    };
    let names = model.backbone_names();
    let names = names.iter().map(String::as_str);
    let plan = match regime {
        Regime::DanP => apply_freeze_plan(names, &config, tc.policy, config.frozen_units)?,
        _ => apply_freeze_plan(names, &config, FreezePolicy::None, 0)?,
    };
    if regime.uses_fda() {
        model.attach_fda(tc.seed.wrapping_add(1))?;
    }
    model.attach_plan(&plan, tc.seed.wrapping_add(2))?;
    Ok((model, plan))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Metrics of the scored output (O with the branch, O^s otherwise).
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_spatial: f64,
    pub ssim_spatial: f64,
    pub high_band: f64,
    pub high_band_spatial: f64,
    pub imag_residue: f64,
    pub n_images: usize,
}

fn clip(t: &Tensor<f32>) -> Tensor<f64> {
    t.cast::<f64>().map(|v| v.clamp(0.0, 1.0))
}

/// Whole-image evaluation, averaged per image.
pub fn evaluate(model: &Model<f32>, data: &Dataset) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let cutoff = high_band_cutoff(data.scale);
    let mut acc = [0.0f64; 6];
    let mut residue: f64 = 0.0;
    for pair in &data.pairs {
        let [c, h, w] = *pair.lr.shape() else {
            return Err(Error::Data(format!("LR image of shape {:?}", pair.lr.shape())));
        };
        let x: Tensor<f32> = pair.lr.clone().reshape(&[1, c, h, w])?.cast();
        let pred = model.predict(&x)?;
        let hr = pair.hr.clone().reshape(&[1, c, h * data.scale, w * data.scale])?;
        let (o, os) = (clip(&pred.output), clip(&pred.spatial));
        acc[0] += psnr(&o, &hr, 1.0)?;
        acc[1] += ssim(&o, &hr)?;
        acc[2] += psnr(&os, &hr, 1.0)?;
        acc[3] += ssim(&os, &hr)?;
        acc[4] += high_band_error(&o, &hr, cutoff)?;
        acc[5] += high_band_error(&os, &hr, cutoff)?;
        residue = residue.max(pred.imag_residue);
    }
    let n = data.len() as f64;
    Ok(EvalResult {
        psnr: acc[0] / n,
        ssim: acc[1] / n,
        psnr_spatial: acc[2] / n,
        ssim_spatial: acc[3] / n,
        high_band: acc[4] / n,
        high_band_spatial: acc[5] / n,
        imag_residue: residue,
        n_images: data.len(),
    })
}

/// PSNR of bicubic upsampling of every LR image.
pub fn bicubic_baseline(data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for pair in &data.pairs {
        let s = pair.hr.shape();
        let up = crate::degrade::bicubic_resize(&pair.lr, s[1], s[2])?.map(|v| v.clamp(0.0, 1.0));
        total += psnr(&up, &pair.hr, 1.0)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// One JSON-lines record per evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub lr: f64,
    /// Mean training loss since the previous record; absent before the first step.
    pub loss: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_spatial: f64,
    pub ssim_spatial: f64,
    pub imag_residue: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub evals: Vec<LogRecord>,
}

/// One optimisation step on a batch; returns the loss.
pub fn train_step(
    model: &mut Model<f32>,
    state: &mut AdamState<f32>,
    lr_img: Tensor<f32>,
    hr_img: &Tensor<f32>,
    lambda: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g);
    let x = g.input(lr_img);
    let out = forward(&mut g, &bound, &model.config, x)?;
    let spectrum = out.fda.as_ref().map(|f| f.spectrum);
    let loss = dual_loss(&mut g, out.spatial(), spectrum, hr_img, lambda as f32)?;
    let value = g.value(loss.total).item() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut grads = g.backward(loss.total)?;
    let mut taken: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for (name, p) in model.params.iter().filter(|(_, p)| p.trainable) {
        let grad = grads.take(bound.var(name)?).unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        taken.insert(name.to_string(), grad);
    }
    let mut slots: Vec<Slot<'_, f32>> = model
        .params
        .iter_mut()
        .filter(|(_, p)| p.trainable)
        .map(|(name, p)| Slot { name, param: &mut p.value, grad: &taken[name] })
        .collect();
    adam_step(&mut slots, state)?;
    Ok(value)
}

/// Trains `model` in place. Evaluates on `eval` before the first step, every
/// `eval_every` iterations and after the last one, passing each record to `log`.
pub fn train(
    model: &mut Model<f32>,
    data: &Dataset,
    eval: Option<&Dataset>,
    tc: &TrainConfig,
    mut log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainReport> {
    tc.validate()?;
    if data.scale != model.config.scale {
        return Err(arg_err!("data scale {} vs model scale {}", data.scale, model.config.scale));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut state = AdamState::new(tc.lr0);
    let mut report = TrainReport::default();
    let mut since = Vec::new();
    let mut record = |iter: usize, since: &mut Vec<f64>, report: &mut TrainReport, model: &Model<f32>| -> Result<()> {
        let Some(set) = eval else { return Ok(()) };
        let e = evaluate(model, set)?;
        let loss = (!since.is_empty()).then(|| since.iter().sum::<f64>() / since.len() as f64);
        since.clear();
        let r = LogRecord {
            iter,
            lr: lr_schedule(iter, tc),
            loss,
            psnr: e.psnr,
            ssim: e.ssim,
            psnr_spatial: e.psnr_spatial,
            ssim_spatial: e.ssim_spatial,
            imag_residue: e.imag_residue,
        };
        log(&r)?;
        report.evals.push(r);
        Ok(())
    };
    record(0, &mut since, &mut report, model)?;
    for iter in 0..tc.iters {
        state.lr = lr_schedule(iter, tc);
        let (lr_img, hr_img) = data.sample_batch::<f32, _>(&mut rng, tc.batch, tc.patch)?;
        let loss = train_step(model, &mut state, lr_img, &hr_img, tc.lambda).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {iter}")),
            other => other,
        })?;
        report.losses.push(loss);
        since.push(loss);
        let done = iter + 1;
        if done % tc.eval_every == 0 || done == tc.iters {
            record(done, &mut since, &mut report, model)?;
        }
    }
    Ok(report)
}

/// PSNR-versus-iteration curve of one probe run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub images: usize,
    pub regime: Regime,
    pub iters: Vec<usize>,
    pub psnr: Vec<f64>,
}

impl Curve {
    pub fn peak_minus_final(&self) -> f64 {
        let peak = self.psnr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        peak - self.psnr.last().copied().unwrap_or(peak)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,psnr\n");
        for (i, p) in self.iters.iter().zip(&self.psnr) {
            s.push_str(&format!("{i},{p:.6}\n"));
        }
        s
    }
}

/// Adapts `source` on the first `n` images of `pool` for each `(n, regime)` and
/// records held-out PSNR every `tc.eval_every` iterations.
pub fn overfit_probe(
    source: &Model<f32>,
    config: ModelConfig,
    pool: &Dataset,
    eval: &Dataset,
    sizes: &[usize],
    regimes: &[Regime],
    tc: &TrainConfig,
) -> Result<Vec<Curve>> {
    let mut curves = Vec::new();
    for &n in sizes {
        let subset = pool.subset(n)?;
        for &regime in regimes {
            let (mut model, _) = prepare(regime, Some(source.clone()), config, tc)?;
            let report = train(&mut model, &subset, Some(eval), tc, |_| Ok(()))?;
            curves.push(Curve {
                images: n,
                regime,
                iters: report.evals.iter().map(|r| r.iter).collect(),
                psnr: report.evals.iter().map(|r| r.psnr).collect(),
            });
        }
    }
    Ok(curves)
}
