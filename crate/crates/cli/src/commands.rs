//! The six subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ddsr::adaptation::{ledger_of_store, FreezePolicy, Ledger};
use ddsr::checkpoint;
use ddsr::data::Dataset;
use ddsr::metrics::{psnr, ssim};
use ddsr::trainer::{self, bicubic_baseline, evaluate, prepare, EvalResult, LogRecord, Regime, TrainConfig};
use ddsr::{Model, ModelConfig, Tensor};
use serde::Serialize;

use crate::args::*;
use crate::imageio::{crop_to_multiple, list_pngs, read_png, write_amplitude, write_png};
use crate::manifest::RunManifest;
use crate::CliError;

pub const CHECKPOINT: &str = "model.ddsr";
pub const MERGED_CHECKPOINT: &str = "model_merged.ddsr";
pub const METRICS: &str = "metrics.jsonl";
pub const LOSSES: &str = "losses.csv";
pub const LEDGER: &str = "ledger.json";
pub const EVAL: &str = "eval.json";
pub const SR_IMAGE: &str = "sr.png";
pub const SWEEP: &str = "sweep.csv";
pub const GAPS: &str = "gaps.csv";
/// Amplitude maps written by `infer --emit-freq`, in order: input, O^s, O, ground truth.
pub const AMPLITUDE_FILES: [&str; 4] = ["amp_input.png", "amp_spatial.png", "amp_output.png", "amp_truth.png"];

pub fn probe_file(images: usize, regime: Regime) -> String {
    format!("probe_n{images}_{regime}.csv")
}

pub fn dispatch(command: Command, argv: &[String]) -> Result<(), CliError> {
    match command {
        Command::Pretrain(a) => pretrain(a, argv),
        Command::Adapt(a) => adapt(a, argv),
        Command::Infer(a) => infer(a, argv),
        Command::Eval(a) => eval(a, argv),
        Command::Ablate(a) => ablate(a, argv),
        Command::Probe(a) => probe(a, argv),
    }
}

fn output_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Failure(format!("{}: {e}", dir.display())))
}

/// A checkpoint path, or a run directory containing one.
pub fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT)
    } else {
        p.to_path_buf()
    }
}

fn load_checkpoint(p: &Path) -> Result<Model<f32>, CliError> {
    let path = checkpoint_path(p);
    if !path.exists() {
        return Err(CliError::Data(format!("no checkpoint at {}", path.display())));
    }
    Ok(checkpoint::load(&path)?)
}

fn load_dir(dir: &Path, scale: usize) -> Result<Vec<Tensor<f64>>, CliError> {
    list_pngs(dir)?.iter().map(|p| crop_to_multiple(&read_png(p)?, scale)).collect()
}

fn training_set(plan: &DataPlan, scale: usize) -> Result<Dataset, CliError> {
    let spec = plan.profile.spec(scale, plan.corpus_seed);
    Ok(match &plan.train_dir {
        Some(dir) => Dataset::from_hr(load_dir(dir, scale)?, &spec)?,
        None => Dataset::synthetic(plan.corpus_seed, 0, plan.images, plan.hr_size, &spec)?,
    })
}

fn held_out_set(plan: &DataPlan, scale: usize) -> Result<Dataset, CliError> {
    let spec = plan.profile.spec(scale, plan.corpus_seed.wrapping_add(1));
    Ok(match &plan.eval_dir {
        Some(dir) => Dataset::from_hr(load_dir(dir, scale)?, &spec)?,
        None => Dataset::synthetic(plan.corpus_seed, HELD_OUT_OFFSET, plan.eval_images, plan.eval_size, &spec)?,
    })
}

#[derive(Serialize)]
struct JsonlRecord<'a> {
    iter: usize,
    lr: f64,
    loss: Option<f64>,
    psnr: f64,
    ssim: f64,
    imag_residue: f64,
    psnr_spatial: f64,
    ssim_spatial: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<&'a str>,
}

fn jsonl_line(r: &LogRecord, run: Option<&str>) -> Result<String, CliError> {
    let rec = JsonlRecord {
        iter: r.iter,
        lr: r.lr,
        loss: r.loss,
        psnr: r.psnr,
        ssim: r.ssim,
        imag_residue: r.imag_residue,
        psnr_spatial: r.psnr_spatial,
        ssim_spatial: r.ssim_spatial,
        run,
    };
    Ok(serde_json::to_string(&rec)?)
}

/// Trains with per-eval JSONL logging to `dir/metrics.jsonl` and a loss trace in `dir/losses.csv`.
fn train_logged(
    model: &mut Model<f32>,
    data: &Dataset,
    eval: &Dataset,
    tc: &TrainConfig,
    dir: &Path,
) -> Result<Vec<LogRecord>, CliError> {
    let mut metrics = BufWriter::new(File::create(dir.join(METRICS))?);
    let report = trainer::train(model, data, Some(eval), tc, |r| {
        let line = jsonl_line(r, None).map_err(|e| ddsr::Error::Io(std::io::Error::other(e.to_string())))?;
        writeln!(metrics, "{line}")?;
        eprintln!("iter {:>6}  psnr {:.3}  ssim {:.4}  loss {}", r.iter, r.psnr, r.ssim, r.loss.map_or("-".into(), |l| format!("{l:.5}")));
        Ok(())
    })?;
    metrics.flush()?;
    let mut losses = String::from("iter,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        losses.push_str(&format!("{},{l}\n", i + 1));
    }
    std::fs::write(dir.join(LOSSES), losses)?;
    Ok(report.evals)
}

fn print_json(value: &impl Serialize) -> Result<(), CliError> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn pretrain(a: PretrainArgs, argv: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg = a.model.apply(a.preset.model());
    let tc = a.train.apply(a.preset.train());
    let plan = a.data.resolve(a.preset, ProfileArg::Simulated)?;
    cfg.validate()?;
    tc.validate()?;
    let data = training_set(&plan, cfg.scale)?;
    let held_out = held_out_set(&plan, cfg.scale)?;
    output_dir(&a.out)?;
    let mut manifest = RunManifest::new("pretrain", argv, tc.seed);
    let (mut model, _) = prepare(Regime::Pretrain, None, cfg, &tc)?;
    manifest.time("setup", start);
    let t = Instant::now();
    let evals = train_logged(&mut model, &data, &held_out, &tc, &a.out)?;
    manifest.time("train", t);
    let path = a.out.join(CHECKPOINT);
    checkpoint::save(&model, &path)?;
    manifest.model = Some(cfg);
    manifest.train = Some(tc);
    manifest.data = Some(plan);
    manifest.checkpoints.insert("output".into(), path);
    manifest.time("total", start);
    manifest.write(&a.out)?;
    print_json(&evals.last())
}

fn check_backbone_flags(flags: &ModelFlags, source: &ModelConfig) -> Result<(), CliError> {
    if flags.is_empty() {
        return Ok(());
    }
    if flags.apply(*source) != *source {
        return Err(CliError::Usage("backbone flags disagree with the source checkpoint".into()));
    }
    Ok(())
}

/// Model config and train config for an adaptation run from `source`.
fn adapt_configs(
    preset: Preset,
    source: Option<&Model<f32>>,
    model: &ModelFlags,
    adapt: &AdaptFlags,
    train: &TrainFlags,
) -> Result<(ModelConfig, TrainConfig), CliError> {
    let base = match source {
        Some(src) => {
            check_backbone_flags(model, &src.config)?;
            let p = preset.model();
            ModelConfig {
                frozen_units: p.frozen_units.min(src.config.units),
                rank: p.rank,
                alpha: p.alpha,
                freq_dim: p.freq_dim,
                freq_stages: p.freq_stages.min(src.config.groups),
                ..src.config
            }
        }
        None => model.apply(preset.model()),
    };
    let cfg = adapt.apply(base);
    let mut tc = train.apply(preset.train());
    if let Some(p) = adapt.policy {
        tc.policy = p;
    }
    cfg.validate()?;
    tc.validate()?;
    Ok((cfg, tc))
}

#[derive(Serialize)]
struct AdaptSummary<'a> {
    regime: Regime,
    ledger: &'a Ledger,
    source: Option<EvalResult>,
    final_eval: Option<&'a LogRecord>,
}

fn adapt(a: AdaptArgs, argv: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    match (a.regime, &a.from) {
        (Regime::Pretrain, _) => return Err(CliError::Usage("use the pretrain command for pretraining".into())),
        (Regime::Ret, Some(_)) => return Err(CliError::Usage("regime ret trains from scratch; drop --from".into())),
        (r, None) if r.needs_source() => return Err(CliError::Usage(format!("regime {r} needs --from"))),
        _ => {}
    }
    if a.regime != Regime::DanP && (a.adapt.policy.is_some() || a.adapt.msta.is_some() || a.adapt.rank.is_some() || a.adapt.alpha.is_some()) {
        return Err(CliError::Usage(format!("--policy, --msta, --rank and --alpha only apply to dan-p, not {}", a.regime)));
    }
    if !a.regime.uses_fda() && (a.adapt.df.is_some() || a.adapt.nf.is_some()) {
        return Err(CliError::Usage(format!("--df and --nf need a frequency branch; regime {} has none", a.regime)));
    }
    if a.regime.needs_source() && !a.model.is_empty() {
        let src = load_checkpoint(a.from.as_deref().expect("checked"))?;
        check_backbone_flags(&a.model, &src.config)?;
    }
    let source = a.from.as_deref().map(load_checkpoint).transpose()?;
    let (cfg, tc) = adapt_configs(a.preset, source.as_ref(), &a.model, &a.adapt, &a.train)?;
    let plan = a.data.resolve(a.preset, ProfileArg::Realistic)?;
    let data = training_set(&plan, cfg.scale)?;
    let held_out = held_out_set(&plan, cfg.scale)?;
    output_dir(&a.out)?;

    let mut manifest = RunManifest::new("adapt", argv, tc.seed);
    let source_eval = source.as_ref().map(|s| evaluate(s, &held_out)).transpose()?;
    let (mut model, freeze) = prepare(a.regime, source, cfg, &tc)?;
    let ledger = ledger_of_store(&freeze, &model.params)?;
    std::fs::write(a.out.join(LEDGER), serde_json::to_string_pretty(&ledger)? + "\n")?;
    eprintln!(
        "ledger: {} trainable of {} ({} LoRA, {} frequency branch); fraction vs FT {:.4}",
        ledger.trainable, ledger.total, ledger.lora, ledger.fda, ledger.fraction_vs_ft
    );
    manifest.time("setup", start);

    let t = Instant::now();
    let evals = train_logged(&mut model, &data, &held_out, &tc, &a.out)?;
    manifest.time("train", t);
    let path = a.out.join(CHECKPOINT);
    checkpoint::save(&model, &path)?;
    manifest.checkpoints.insert("output".into(), path);
    if let Some(src) = &a.from {
        manifest.checkpoints.insert("source".into(), checkpoint_path(src));
    }
    if a.merged {
        let merged = a.out.join(MERGED_CHECKPOINT);
        checkpoint::save_merged(&model, &merged)?;
        manifest.checkpoints.insert("merged".into(), merged);
    }
    manifest.setting("regime", a.regime)?;
    manifest.setting("policy", tc.policy)?;
    manifest.model = Some(cfg);
    manifest.train = Some(tc);
    manifest.data = Some(plan);
    manifest.time("total", start);
    manifest.write(&a.out)?;
    print_json(&AdaptSummary { regime: a.regime, ledger: &ledger, source: source_eval, final_eval: evals.last() })
}

#[derive(Serialize)]
struct InferScores {
    psnr: f64,
    ssim: f64,
    psnr_spatial: f64,
    ssim_spatial: f64,
}

fn infer(a: InferArgs, argv: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    let model = load_checkpoint(&a.ckpt)?;
    let lr = read_png(&a.input)?;
    let (h, w) = (lr.shape()[1], lr.shape()[2]);
    let gt = a.gt.as_deref().map(read_png).transpose()?;
    let rho = model.config.scale;
    if let Some(gt) = &gt {
        if gt.shape() != [3, rho * h, rho * w] {
            return Err(CliError::Data(format!(
                "ground truth is {:?}, expected [3, {}, {}] for a {h}x{w} input at scale {rho}",
                gt.shape(),
                rho * h,
                rho * w
            )));
        }
    }
    let x = lr.clone().reshape(&[1, 3, h, w])?;
    let pred = model.predict(&x.cast::<f32>())?;
    if !pred.output.all_finite() || !pred.spatial.all_finite() {
        return Err(CliError::Numeric("model produced non-finite pixels".into()));
    }
    let output = pred.output.cast::<f64>();
    let spatial = pred.spatial.cast::<f64>();
    output_dir(&a.out)?;
    let clip = |t: &Tensor<f64>| t.map(|v| v.clamp(0.0, 1.0));
    write_png(&a.out.join(SR_IMAGE), &output)?;
    if a.emit_freq {
        write_amplitude(&a.out.join(AMPLITUDE_FILES[0]), &x)?;
        write_amplitude(&a.out.join(AMPLITUDE_FILES[1]), &spatial)?;
        write_amplitude(&a.out.join(AMPLITUDE_FILES[2]), &output)?;
        if let Some(gt) = &gt {
            write_amplitude(&a.out.join(AMPLITUDE_FILES[3]), &gt.clone().reshape(&[1, 3, rho * h, rho * w])?)?;
        }
    }
    let mut manifest = RunManifest::new("infer", argv, 0);
    manifest.model = Some(model.config);
    manifest.checkpoints.insert("input".into(), checkpoint_path(&a.ckpt));
    manifest.setting("input_image", &a.input)?;
    manifest.setting("emit_freq", a.emit_freq)?;
    if let Some(gt) = &gt {
        let gt4 = gt.clone().reshape(&[1, 3, rho * h, rho * w])?;
        let (o, s) = (clip(&output), clip(&spatial));
        let scores = InferScores {
            psnr: psnr(&o, &gt4, 1.0)?,
            ssim: ssim(&o, &gt4)?,
            psnr_spatial: psnr(&s, &gt4, 1.0)?,
            ssim_spatial: ssim(&s, &gt4)?,
        };
        std::fs::write(a.out.join(EVAL), serde_json::to_string_pretty(&scores)? + "\n")?;
        print_json(&scores)?;
    }
    manifest.time("total", start);
    manifest.write(&a.out)
}

#[derive(Serialize)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub n_images: usize,
    pub psnr_spatial: f64,
    pub ssim_spatial: f64,
    pub high_band: f64,
    pub high_band_spatial: f64,
    pub bicubic_psnr: f64,
}

fn eval(a: EvalArgs, argv: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    let model = load_checkpoint(&a.ckpt)?;
    if let Some(s) = a.scale {
        if s != model.config.scale {
            return Err(CliError::Usage(format!("--scale {s} but the checkpoint upsamples by {}", model.config.scale)));
        }
    }
    let mut plan = a.data.resolve(a.preset, ProfileArg::Simulated)?;
    if plan.eval_dir.is_none() {
        plan.eval_dir = plan.train_dir.take();
    }
    let set = held_out_set(&plan, model.config.scale)?;
    let e = evaluate(&model, &set)?;
    let report = EvalReport {
        psnr: e.psnr,
        ssim: e.ssim,
        n_images: e.n_images,
        psnr_spatial: e.psnr_spatial,
        ssim_spatial: e.ssim_spatial,
        high_band: e.high_band,
        high_band_spatial: e.high_band_spatial,
        bicubic_psnr: bicubic_baseline(&set)?,
    };
    let json = serde_json::to_string(&report)?;
    println!("{json}");
    if let Some(out) = &a.out {
        output_dir(out)?;
        std::fs::write(out.join(EVAL), json + "\n")?;
        let mut manifest = RunManifest::new("eval", argv, 0);
        manifest.model = Some(model.config);
        manifest.data = Some(plan);
        manifest.checkpoints.insert("input".into(), checkpoint_path(&a.ckpt));
        manifest.time("total", start);
        manifest.write(out)?;
    }
    Ok(())
}

/// One ablation point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep: String,
    pub value: String,
    pub policy: FreezePolicy,
    pub budget: usize,
    pub trainable: usize,
    pub fraction: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl SweepRow {
    pub const HEADER: &'static str = "sweep,value,policy,budget,trainable,fraction,psnr,ssim";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}",
            self.sweep, self.value, self.policy, self.budget, self.trainable, self.fraction, self.psnr, self.ssim
        )
    }
}

/// `(setting label, model config, policy)` for every point of a sweep.
fn sweep_points(
    sweep: Sweep,
    values: &[usize],
    cfg: ModelConfig,
    policy: FreezePolicy,
) -> Result<Vec<(String, ModelConfig, FreezePolicy)>, CliError> {
    let mut points = Vec::new();
    match sweep {
        Sweep::Rank => {
            let values = if values.is_empty() { vec![0, 1, 2, 4, 8] } else { values.to_vec() };
            for r in values {
                points.push((r.to_string(), ModelConfig { rank: r, ..cfg }, policy));
            }
        }
        Sweep::Df => {
            let values = if values.is_empty() { vec![6, 8, 12, 16] } else { values.to_vec() };
            for d in values {
                points.push((d.to_string(), ModelConfig { freq_dim: d, ..cfg }, policy));
            }
        }
        Sweep::Nf => {
            let values = if values.is_empty() { (1..=cfg.groups).collect() } else { values.to_vec() };
            for n in values {
                points.push((n.to_string(), ModelConfig { freq_stages: n, ..cfg }, policy));
            }
        }
        Sweep::FreezePolicy => {
            // Grid points k/N of frozen units that every policy can express.
            let (n, m) = (cfg.groups, cfg.units);
            let ks: Vec<usize> = if values.is_empty() { (1..=n).filter(|k| k * m % n == 0).collect() } else { values.to_vec() };
            for k in ks {
                if k == 0 || k > n || k * m % n != 0 {
                    return Err(CliError::Usage(format!("frozen fraction {k}/{n} is not reachable by every policy")));
                }
                for p in FreezePolicy::COMPARED {
                    let budget = match p {
                        FreezePolicy::ShallowGroups => k,
                        _ => k * m / n,
                    };
                    points.push((format!("{k}/{n}"), ModelConfig { frozen_units: budget, ..cfg }, p));
                }
            }
        }
    }
    for (_, c, _) in &points {
        c.validate()?;
    }
    Ok(points)
}

fn ablate(a: AblateArgs, argv: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    let source = load_checkpoint(&a.from)?;
    let (cfg, tc) = adapt_configs(a.preset, Some(&source), &a.model, &a.adapt, &a.train)?;
    let points = sweep_points(a.sweep, &a.values, cfg, tc.policy)?;
    let plan = a.data.resolve(a.preset, ProfileArg::Realistic)?;
    let data = training_set(&plan, cfg.scale)?;
    let held_out = held_out_set(&plan, cfg.scale)?;
    output_dir(&a.out)?;
    let sweep_name = match a.sweep {
        Sweep::FreezePolicy => "freeze-policy",
        Sweep::Rank => "rank",
        Sweep::Df => "df",
        Sweep::Nf => "nf",
    };
    let mut csv = String::from(SweepRow::HEADER) + "\n";
    let mut metrics = BufWriter::new(File::create(a.out.join(METRICS))?);
    for (label, point_cfg, policy) in &points {
        let point_tc = TrainConfig { policy: *policy, ..tc.clone() };
        let (mut model, freeze) = prepare(Regime::DanP, Some(source.clone()), *point_cfg, &point_tc)?;
        let ledger = ledger_of_store(&freeze, &model.params)?;
        let run = format!("{sweep_name}={label}:{policy}");
        let report = trainer::train(&mut model, &data, Some(&held_out), &point_tc, |r| {
            let line = jsonl_line(r, Some(&run)).map_err(|e| ddsr::Error::Io(std::io::Error::other(e.to_string())))?;
            writeln!(metrics, "{line}")?;
            Ok(())
        })?;
        let last = report.evals.last().expect("final evaluation is always recorded");
        let row = SweepRow {
            sweep: sweep_name.into(),
            value: label.clone(),
            policy: *policy,
            budget: point_cfg.frozen_units,
            trainable: ledger.trainable,
            fraction: ledger.fraction_vs_ft,
            psnr: last.psnr,
            ssim: last.ssim,
        };
        eprintln!("{}", row.csv());
        csv.push_str(&row.csv());
        csv.push('\n');
    }
    metrics.flush()?;
    std::fs::write(a.out.join(SWEEP), &csv)?;
    let mut manifest = RunManifest::new("ablate", argv, tc.seed);
    manifest.setting("sweep", sweep_name)?;
    manifest.setting("points", points.iter().map(|(l, _, p)| format!("{l}:{p}")).collect::<Vec<_>>())?;
    manifest.model = Some(cfg);
    manifest.train = Some(tc);
    manifest.data = Some(plan);
    manifest.checkpoints.insert("source".into(), checkpoint_path(&a.from));
    manifest.time("total", start);
    manifest.write(&a.out)?;
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct GapSummary {
    regime: Regime,
    mean_gap: f64,
    max_gap: f64,
}

fn probe(a: ProbeArgs, argv: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    if a.sizes.is_empty() || a.sizes.contains(&0) || a.regimes.is_empty() {
        return Err(CliError::Usage("probe needs positive --sizes and at least one regime".into()));
    }
    if let Some(r) = a.regimes.iter().find(|r| !r.needs_source()) {
        return Err(CliError::Usage(format!("probe adapts a pretrained source; regime {r} does not")));
    }
    let source = load_checkpoint(&a.from)?;
    let (cfg, tc) = adapt_configs(a.preset, Some(&source), &a.model, &a.adapt, &a.train)?;
    let mut plan = a.data.resolve(a.preset, ProfileArg::Realistic)?;
    let largest = *a.sizes.iter().max().expect("non-empty");
    if plan.train_dir.is_none() {
        plan.images = plan.images.max(largest);
    }
    let pool = training_set(&plan, cfg.scale)?;
    let held_out = held_out_set(&plan, cfg.scale)?;
    output_dir(&a.out)?;
    let curves = trainer::overfit_probe(&source, cfg, &pool, &held_out, &a.sizes, &a.regimes, &tc)?;
    let mut gaps = String::from("images,regime,peak,final,gap\n");
    for c in &curves {
        std::fs::write(a.out.join(probe_file(c.images, c.regime)), c.to_csv())?;
        let peak = c.psnr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let last = *c.psnr.last().expect("curve has points");
        gaps.push_str(&format!("{},{},{peak:.6},{last:.6},{:.6}\n", c.images, c.regime, c.peak_minus_final()));
    }
    std::fs::write(a.out.join(GAPS), &gaps)?;
    let summary: Vec<GapSummary> = a
        .regimes
        .iter()
        .map(|&regime| {
            let g: Vec<f64> = curves.iter().filter(|c| c.regime == regime).map(|c| c.peak_minus_final()).collect();
            GapSummary {
                regime,
                mean_gap: g.iter().sum::<f64>() / g.len() as f64,
                max_gap: g.iter().cloned().fold(0.0, f64::max),
            }
        })
        .collect();
    let mut manifest = RunManifest::new("probe", argv, tc.seed);
    manifest.setting("sizes", &a.sizes)?;
    manifest.setting("regimes", &a.regimes)?;
    manifest.model = Some(cfg);
    manifest.train = Some(tc);
    manifest.data = Some(plan);
    manifest.checkpoints.insert("source".into(), checkpoint_path(&a.from));
    manifest.time("total", start);
    manifest.write(&a.out)?;
    print!("{gaps}");
    print_json(&summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freeze_grid_matches_fractions() {
        let cfg = ModelConfig::desk();
        let pts = sweep_points(Sweep::FreezePolicy, &[], cfg, FreezePolicy::ShallowUnitsPerGroup).unwrap();
        assert_eq!(pts.len(), 3 * cfg.groups);
        for chunk in pts.chunks(3) {
            let fr: Vec<f64> = chunk.iter().map(|(_, c, p)| p.frozen_unit_fraction(c, c.frozen_units)).collect();
            assert!(fr.iter().all(|&f| (f - fr[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn unreachable_grid_point_is_rejected() {
        let cfg = ModelConfig { groups: 4, units: 6, freq_stages: 2, ..ModelConfig::desk() };
        assert!(matches!(
            sweep_points(Sweep::FreezePolicy, &[1], cfg, FreezePolicy::ShallowUnitsPerGroup),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn rank_sweep_defaults() {
        let pts = sweep_points(Sweep::Rank, &[], ModelConfig::desk(), FreezePolicy::ShallowUnitsPerGroup).unwrap();
        let ranks: Vec<usize> = pts.iter().map(|p| p.1.rank).collect();
        assert_eq!(ranks, vec![0, 1, 2, 4, 8]);
    }
}
