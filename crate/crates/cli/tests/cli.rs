use std::path::{Path, PathBuf};
use std::process::Command;

use ddsr::{Model, ModelConfig, Tensor};
use ddsr_cli::commands::{AMPLITUDE_FILES, CHECKPOINT, LEDGER, SR_IMAGE};
use ddsr_cli::imageio::{read_png, write_png};

const SMALL: &[&str] = &[
    "--iters", "3", "--eval-every", "3", "--patch", "8", "--batch", "2", "--images", "3", "--hr-size", "32",
    "--eval-images", "1", "--eval-size", "32", "--seed", "7",
];

fn ddsr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ddsr")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    ddsr(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pretrained(dir: &Path) -> PathBuf {
    let out = dir.join("pre");
    let mut args = vec!["pretrain", "--out", s(&out)];
    args.extend_from_slice(SMALL);
    assert_eq!(code(&args), 0);
    out
}

fn ledger_trainable(dir: &Path) -> u64 {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(LEDGER)).unwrap()).unwrap();
    v["trainable"].as_u64().unwrap()
}

#[test]
fn missing_out_is_a_usage_error() {
    assert_eq!(code(&["pretrain", "--iters", "5"]), 2);
    assert_eq!(code(&["adapt", "--regime", "sideways", "--out", "x"]), 2);
}

#[test]
fn regime_conflicts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pre = pretrained(dir.path());
    let out = dir.path().join("x");
    assert_eq!(code(&["adapt", "--from", s(&pre), "--regime", "ret", "--out", s(&out)]), 2);
    assert_eq!(code(&["adapt", "--regime", "ft", "--out", s(&out)]), 2);
    assert_eq!(code(&["adapt", "--from", s(&pre), "--regime", "ft", "--rank", "2", "--out", s(&out)]), 2);
    assert_eq!(code(&["adapt", "--from", s(&pre), "--regime", "dan-p", "--d", "64", "--out", s(&out)]), 2);
    assert!(!out.join(CHECKPOINT).exists());
}

#[test]
fn empty_data_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let pre = pretrained(dir.path());
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["eval", "--ckpt", s(&pre), "--data", s(&empty)]), 3);
    assert_eq!(code(&["eval", "--ckpt", s(&dir.path().join("nowhere"))]), 3);
}

#[test]
fn divergent_training_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nan");
    let mut args = vec!["pretrain", "--out", s(&out), "--lr", "1e30"];
    args.extend_from_slice(&SMALL[..2]);
    args.extend_from_slice(&["--eval-every", "100", "--patch", "8", "--images", "2", "--hr-size", "32", "--eval-images", "1", "--eval-size", "32"]);
    let o = ddsr(&args);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn mid_gray_bias_gives_value_128() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::desk();
    let mut m = Model::<f32>::init(cfg, 1).unwrap();
    for (_, p) in m.params.iter_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
    // tanh-GeLU(16) is exactly 16 in f32, so one output weight of 1/32 yields exactly 0.5.
    *m.params.get_mut("upsample.penultimate.bias").unwrap() = Tensor::full(&[cfg.up_dim], 16.0);
    let mut w = vec![0.0f32; 3 * cfg.up_dim];
    for c in 0..3 {
        w[c * cfg.up_dim] = 1.0 / 32.0;
    }
    *m.params.get_mut("upsample.out.weight").unwrap() = Tensor::new(&[3, cfg.up_dim, 1, 1], w).unwrap();
    let ckpt = dir.path().join("gray.ddsr");
    ddsr::checkpoint::save(&m, &ckpt).unwrap();
    let input = dir.path().join("black.png");
    write_png(&input, &Tensor::zeros(&[3, 6, 6])).unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&["infer", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&out)]), 0);
    let img = read_png(&out.join(SR_IMAGE)).unwrap();
    assert_eq!(img.shape(), &[3, 12, 12]);
    assert!(img.data().iter().all(|&v| (v * 255.0).round() == 128.0));
}

#[test]
fn infer_writes_sized_output_and_four_amplitude_maps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig { scale: 4, ..ModelConfig::desk() };
    let m = Model::<f32>::init(cfg, 3).unwrap();
    let ckpt = dir.path().join("x4.ddsr");
    ddsr::checkpoint::save(&m, &ckpt).unwrap();
    let (lr, gt) = (dir.path().join("lr.png"), dir.path().join("gt.png"));
    write_png(&lr, &ddsr::synth::synth_image(1, 0, 24)).unwrap();
    write_png(&gt, &ddsr::synth::synth_image(1, 1, 96)).unwrap();
    let out = dir.path().join("o");
    let o = ddsr(&["infer", "--ckpt", s(&ckpt), "--in", s(&lr), "--gt", s(&gt), "--emit-freq", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_png(&out.join(SR_IMAGE)).unwrap().shape(), &[3, 96, 96]);
    for f in AMPLITUDE_FILES {
        assert!(out.join(f).exists(), "{f}");
    }
    let small = dir.path().join("small.png");
    write_png(&small, &ddsr::synth::synth_image(1, 1, 40)).unwrap();
    assert_eq!(code(&["infer", "--ckpt", s(&ckpt), "--in", s(&lr), "--gt", s(&small), "--out", s(&out)]), 3);
}

#[test]
fn sr_png_survives_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pre = pretrained(dir.path());
    let input = dir.path().join("in.png");
    write_png(&input, &ddsr::synth::synth_image(4, 2, 20)).unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&["infer", "--ckpt", s(&pre), "--in", s(&input), "--out", s(&out)]), 0);
    let first = read_png(&out.join(SR_IMAGE)).unwrap();
    let again = dir.path().join("again.png");
    write_png(&again, &first).unwrap();
    assert_eq!(std::fs::read(out.join(SR_IMAGE)).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn eval_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let pre = pretrained(dir.path());
    let a = ddsr(&["eval", "--ckpt", s(&pre), "--eval-images", "2", "--eval-size", "32"]);
    let b = ddsr(&["eval", "--ckpt", s(&pre), "--eval-images", "2", "--eval-size", "32"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["n_images"], 2);
}

#[test]
fn more_frozen_units_mean_fewer_trainable_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let pre = pretrained(dir.path());
    let mut counts = Vec::new();
    for k in ["3", "4"] {
        let out = dir.path().join(format!("msta{k}"));
        let mut args = vec!["adapt", "--from", s(&pre), "--regime", "dan-p", "--msta", k, "--out", s(&out)];
        args.extend_from_slice(SMALL);
        assert_eq!(code(&args), 0);
        counts.push(ledger_trainable(&out));
    }
    assert!(counts[1] < counts[0]);

    let out = dir.path().join("ft");
    let mut args = vec!["adapt", "--from", s(&pre), "--regime", "ft", "--out", s(&out)];
    args.extend_from_slice(SMALL);
    assert_eq!(code(&args), 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join(LEDGER)).unwrap()).unwrap();
    assert_eq!(v["fraction_vs_ft"], 1.0);
}

#[test]
fn every_output_directory_has_one_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let pre = pretrained(dir.path());
    let m = ddsr_cli::manifest::RunManifest::read(&pre).unwrap();
    assert_eq!(m.command, "pretrain");
    assert_eq!(m.seed, 7);
    assert_eq!(m.checkpoints["output"], pre.join(CHECKPOINT));
    let manifests = std::fs::read_dir(&pre).unwrap().filter(|e| e.as_ref().unwrap().file_name() == "manifest.json").count();
    assert_eq!(manifests, 1);
}

#[test]
fn zero_iterations_leave_the_source_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let pre = pretrained(dir.path());
    let out = dir.path().join("ft0");
    let mut args = vec!["adapt", "--from", s(&pre), "--regime", "ft", "--out", s(&out)];
    args.extend_from_slice(SMALL);
    assert_eq!(args[7], "--iters");
    args[8] = "0";
    assert_eq!(code(&args), 0);
    assert_eq!(std::fs::read(pre.join(CHECKPOINT)).unwrap(), std::fs::read(out.join(CHECKPOINT)).unwrap());
}
