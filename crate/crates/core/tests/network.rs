use ddsr::adaptation::{apply_freeze_plan, FreezePolicy};
use ddsr::backbone::{attention_unit, backbone_forward, backbone_specs, group_forward, unit_prefix};
use ddsr::fda::{fda_forward, fusion_block, init_freq_feature, zero_fusion_residuals};
use ddsr::gradcheck::GradCheck;
use ddsr::kernels::{conv2d_forward, gelu};
use ddsr::model::{forward, Model};
use ddsr::params::{Bound, ParamStore};
use ddsr::spectral::fft2;
use ddsr::{Graph, ModelConfig, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy() -> ModelConfig {
    ModelConfig {
        groups: 2,
        units: 2,
        dim: 8,
        window: 4,
        scale: 2,
        channels: 3,
        frozen_units: 1,
        rank: 2,
        alpha: 2,
        freq_dim: 4,
        freq_stages: 2,
        up_dim: 4,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    Tensor::uniform(&[n, c, h, w], 0.0, 1.0, &mut rng(seed))
}

/// Resamples every parameter at a larger scale so gradients are not dominated by residual paths.
fn randomize(store: &mut ParamStore<f64>, std: f64, seed: u64) {
    let mut r = rng(seed);
    for (_, p) in store.iter_mut() {
        p.value = Tensor::normal(p.value.shape(), std, &mut r);
    }
}

fn zero(store: &mut ParamStore<f64>, name: &str) {
    let t = store.get_mut(name).unwrap();
    *t = Tensor::zeros(t.shape());
}

fn bind_inputs(names: &[String], vars: &[Var]) -> Bound {
    names.iter().cloned().zip(vars.iter().copied()).collect()
}

#[test]
fn output_shape_for_scale_four() {
    let cfg = ModelConfig { scale: 4, groups: 1, units: 1, freq_stages: 1, ..toy() };
    let m = Model::<f32>::init(cfg, 0).unwrap();
    let x = Tensor::<f32>::full(&[1, 3, 24, 24], 0.5);
    assert_eq!(m.predict(&x).unwrap().spatial.shape(), &[1, 3, 96, 96]);
    let mut m = m;
    m.attach_fda(1).unwrap();
    let mut g = Graph::new();
    let p = m.params.bind_constant(&mut g);
    let xv = g.input(x);
    let out = forward(&mut g, &p, &cfg, xv).unwrap();
    assert_eq!(g.value(out.fda.unwrap().spectrum).shape(), &[1, 6, 96, 96]);
}

#[test]
fn global_residual_is_exact() {
    let cfg = toy();
    let m = Model::<f32>::init(cfg, 1).unwrap();
    let mut g = Graph::new();
    let p = m.params.bind_constant(&mut g);
    let x = g.input(image(1, 3, 8, 8, 2).cast());
    let a = backbone_forward(&mut g, &p, &cfg, x).unwrap();
    let f0 = g.value(a.f0).clone();
    let fin = g.value(*a.groups.last().unwrap()).clone();
    let sum = f0.zip_map(&fin, |u, v| u + v).unwrap();
    assert_eq!(g.value(a.f_final), &sum);
}

#[test]
fn zeroed_output_projections_make_unit_identity() {
    let cfg = toy();
    let mut store = Model::<f64>::init(cfg, 3).unwrap().params;
    let p = unit_prefix(0, 0);
    for leaf in ["attn.out.weight", "attn.out.bias", "mlp.fc2.weight", "mlp.fc2.bias"] {
        zero(&mut store, &format!("{p}.{leaf}"));
    }
    let mut g = Graph::new();
    let b = store.bind_constant(&mut g);
    let x = Tensor::uniform(&[3, 16, 8], -1.0, 1.0, &mut rng(4));
    let xv = g.input(x.clone());
    let y = attention_unit(&mut g, &b, &p, xv, 1.0).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn zeroed_group_is_identity() {
    let cfg = toy();
    let mut store = Model::<f64>::init(cfg, 3).unwrap().params;
    for u in 0..cfg.units {
        for leaf in ["attn.out.weight", "attn.out.bias", "mlp.fc2.weight", "mlp.fc2.bias"] {
            zero(&mut store, &format!("{}.{leaf}", unit_prefix(1, u)));
        }
    }
    zero(&mut store, "groups.1.conv.weight");
    zero(&mut store, "groups.1.conv.bias");
    let mut g = Graph::new();
    let b = store.bind_constant(&mut g);
    let x = image(2, 8, 5, 7, 5);
    let xv = g.input(x.clone());
    let y = group_forward(&mut g, &b, &cfg, 1, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

/// Straight-line single-head pre-norm attention unit on one block.
fn unit_oracle(x: &[Vec<f64>], s: &ParamStore<f64>, p: &str) -> Vec<Vec<f64>> {
    let w = |n: &str| s.get(&format!("{p}.{n}")).unwrap().data().to_vec();
    let lin = |v: &[f64], wn: &str, bn: &str| -> Vec<f64> {
        let (wt, bt) = (w(wn), w(bn));
        let dout = bt.len();
        (0..dout).map(|o| bt[o] + v.iter().enumerate().map(|(i, a)| a * wt[i * dout + o]).sum::<f64>()).collect()
    };
    let ln = |v: &[f64], g: &str, b: &str| -> Vec<f64> {
        let n = v.len() as f64;
        let mu = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / n;
        let (gw, bw) = (w(g), w(b));
        v.iter().enumerate().map(|(i, a)| (a - mu) / (var + 1e-5).sqrt() * gw[i] + bw[i]).collect()
    };
    let d = x[0].len();
    let h: Vec<_> = x.iter().map(|r| ln(r, "norm1.weight", "norm1.bias")).collect();
    let q: Vec<_> = h.iter().map(|r| lin(r, "attn.q.weight", "attn.q.bias")).collect();
    let k: Vec<_> = h.iter().map(|r| lin(r, "attn.k.weight", "attn.k.bias")).collect();
    let v: Vec<_> = h.iter().map(|r| lin(r, "attn.v.weight", "attn.v.bias")).collect();
    let mut out = Vec::new();
    for i in 0..x.len() {
        let s: Vec<f64> = k.iter().map(|kj| q[i].iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()).collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|a| (a - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let ctx: Vec<f64> = (0..d).map(|c| (0..x.len()).map(|j| e[j] / z * v[j][c]).sum()).collect();
        let a = lin(&ctx, "attn.out.weight", "attn.out.bias");
        let r: Vec<f64> = x[i].iter().zip(&a).map(|(u, v)| u + v).collect();
        let f = lin(&ln(&r, "norm2.weight", "norm2.bias"), "mlp.fc1.weight", "mlp.fc1.bias");
        let f: Vec<f64> = f.into_iter().map(gelu).collect();
        let f = lin(&f, "mlp.fc2.weight", "mlp.fc2.bias");
        out.push(r.iter().zip(&f).map(|(u, v)| u + v).collect());
    }
    out
}

#[test]
fn attention_unit_matches_straight_line_oracle() {
    let cfg = ModelConfig { dim: 2, rank: 1, ..toy() };
    let specs = backbone_specs(&cfg).unwrap();
    let mut store = ParamStore::<f64>::from_specs(&specs, &mut rng(0));
    randomize(&mut store, 0.7, 9);
    let x = vec![vec![0.3, -1.2], vec![0.9, 0.4]];
    let mut g = Graph::new();
    let b = store.bind_constant(&mut g);
    let xt = Tensor::new(&[1, 2, 2], x.concat()).unwrap();
    let xv = g.input(xt);
    let y = attention_unit(&mut g, &b, &unit_prefix(0, 0), xv, 1.0).unwrap();
    let expect = unit_oracle(&x, &store, &unit_prefix(0, 0)).concat();
    for (a, e) in g.value(y).data().iter().zip(&expect) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
}

#[test]
fn attention_unit_gradient() {
    let cfg = toy();
    let mut store = Model::<f64>::init(cfg, 0).unwrap().params;
    randomize(&mut store, 0.3, 1);
    let p = unit_prefix(0, 0);
    let names: Vec<String> = store.names().filter(|n| n.starts_with(&format!("{p}."))).map(str::to_string).collect();
    let mut inputs: Vec<Tensor<f64>> = names.iter().map(|n| store.get(n).unwrap().clone()).collect();
    inputs.push(Tensor::uniform(&[1, 16, 8], -1.0, 1.0, &mut rng(2)));
    let err = GradCheck::sampled(12)
        .run(&inputs, |g, v| {
            let b = bind_inputs(&names, v);
            attention_unit(g, &b, &p, *v.last().unwrap(), 1.0)
        })
        .unwrap();
    assert!(err < 1e-4, "attention unit rel. error {err}");
}

#[test]
fn backbone_is_deterministic() {
    let cfg = toy();
    let m = Model::<f32>::init(cfg, 5).unwrap();
    let x: Tensor<f32> = image(2, 3, 8, 8, 6).cast();
    assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
}

#[test]
fn image_skip_matches_reference_resampler() {
    let x = image(2, 3, 6, 5, 9);
    let mut g = Graph::<f64>::new();
    let xv = g.input(x.clone());
    let up = ddsr::backbone::bicubic_upsample(&mut g, xv, 3).unwrap();
    let got = g.value(up).clone();
    let want = ddsr::degrade::bicubic_resize(&x, 18, 15).unwrap();
    assert_eq!(got.shape(), want.shape());
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn constant_network_gives_constant_output() {
    let cfg = toy();
    let mut store = Model::<f64>::init(cfg, 5).unwrap().params;
    for (name, p) in store.iter_mut() {
        if name != "upsample.out.weight" {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    *store.get_mut("upsample.penultimate.bias").unwrap() = Tensor::full(&[cfg.up_dim], 0.8);
    let m = Model { config: cfg, params: store };
    let out = m.predict(&Tensor::full(&[1, 3, 8, 8], 0.3)).unwrap().spatial;
    let w = m.params.get("upsample.out.weight").unwrap().data().to_vec();
    for c in 0..3 {
        let expect: f64 = 0.3 + (0..cfg.up_dim).map(|i| w[c * cfg.up_dim + i] * gelu(0.8)).sum::<f64>();
        let plane = &out.data()[c * 256..(c + 1) * 256];
        assert!(plane.iter().all(|&v| (v - expect).abs() < 1e-12));
    }
}

/// All parameters of a model plus the input, checked end to end.
fn model_grad_error(model: &Model<f64>, x: Tensor<f64>, per_tensor: usize) -> f64 {
    let cfg = model.config;
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let mut inputs: Vec<Tensor<f64>> = names.iter().map(|n| model.params.get(n).unwrap().clone()).collect();
    inputs.push(x);
    GradCheck::sampled(per_tensor)
        .run(&inputs, |g, v| {
            let b = bind_inputs(&names, v);
            let out = forward(g, &b, &cfg, *v.last().unwrap())?;
            let s = out.spatial();
            match out.fda {
                Some(f) => {
                    let both = g.concat_channels(&[s, f.output])?;
                    g.concat_channels(&[both, f.spectrum])
                }
                None => Ok(s),
            }
        })
        .unwrap()
}

#[test]
fn single_unit_model_gradient() {
    let cfg = ModelConfig { groups: 1, units: 1, freq_stages: 1, ..toy() };
    let mut m = Model::<f64>::init(cfg, 0).unwrap();
    randomize(&mut m.params, 0.2, 3);
    let err = model_grad_error(&m, image(1, 3, 8, 8, 4), 6);
    assert!(err < 1e-3, "rel. error {err}");
}

#[test]
fn dan_p_model_gradient() {
    let cfg = toy();
    let mut m = Model::<f64>::init(cfg, 0).unwrap();
    m.attach_fda(1).unwrap();
    let plan = apply_freeze_plan(m.backbone_names().iter().map(String::as_str), &cfg, FreezePolicy::ShallowUnitsPerGroup, 1)
        .unwrap();
    m.attach_plan(&plan, 2).unwrap();
    randomize(&mut m.params, 0.2, 3);
    let err = model_grad_error(&m, image(1, 3, 8, 8, 4), 5);
    assert!(err < 1e-3, "rel. error {err}");
}

#[test]
fn zero_fusion_residuals_preserve_features() {
    let cfg = toy();
    let mut m = Model::<f64>::init(cfg, 0).unwrap();
    m.attach_fda(1).unwrap();
    zero_fusion_residuals(&mut m.params, &cfg).unwrap();
    let mut g = Graph::new();
    let p = m.params.bind_constant(&mut g);
    let x = g.input(image(2, 3, 8, 8, 7));
    let out = forward(&mut g, &p, &cfg, x).unwrap();
    let f = out.fda.unwrap();
    assert_eq!(f.stages.len(), cfg.freq_stages);
    for s in f.stages {
        assert_eq!(g.value(s), g.value(f.f0f));
    }
}

#[test]
fn warm_start_reproduces_spatial_output() {
    let cfg = ModelConfig { freq_dim: 6, ..toy() };
    let mut m = Model::<f64>::init(cfg, 0).unwrap();
    randomize(&mut m.params, 0.3, 2);
    m.attach_fda(1).unwrap();
    let pred = m.predict(&image(2, 3, 8, 8, 3)).unwrap();
    assert!(pred.output.max_abs_diff(&pred.spatial) < 1e-12);
    assert!(pred.imag_residue < 1e-12);
}

#[test]
fn zero_input_gives_bias_feature() {
    let cfg = toy();
    let mut m = Model::<f64>::init(cfg, 0).unwrap();
    m.attach_fda(1).unwrap();
    let mut g = Graph::new();
    let p = m.params.bind_constant(&mut g);
    let x = g.input(Tensor::zeros(&[1, 3, 4, 4]));
    let f = init_freq_feature(&mut g, &p, x).unwrap();
    let bias = m.params.get("fda.init.bias").unwrap();
    for (i, v) in g.value(f).data().iter().enumerate() {
        assert_eq!(*v, bias.data()[i / 16]);
    }
}

#[test]
fn fusion_block_matches_op_replay() {
    let cfg = ModelConfig { dim: 4, freq_dim: 2, rank: 1, ..toy() };
    let mut m = Model::<f64>::init(cfg, 0).unwrap();
    m.attach_fda(1).unwrap();
    randomize(&mut m.params, 0.5, 6);
    let prev = image(1, 2, 4, 4, 1);
    let spatial = image(1, 4, 4, 4, 2);
    let mut g = Graph::new();
    let p = m.params.bind_constant(&mut g);
    let (pv, sv) = (g.input(prev.clone()), g.input(spatial.clone()));
    let y = fusion_block(&mut g, &p, 0, pv, sv).unwrap();

    let w = |n: &str| m.params.get(&format!("fda.blocks.0.{n}")).unwrap();
    let conv = |x: &Tensor<f64>, n: &str, pad| conv2d_forward(x, w(&format!("{n}.weight")), Some(w(&format!("{n}.bias"))), pad).unwrap();
    let add = |a: &Tensor<f64>, b: &Tensor<f64>| a.zip_map(b, |u, v| u + v).unwrap();
    let e = conv(&fft2(&spatial).unwrap().to_packed(), "embed", 0);
    let r = conv(&conv(&prev, "refine.conv1", 1).map(gelu), "refine.conv2", 1);
    let refined = add(&prev, &r);
    let cat = Tensor::new(&[1, 4, 4, 4], [refined.data(), e.data()].concat()).unwrap();
    let mm = conv(&conv(&cat, "merge.conv1", 1).map(gelu), "merge.conv2", 1);
    let expect = add(&refined, &mm);
    assert!(g.value(y).max_abs_diff(&expect) < 1e-12);
}

#[test]
fn batch_members_are_independent() {
    let cfg = toy();
    let mut m = Model::<f32>::init(cfg, 0).unwrap();
    m.attach_fda(1).unwrap();
    let x: Tensor<f32> = image(2, 3, 8, 8, 9).cast();
    let both = m.predict(&x).unwrap();
    for i in 0..2 {
        let one = m.predict(&x.select0(i).unwrap().reshape(&[1, 3, 8, 8]).unwrap()).unwrap();
        assert_eq!(one.output.data(), both.output.select0(i).unwrap().data());
        assert_eq!(one.spatial.data(), both.spatial.select0(i).unwrap().data());
    }
}

#[test]
fn exact_spectrum_gives_exact_image() {
    let y = image(1, 3, 6, 5, 3);
    let mut g = Graph::new();
    let spec = g.input(fft2(&y).unwrap().to_packed());
    let o = g.ifft2_real(spec).unwrap();
    assert!(g.value(o).max_abs_diff(&y) < 1e-12);
    let zero = g.input(Tensor::zeros(&[1, 6, 6, 5]));
    let o = g.ifft2_real(zero).unwrap();
    assert!(g.value(o).data().iter().all(|&v| v == 0.0));
}

#[test]
fn fda_rejects_too_many_stages() {
    let cfg = toy();
    let mut m = Model::<f64>::init(cfg, 0).unwrap();
    m.attach_fda(1).unwrap();
    let mut g = Graph::new();
    let p = m.params.bind_constant(&mut g);
    let x = g.input(image(1, 3, 8, 8, 1));
    let mut acts = backbone_forward(&mut g, &p, &cfg, x).unwrap();
    acts.groups.truncate(1);
    assert!(fda_forward(&mut g, &p, &cfg, x, &acts).is_err());
}
