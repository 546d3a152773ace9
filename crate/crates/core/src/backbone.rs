//! Spatial-domain backbone: conv head, `N` groups of `M` window-attention units,
//! global residual and a pixel-shuffle upsampler whose output is added to a
//! bicubic enlargement of the input.
//!
//! Attention is single-head with `1/√d` scaling over non-overlapping windows;
//! there is no window shifting and no relative position bias.

use crate::adaptation::adapted_linear;
use crate::autograd::{Graph, Var};
use crate::config::{upsample_factors, ModelConfig};
use crate::error::{shape_err, Result};
use crate::params::{conv_specs, linear_specs, norm_specs, Bound, Init, ParamSpec};
use crate::degrade::resize_taps;
use crate::reindex::{pixel_shuffle, window_merge, window_partition, IndexMap, WindowLayout};
use crate::tensor::{Float, Tensor};

pub const LN_EPS: f64 = 1e-5;

pub fn unit_prefix(group: usize, unit: usize) -> String {
    format!("groups.{group}.units.{unit}")
}

pub fn group_conv_prefix(group: usize) -> String {
    format!("groups.{group}.conv")
}

/// Every backbone parameter in creation order.
pub fn backbone_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let (d, c, up) = (cfg.dim, cfg.channels, cfg.up_dim);
    let mut specs = Vec::new();
    specs.extend(conv_specs("head", c, d, 3));
    for g in 0..cfg.groups {
        for u in 0..cfg.units {
            let p = unit_prefix(g, u);
            specs.extend(norm_specs(&format!("{p}.norm1"), d));
            for proj in ["q", "k", "v", "out"] {
                specs.extend(linear_specs(&format!("{p}.attn.{proj}"), d, d));
            }
            specs.extend(norm_specs(&format!("{p}.norm2"), d));
            specs.extend(linear_specs(&format!("{p}.mlp.fc1"), d, cfg.mlp_hidden()));
            specs.extend(linear_specs(&format!("{p}.mlp.fc2"), cfg.mlp_hidden(), d));
        }
        specs.extend(conv_specs(&group_conv_prefix(g), d, d, 3));
    }
    specs.extend(conv_specs("upsample.pre", d, up, 3));
    for (s, f) in upsample_factors(cfg.scale)?.into_iter().enumerate() {
        specs.extend(conv_specs(&format!("upsample.stages.{s}"), up, up * f * f, 3));
    }
    specs.extend(conv_specs("upsample.penultimate", up, up, 3));
    specs.push(ParamSpec::new("upsample.out.weight", &[c, up, 1, 1], Init::FanIn));
    Ok(specs)
}

/// Intermediate maps recorded by [`backbone_forward`].
#[derive(Clone, Debug)]
pub struct BackboneActivations {
    /// Head output F0 `[N, d, h, w]`.
    pub f0: Var,
    /// Output of each group, F1..FN.
    pub groups: Vec<Var>,
    /// F0 + FN.
    pub f_final: Var,
    /// Activated output of the upsampler's penultimate conv at `ρh × ρw`;
    /// the spatial prediction is a bias-free 1×1 projection of it.
    pub penultimate_hr: Var,
    /// Bicubic enlargement of the input, added to the learned output.
    pub image_skip: Var,
    /// Spatial prediction O^s `[N, c, ρh, ρw]`.
    pub output: Var,
}

fn conv<T: Float>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let (w, b) = p.layer(prefix)?;
    g.conv2d_same(x, w, Some(b))
}

fn norm<T: Float>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let (w, b) = p.layer(prefix)?;
    g.layer_norm(x, w, b, T::lit(LN_EPS))
}

/// One pre-norm Transformer unit on window blocks `[B, L, d]`.
///
/// `x ← x + Attn(LN(x))`, then `x ← x + FFN(LN(x))`. The q and v projections
/// pick up LoRA adapters when their `.lora.down`/`.lora.up` entries are bound.
pub fn attention_unit<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    blocks: Var,
    lora_scale: T,
) -> Result<Var> {
    let shape = g.value(blocks).shape().to_vec();
    let d = match shape[..] {
        [_, _, d] => d,
        _ => return Err(shape_err!("attention unit expects [B, L, d], got {:?}", shape)),
    };
    let h = norm(g, p, &format!("{prefix}.norm1"), blocks)?;
    let q = adapted_linear(g, p, &format!("{prefix}.attn.q"), h, lora_scale)?;
    let (wk, bk) = p.layer(&format!("{prefix}.attn.k"))?;
    let k = g.linear(h, wk, Some(bk))?;
    let v = adapted_linear(g, p, &format!("{prefix}.attn.v"), h, lora_scale)?;
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, T::one() / T::lit((d as f64).sqrt()));
    let attn = g.softmax(scores)?;
    let ctx = g.bmm(attn, v, false)?;
    let (wo, bo) = p.layer(&format!("{prefix}.attn.out"))?;
    let ctx = g.linear(ctx, wo, Some(bo))?;
    let x = g.add(blocks, ctx)?;

    let h = norm(g, p, &format!("{prefix}.norm2"), x)?;
    let (w1, b1) = p.layer(&format!("{prefix}.mlp.fc1"))?;
    let h = g.linear(h, w1, Some(b1))?;
    let h = g.gelu(h);
    let (w2, b2) = p.layer(&format!("{prefix}.mlp.fc2"))?;
    let h = g.linear(h, w2, Some(b2))?;
    g.add(x, h)
}

/// `feat + conv(units(feat))`, partitioning into windows around every unit.
pub fn group_forward<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    group: usize,
    feat: Var,
) -> Result<Var> {
    let layout = WindowLayout::new(g.value(feat).shape(), cfg.window)?;
    let (part, merge) = (window_partition(&layout), window_merge(&layout));
    let scale = T::lit(cfg.lora_scale());
    let mut x = feat;
    for u in 0..cfg.units {
        let blocks = g.gather(x, part.clone())?;
        let blocks = attention_unit(g, p, &unit_prefix(group, u), blocks, scale)?;
        x = g.gather(blocks, merge.clone())?;
    }
    let x = conv(g, p, &group_conv_prefix(group), x)?;
    g.add(feat, x)
}

/// `[len, ρ·len]` matrix applying bicubic taps along one axis.
fn resize_matrix<T: Float>(len: usize, scale: usize) -> Tensor<T> {
    let out = len * scale;
    let mut m = vec![0.0; len * out];
    for (o, t) in resize_taps(len, out).iter().enumerate() {
        for (&i, &w) in t.index.iter().zip(&t.weight) {
            m[i * out + o] += w;
        }
    }
    Tensor::new(&[len, out], m.into_iter().map(T::lit).collect()).expect("consistent size")
}

fn swap_last_axes(shape: &[usize]) -> IndexMap {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let src = (0..n * c * h * w)
        .map(|i| {
            let (p, x, y) = (i / (w * h), i / h % w, i % h);
            (p * h + y) * w + x
        })
        .collect();
    IndexMap { shape: vec![n, c, w, h], src }
}

/// Differentiable bicubic enlargement of `[N, C, h, w]` by `scale`.
pub fn bicubic_upsample<T: Float>(g: &mut Graph<T>, x: Var, scale: usize) -> Result<Var> {
    let (_, _, h, w) = g.value(x).dims4()?;
    let mw = g.input(resize_matrix(w, scale));
    let mh = g.input(resize_matrix(h, scale));
    let y = g.linear(x, mw, None)?;
    let map = swap_last_axes(g.value(y).shape());
    let y = g.gather(y, map)?;
    let y = g.linear(y, mh, None)?;
    let map = swap_last_axes(g.value(y).shape());
    g.gather(y, map)
}

/// Runs the backbone on `x` `[N, c, h, w]` (values in `[0, 1]`).
pub fn backbone_forward<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    x: Var,
) -> Result<BackboneActivations> {
    let (_, c, _, _) = g.value(x).dims4()?;
    if c != cfg.channels {
        return Err(shape_err!("input has {c} channels, model expects {}", cfg.channels));
    }
    let factors = upsample_factors(cfg.scale)?;
    let f0 = conv(g, p, "head", x)?;
    let mut feat = f0;
    let mut groups = Vec::with_capacity(cfg.groups);
    for gi in 0..cfg.groups {
        feat = group_forward(g, p, cfg, gi, feat)?;
        groups.push(feat);
    }
    let f_final = g.add(f0, feat)?;

    let y = conv(g, p, "upsample.pre", f_final)?;
    let mut y = g.gelu(y);
    for (s, f) in factors.into_iter().enumerate() {
        y = conv(g, p, &format!("upsample.stages.{s}"), y)?;
        let map = pixel_shuffle(g.value(y).shape(), f)?;
        y = g.gather(y, map)?;
    }
    let y = conv(g, p, "upsample.penultimate", y)?;
    let penultimate_hr = g.gelu(y);
    let residual = g.conv2d(penultimate_hr, p.var("upsample.out.weight")?, None, 0)?;
    let image_skip = bicubic_upsample(g, x, cfg.scale)?;
    let output = g.add(residual, image_skip)?;
    Ok(BackboneActivations { f0, groups, f_final, penultimate_hr, image_skip, output })
}
