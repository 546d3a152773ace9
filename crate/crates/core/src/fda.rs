//! Frequency-domain adaptation branch.
//!
//! Spectra travel as packed real/imaginary channel blocks, so every conv here
//! sees twice the channels of the spatial map it came from. Nothing is
//! centre-shifted inside the network.

use crate::autograd::{Graph, Var};
use crate::backbone::BackboneActivations;
use crate::config::ModelConfig;
use crate::error::{arg_err, shape_err, Result};
use crate::params::{conv_specs, Bound, ParamSpec, ParamStore};
use crate::reindex::pixel_shuffle;
use crate::tensor::{Float, Tensor};

pub fn block_prefix(k: usize) -> String {
    format!("fda.blocks.{k}")
}

pub fn fda_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let (c, d, df, up) = (cfg.channels, cfg.dim, cfg.freq_dim, cfg.up_dim);
    let mut specs = Vec::new();
    specs.extend(conv_specs("fda.init", 2 * c, df, 3));
    for k in 0..cfg.freq_stages {
        let p = block_prefix(k);
        specs.extend(conv_specs(&format!("{p}.embed"), 2 * d, df, 1));
        specs.extend(conv_specs(&format!("{p}.refine.conv1"), df, df, 3));
        specs.extend(conv_specs(&format!("{p}.refine.conv2"), df, df, 3));
        specs.extend(conv_specs(&format!("{p}.merge.conv1"), 2 * df, df, 3));
        specs.extend(conv_specs(&format!("{p}.merge.conv2"), df, df, 3));
    }
    let rho = cfg.scale;
    specs.extend(conv_specs("fda.up.conv", df, df * rho * rho, 3));
    specs.extend(conv_specs("fda.up.skip", 2 * up, df, 1));
    specs.extend(conv_specs("fda.up.out", df, 2 * c, 3));
    Ok(specs)
}

#[derive(Clone, Debug)]
pub struct FdaState {
    /// F0^f `[N, d^f, h, w]`.
    pub f0f: Var,
    /// F_n^f after each fusion block.
    pub stages: Vec<Var>,
    /// O^f packed as `[N, 2c, ρh, ρw]`.
    pub spectrum: Var,
    /// O, the real part of the inverse transform of O^f.
    pub output: Var,
}

fn conv<T: Float>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let (w, b) = p.layer(prefix)?;
    g.conv2d_same(x, w, Some(b))
}

/// `conv → GeLU → conv`.
fn f_res<T: Float>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = conv(g, p, &format!("{prefix}.conv1"), x)?;
    let h = g.gelu(h);
    conv(g, p, &format!("{prefix}.conv2"), h)
}

/// F0^f from the concatenated real and imaginary planes of `fft2(x)`.
pub fn init_freq_feature<T: Float>(g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
    let spec = g.fft2(x)?;
    conv(g, p, "fda.init", spec)
}

/// One fusion block: refine `prev`, then merge it with the projected spectrum of `spatial`.
pub fn fusion_block<T: Float>(g: &mut Graph<T>, p: &Bound, k: usize, prev: Var, spatial: Var) -> Result<Var> {
    let prefix = block_prefix(k);
    let e = g.fft2(spatial)?;
    let e = conv(g, p, &format!("{prefix}.embed"), e)?;
    let r = f_res(g, p, &format!("{prefix}.refine"), prev)?;
    let refined = g.add(prev, r)?;
    let m = g.concat_channels(&[refined, e])?;
    let m = f_res(g, p, &format!("{prefix}.merge"), m)?;
    g.add(refined, m)
}

/// HR spectrum O^f from F_N^f plus the spectra of the penultimate spatial
/// feature and of the backbone's bicubic image skip.
pub fn freq_upsample<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    feat: Var,
    penultimate_hr: Var,
    image_skip: Var,
) -> Result<Var> {
    let y = conv(g, p, "fda.up.conv", feat)?;
    let map = pixel_shuffle(g.value(y).shape(), cfg.scale)?;
    let y = g.gather(y, map)?;
    let s = g.fft2(penultimate_hr)?;
    let s = conv(g, p, "fda.up.skip", s)?;
    let (ys, ss) = (g.value(y).shape(), g.value(s).shape());
    if ys[2..] != ss[2..] {
        return Err(shape_err!("frequency path {:?} vs penultimate spectrum {:?}", ys, ss));
    }
    let y = g.add(y, s)?;
    let y = conv(g, p, "fda.up.out", y)?;
    let k = g.fft2(image_skip)?;
    g.add(y, k)
}

/// Runs the branch on input `x` using the recorded backbone activations.
///
/// Block `k` consumes group output `N − n^f + k`.
pub fn fda_forward<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    x: Var,
    acts: &BackboneActivations,
) -> Result<FdaState> {
    let nf = cfg.freq_stages;
    if nf > acts.groups.len() {
        return Err(arg_err!("{nf} fusion stages but {} recorded groups", acts.groups.len()));
    }
    let f0f = init_freq_feature(g, p, x)?;
    let first = acts.groups.len() - nf;
    let mut f = f0f;
    let mut stages = Vec::with_capacity(nf);
    for (k, &spatial) in acts.groups[first..].iter().enumerate() {
        f = fusion_block(g, p, k, f, spatial)?;
        stages.push(f);
    }
    let spectrum = freq_upsample(g, p, cfg, f, acts.penultimate_hr, acts.image_skip)?;
    let output = g.ifft2_real(spectrum)?;
    Ok(FdaState { f0f, stages, spectrum, output })
}

/// Sets the upsampler of the branch so that O^f equals the spectrum of the
/// backbone's spatial prediction: the skip projection applies the backbone's
/// 1×1 output weights to the real and imaginary blocks, the output conv copies
/// those channels through its centre tap, and the shuffle path starts at zero.
///
/// Needs `d^f ≥ 2c`.
pub fn warm_start<T: Float>(store: &mut ParamStore<T>, cfg: &ModelConfig) -> Result<()> {
    let (c, df, up) = (cfg.channels, cfg.freq_dim, cfg.up_dim);
    if df < 2 * c {
        return Err(arg_err!("warm start needs d^f >= {}, got {df}", 2 * c));
    }
    let w_out = store.get("upsample.out.weight")?.clone();
    if w_out.shape() != [c, up, 1, 1] {
        return Err(shape_err!("spatial output weight {:?}", w_out.shape()));
    }
    let mut skip = Tensor::zeros(&[df, 2 * up, 1, 1]);
    for part in 0..2 {
        for o in 0..c {
            for i in 0..up {
                skip.data_mut()[(part * c + o) * 2 * up + part * up + i] = w_out.data()[o * up + i];
            }
        }
    }
    let mut out = Tensor::zeros(&[2 * c, df, 3, 3]);
    for o in 0..2 * c {
        out.data_mut()[(o * df + o) * 9 + 4] = T::one();
    }
    let up_shape = store.get("fda.up.conv.weight")?.shape().to_vec();
    let set = [
        ("fda.up.skip.weight", skip),
        ("fda.up.skip.bias", Tensor::zeros(&[df])),
        ("fda.up.out.weight", out),
        ("fda.up.out.bias", Tensor::zeros(&[2 * c])),
        ("fda.up.conv.weight", Tensor::zeros(&up_shape)),
        ("fda.up.conv.bias", Tensor::zeros(&[up_shape[0]])),
    ];
    for (name, value) in set {
        let slot = store.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(shape_err!("{name}: {:?} vs {:?}", slot.shape(), value.shape()));
        }
        *slot = value;
    }
    Ok(())
}

/// Zeroes the last conv of both residual functions in every fusion block.
pub fn zero_fusion_residuals<T: Float>(store: &mut ParamStore<T>, cfg: &ModelConfig) -> Result<()> {
    for k in 0..cfg.freq_stages {
        for part in ["refine", "merge"] {
            for leaf in ["weight", "bias"] {
                let t = store.get_mut(&format!("{}.{part}.conv2.{leaf}", block_prefix(k)))?;
                *t = Tensor::zeros(t.shape());
            }
        }
    }
    Ok(())
}
