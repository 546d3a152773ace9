//! Synthetic LR generation: bicubic resampling, Gaussian blur and sensor noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::Tensor;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Mirror index into `0..len`, repeating the edge sample (`-1 → 0`).
pub fn symmetric(i: isize, len: usize) -> usize {
    let n = len as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Taps of one output sample along an axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps {
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

/// Resampling taps from `len_in` to `len_out` samples (pixel-centre aligned).
/// Downscaling widens the kernel by the inverse ratio so it also low-passes.
pub fn resize_taps(len_in: usize, len_out: usize) -> Vec<Taps> {
    let scale = len_out as f64 / len_in as f64;
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    (0..len_out)
        .map(|o| {
            let centre = (o as f64 + 0.5) / scale - 0.5;
            let left = (centre - support).floor() as isize;
            let right = (centre + support).ceil() as isize;
            let mut index = Vec::new();
            let mut weight = Vec::new();
            for i in left..=right {
                let wgt = stretch * cubic(stretch * (centre - i as f64));
                if wgt != 0.0 {
                    index.push(symmetric(i, len_in));
                    weight.push(wgt);
                }
            }
            let total: f64 = weight.iter().sum();
            weight.iter_mut().for_each(|w| *w /= total);
            Taps { index, weight }
        })
        .collect()
}

/// Applies per-axis taps to every plane of `[..., H, W]`.
fn separable(img: &Tensor<f64>, rows: &[Taps], cols: &[Taps]) -> Result<Tensor<f64>> {
    let s = img.shape();
    if s.len() < 2 {
        return Err(shape_err!("expected [..., H, W], got {:?}", s));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = img.numel() / (h * w).max(1);
    let (oh, ow) = (rows.len(), cols.len());
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut tmp = vec![0.0; oh * w];
    for p in 0..planes {
        let src = &img.data()[p * h * w..(p + 1) * h * w];
        for (y, t) in rows.iter().enumerate() {
            for x in 0..w {
                tmp[y * w + x] = t.index.iter().zip(&t.weight).map(|(&i, &k)| k * src[i * w + x]).sum();
            }
        }
        for y in 0..oh {
            for t in cols {
                out.push(t.index.iter().zip(&t.weight).map(|(&i, &k)| k * tmp[y * w + i]).sum());
            }
        }
    }
    let mut shape = s.to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Tensor::new(&shape, out)
}

/// Bicubic resize of the trailing two axes.
pub fn bicubic_resize(img: &Tensor<f64>, out_h: usize, out_w: usize) -> Result<Tensor<f64>> {
    let s = img.shape();
    if s.len() < 2 || out_h == 0 || out_w == 0 {
        return Err(shape_err!("cannot resize {:?} to {out_h}x{out_w}", s));
    }
    separable(img, &resize_taps(s[s.len() - 2], out_h), &resize_taps(s[s.len() - 1], out_w))
}

/// Downscales the trailing two axes by an integer ratio.
pub fn bicubic_down(img: &Tensor<f64>, scale: usize) -> Result<Tensor<f64>> {
    let s = img.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(arg_err!("{h}x{w} is not divisible by {scale}"));
    }
    bicubic_resize(img, h / scale, w / scale)
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with symmetric boundaries; `sigma <= 0` is the identity.
pub fn gaussian_blur(img: &Tensor<f64>, sigma: f64) -> Result<Tensor<f64>> {
    if sigma <= 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let taps = |len: usize| -> Vec<Taps> {
        (0..len)
            .map(|o| Taps {
                index: (-r..=r).map(|d| symmetric(o as isize + d, len)).collect(),
                weight: k.clone(),
            })
            .collect()
    };
    let s = img.shape();
    if s.len() < 2 {
        return Err(shape_err!("expected [..., H, W], got {:?}", s));
    }
    separable(img, &taps(s[s.len() - 2]), &taps(s[s.len() - 1]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Simulated,
    Realistic,
}

/// Deterministic recipe turning an HR image into its LR counterpart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub profile: Profile,
    /// Blur σ (HR pixels) drawn uniformly per image.
    pub blur_sigma_range: (f64, f64),
    pub noise_sigma: f64,
    pub scale: usize,
    pub seed: u64,
}

impl DegradationSpec {
    /// Bicubic downsampling only.
    pub fn simulated(scale: usize, seed: u64) -> Self {
        Self { profile: Profile::Simulated, blur_sigma_range: (0.0, 0.0), noise_sigma: 0.0, scale, seed }
    }

    /// Blur, bicubic downsampling and additive Gaussian noise.
    pub fn realistic(scale: usize, seed: u64) -> Self {
        Self { profile: Profile::Realistic, blur_sigma_range: (1.0, 1.6), noise_sigma: 0.01, scale, seed }
    }

    /// A second realistic camera: stronger blur, lighter noise.
    pub fn realistic_alt(scale: usize, seed: u64) -> Self {
        Self { profile: Profile::Realistic, blur_sigma_range: (1.6, 2.2), noise_sigma: 0.005, scale, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.blur_sigma_range;
        if !(0.0..=hi).contains(&lo) || !hi.is_finite() {
            return Err(arg_err!("invalid blur range {lo}..{hi}"));
        }
        if !(0.0..=1.0).contains(&self.noise_sigma) {
            return Err(arg_err!("noise sigma {} outside [0, 1]", self.noise_sigma));
        }
        if self.profile == Profile::Simulated && (hi > 0.0 || self.noise_sigma > 0.0) {
            return Err(arg_err!("simulated profile has no blur or noise"));
        }
        if self.scale == 0 {
            return Err(arg_err!("scale must be positive"));
        }
        Ok(())
    }

    /// Degrades image `index` (`[C, H, W]` in `[0, 1]`); the same `(seed, index)` gives the same LR.
    pub fn apply(&self, hr: &Tensor<f64>, index: u64) -> Result<Tensor<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (lo, hi) = self.blur_sigma_range;
        let sigma = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let blurred = gaussian_blur(hr, sigma)?;
        let mut lr = bicubic_down(&blurred, self.scale)?;
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("validated sigma");
            lr.data_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        }
        Ok(lr.map(|v| v.clamp(0.0, 1.0)))
    }
}
