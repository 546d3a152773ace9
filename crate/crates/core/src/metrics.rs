//! Image-quality metrics on `[0, 1]` images.

use crate::error::{shape_err, Result};
use crate::spectral::{fft2, is_high_band};
use crate::tensor::Tensor;

pub const PSNR_CAP: f64 = 100.0;

fn same_shape(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("metric on {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.numel().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10·log10(peak² / MSE)`, capped at 100 dB.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; 11] {
    let mut w = [0.0; 11];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Valid-region separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; 11]) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h - 10, w - 10);
    let mut tmp = vec![0.0; oh * w];
    for y in 0..oh {
        for x in 0..w {
            tmp[y * w + x] = (0..11).map(|i| k[i] * plane[(y + i) * w + x]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..11).map(|i| k[i] * tmp[y * w + x + i]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over every plane of `[..., H, W]` with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, peak 1. Planes smaller than the window are compared whole.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    same_shape(a, b)?;
    let s = a.shape();
    if s.len() < 2 {
        return Err(shape_err!("ssim needs [..., H, W], got {:?}", s));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = a.numel() / (h * w).max(1);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let k = gaussian_window();
    let mut total = 0.0;
    for p in 0..planes {
        let pa = &a.data()[p * h * w..(p + 1) * h * w];
        let pb = &b.data()[p * h * w..(p + 1) * h * w];
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let maps = [prod(&|x, _| x), prod(&|_, y| y), prod(&|x, _| x * x), prod(&|_, y| y * y), prod(&|x, y| x * y)];
        let filtered: Vec<Vec<f64>> = if h >= 11 && w >= 11 {
            maps.iter().map(|m| filter_valid(m, h, w, &k).0).collect()
        } else {
            maps.iter().map(|m| vec![m.iter().sum::<f64>() / m.len() as f64]).collect()
        };
        let n = filtered[0].len();
        let mut acc = 0.0;
        for i in 0..n {
            let (mx, my) = (filtered[0][i], filtered[1][i]);
            let vx = filtered[2][i] - mx * mx;
            let vy = filtered[3][i] - my * my;
            let cov = filtered[4][i] - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / planes as f64)
}

/// Mean absolute amplitude difference over spectral bins whose normalised
/// frequency is at least `cutoff` (`[N, C, H, W]` inputs).
pub fn high_band_error(pred: &Tensor<f64>, target: &Tensor<f64>, cutoff: f64) -> Result<f64> {
    same_shape(pred, target)?;
    let (n, c, h, w) = pred.dims4()?;
    let (sp, st) = (fft2(pred)?, fft2(target)?);
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                if !is_high_band(y, x, h, w, cutoff) {
                    continue;
                }
                let i = (p * h + y) * w + x;
                let ap = sp.real.data()[i].hypot(sp.imag.data()[i]);
                let at = st.real.data()[i].hypot(st.imag.data()[i]);
                sum += (ap - at).abs();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}
