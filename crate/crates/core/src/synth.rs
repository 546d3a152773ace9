//! Procedural HR images: smooth gradients, gratings, hard-edged shapes and
//! glyph-like strokes over a faint texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

fn colour<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn blend(px: &mut [f64; 3], c: [f64; 3], alpha: f64) {
    for k in 0..3 {
        px[k] = px[k] * (1.0 - alpha) + c[k] * alpha;
    }
}

/// Image `index` of the corpus `seed`, `[3, size, size]` in `[0, 1]`.
pub fn synth_image(seed: u64, index: u64, size: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ index);
    let s = size as f64;
    let mut px = vec![[0.0f64; 3]; size * size];

    let (c0, c1) = (colour(&mut rng), colour(&mut rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    for y in 0..size {
        for x in 0..size {
            let t = (0.5 + ((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy)).clamp(0.0, 1.0);
            for k in 0..3 {
                px[y * size + x][k] = c0[k] * (1.0 - t) + c1[k] * t;
            }
        }
    }

    for _ in 0..rng.random_range(1..3) {
        let c = colour(&mut rng);
        let period = rng.random_range(2.5..10.0);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (ux, uy) = (theta.cos(), theta.sin());
        let (cx, cy, r) = (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(0.2..0.5) * s);
        let square = rng.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 - cx, y as f64 - cy);
                if fx * fx + fy * fy > r * r {
                    continue;
                }
                let phase = (fx * ux + fy * uy) * std::f64::consts::TAU / period;
                let v = if square { f64::from(phase.sin() > 0.0) } else { 0.5 + 0.5 * phase.sin() };
                blend(&mut px[y * size + x], c, 0.6 * v);
            }
        }
    }

    for _ in 0..rng.random_range(2..6) {
        let c = colour(&mut rng);
        let (x0, y0) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let (w, h) = (rng.random_range(0.1..0.45) * s, rng.random_range(0.1..0.45) * s);
        let disc = rng.random_bool(0.4);
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = if disc {
                    let (ex, ey) = ((fx - x0) / w, (fy - y0) / h);
                    ex * ex + ey * ey <= 1.0
                } else {
                    fx >= x0 && fx < x0 + w && fy >= y0 && fy < y0 + h
                };
                if inside {
                    blend(&mut px[y * size + x], c, 0.9);
                }
            }
        }
    }

    let ink = colour(&mut rng).map(|v| v * 0.3);
    for _ in 0..rng.random_range(0..4) {
        let (gx, gy) = (rng.random_range(0..=size.saturating_sub(7)), rng.random_range(0..=size.saturating_sub(9)));
        let cell = rng.random_range(1..3usize);
        let pattern: u32 = rng.random();
        for k in 0..15 {
            if pattern >> k & 1 == 0 {
                continue;
            }
            let (bx, by) = (gx + (k % 3) * cell, gy + (k / 3) * cell);
            for y in by..(by + cell).min(size) {
                for x in bx..(bx + cell).min(size) {
                    blend(&mut px[y * size + x], ink, 1.0);
                }
            }
        }
    }

    let grain = rng.random_range(0.0..0.04);
    let mut data = vec![0.0; 3 * size * size];
    for (i, p) in px.iter().enumerate() {
        let n = grain * (rng.random::<f64>() - 0.5);
        for k in 0..3 {
            data[k * size * size + i] = (p[k] + n).clamp(0.0, 1.0);
        }
    }
    Tensor::new(&[3, size, size], data).expect("consistent size")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synth_image(7, 3, 32);
        assert_eq!(a, synth_image(7, 3, 32));
        assert_ne!(a, synth_image(7, 4, 32));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn tiny_images_are_supported() {
        assert_eq!(synth_image(1, 0, 4).shape(), &[3, 4, 4]);
    }

    #[test]
    fn images_have_texture() {
        let a = synth_image(1, 0, 48);
        let mean = a.sum() / a.numel() as f64;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.numel() as f64;
        assert!(var > 1e-3);
    }
}
