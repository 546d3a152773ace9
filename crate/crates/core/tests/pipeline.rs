use ddsr::degrade::{bicubic_resize, DegradationSpec};
use ddsr::gradcheck::grad_check;
use ddsr::loss::{dual_loss, LAMBDA};
use ddsr::metrics::{high_band_error, ssim};
use ddsr::spectral::{amplitude_map, fft2, is_high_band};
use ddsr::synth::synth_image;
use ddsr::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn keys(x: f64) -> f64 {
    let t = x.abs();
    match t {
        t if t < 1.0 => 1.5 * t.powi(3) - 2.5 * t * t + 1.0,
        t if t < 2.0 => -0.5 * t.powi(3) + 2.5 * t * t - 4.0 * t + 2.0,
        _ => 0.0,
    }
}

fn mirror(i: i64, n: i64) -> usize {
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
    }
    i as usize
}

/// Direct 2D resampling of one plane: every output pixel sums the full
/// non-separable kernel product over its support.
fn oracle_resize(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let axis = |o: usize, n: usize, m: usize| -> Vec<(usize, f64)> {
        let ratio = m as f64 / n as f64;
        let s = ratio.min(1.0);
        let c = (o as f64 + 0.5) / ratio - 0.5;
        let lo = (c - 2.0 / s).floor() as i64;
        let hi = (c + 2.0 / s).ceil() as i64;
        let raw: Vec<(usize, f64)> = (lo..=hi).map(|i| (mirror(i, n as i64), s * keys(s * (c - i as f64)))).collect();
        let z: f64 = raw.iter().map(|t| t.1).sum();
        raw.into_iter().map(|(i, v)| (i, v / z)).collect()
    };
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for &(iy, wy) in &axis(y, h, oh) {
                for &(ix, wx) in &axis(x, w, ow) {
                    acc += wy * wx * src[iy * w + ix];
                }
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

#[test]
fn checkerboard_resampling_matches_direct_oracle() {
    let board = Tensor::from_fn(&[1, 8, 8], |i| f64::from((i / 8 + i % 8) % 2 == 0));
    let up = bicubic_resize(&board, 16, 16).unwrap();
    let want_up = oracle_resize(board.data(), 8, 8, 16, 16);
    assert!(up.data().iter().zip(&want_up).all(|(a, b)| (a - b).abs() < 1e-6));

    let clipped = up.map(|v| v.clamp(0.0, 1.0));
    let down = DegradationSpec::simulated(2, 0).apply(&clipped, 0).unwrap();
    let want = oracle_resize(clipped.data(), 16, 16, 8, 8);
    assert_eq!(down.shape(), &[1, 8, 8]);
    for (a, b) in down.data().iter().zip(&want) {
        assert!((a - b.clamp(0.0, 1.0)).abs() < 1e-6, "{a} vs {b}");
    }
}

fn high_band_mass(img: &Tensor<f64>) -> f64 {
    let [c, h, w] = *img.shape() else { panic!() };
    let amp = amplitude_map(&fft2(&img.clone().reshape(&[1, c, h, w]).unwrap()).unwrap(), false);
    let mut total = 0.0;
    for p in 0..c {
        for y in 0..h {
            for x in 0..w {
                // Undo the centring of the amplitude map before testing the band.
                let (uy, ux) = ((y + h / 2) % h, (x + w / 2) % w);
                if is_high_band(uy, ux, h, w, 0.5) {
                    total += amp.data()[(p * h + y) * w + x];
                }
            }
        }
    }
    total
}

#[test]
fn realistic_lr_has_less_high_band_mass() {
    for index in 0..4 {
        let hr = synth_image(3, index, 64);
        let sim = DegradationSpec::simulated(2, 5).apply(&hr, index).unwrap();
        let real = DegradationSpec::realistic(2, 5).apply(&hr, index).unwrap();
        assert!(high_band_mass(&real) < high_band_mass(&sim), "image {index}");
    }
}

#[test]
fn degradation_is_seeded() {
    let hr = synth_image(2, 0, 32);
    let spec = DegradationSpec::realistic(2, 11);
    assert_eq!(spec.apply(&hr, 3).unwrap(), spec.apply(&hr, 3).unwrap());
    assert_ne!(spec.apply(&hr, 3).unwrap(), spec.apply(&hr, 4).unwrap());
    assert_ne!(spec.apply(&hr, 3).unwrap(), DegradationSpec::realistic(2, 12).apply(&hr, 3).unwrap());
}

/// SSIM straight from the definition: a full 2D Gaussian window at every valid position.
fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let z: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut n = 0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = g[i] * g[j] / z;
                    let (p, q) = (a[(y + i) * w + x + j], b[(y + i) * w + x + j]);
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn ssim_matches_definition() {
    let a = synth_image(9, 0, 24);
    let b = synth_image(9, 1, 24);
    let want: f64 = (0..3).map(|c| ssim_oracle(&a.data()[c * 576..(c + 1) * 576], &b.data()[c * 576..(c + 1) * 576], 24, 24)).sum::<f64>() / 3.0;
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
}

#[test]
fn ssim_of_small_planes_uses_whole_image_statistics() {
    let a = Tensor::from_fn(&[1, 4, 4], |i| i as f64 / 16.0);
    let b = Tensor::from_fn(&[1, 4, 4], |i| (15 - i) as f64 / 16.0);
    let (ma, mb) = (a.sum() / 16.0, b.sum() / 16.0);
    let va = a.data().iter().map(|v| v * v).sum::<f64>() / 16.0 - ma * ma;
    let vb = b.data().iter().map(|v| v * v).sum::<f64>() / 16.0 - mb * mb;
    let cov = a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>() / 16.0 - ma * mb;
    let want = (2.0 * ma * mb + 1e-4) * (2.0 * cov + 9e-4) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
}

/// Orthonormal DFT of one plane by the defining double sum.
fn dft(plane: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let t = -std::f64::consts::TAU * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    re += plane[y * w + x] * t.cos();
                    im += plane[y * w + x] * t.sin();
                }
            }
            let s = ((h * w) as f64).sqrt();
            out.push((re / s, im / s));
        }
    }
    out
}

#[test]
fn high_band_error_matches_dft_oracle() {
    let a = synth_image(5, 0, 8).reshape(&[1, 3, 8, 8]).unwrap();
    let b = synth_image(5, 1, 8).reshape(&[1, 3, 8, 8]).unwrap();
    let mut sum = 0.0;
    let mut count = 0;
    for c in 0..3 {
        let (fa, fb) = (dft(&a.data()[c * 64..(c + 1) * 64], 8, 8), dft(&b.data()[c * 64..(c + 1) * 64], 8, 8));
        for u in 0..8 {
            for v in 0..8 {
                let fu = u.min(8 - u) as f64 / 4.0;
                let fv = v.min(8 - v) as f64 / 4.0;
                if fu.max(fv) >= 0.25 {
                    let (p, q) = (fa[u * 8 + v], fb[u * 8 + v]);
                    sum += (p.0.hypot(p.1) - q.0.hypot(q.1)).abs();
                    count += 1;
                }
            }
        }
    }
    assert!((high_band_error(&a, &b, 0.25).unwrap() - sum / count as f64).abs() < 1e-10);
}

#[test]
fn dual_loss_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = Tensor::<f64>::uniform(&[1, 2, 4, 4], 0.0, 1.0, &mut rng);
    let s = Tensor::<f64>::uniform(&[1, 2, 4, 4], 0.0, 1.0, &mut rng);
    let f = Tensor::<f64>::uniform(&[1, 4, 4, 4], -1.0, 1.0, &mut rng);
    let spatial = s.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / 32.0;
    let mut freq = 0.0;
    for c in 0..2 {
        let spec = dft(&y.data()[c * 16..(c + 1) * 16], 4, 4);
        for (i, (re, im)) in spec.iter().enumerate() {
            freq += (f.data()[c * 16 + i] - re).abs();
            freq += (f.data()[(2 + c) * 16 + i] - im).abs();
        }
    }
    freq /= 64.0;
    let mut g = Graph::new();
    let (sv, fv) = (g.param(s), g.param(f));
    let l = dual_loss(&mut g, sv, Some(fv), &y, LAMBDA).unwrap();
    assert!((g.value(l.spatial).item() - spatial).abs() < 1e-12);
    assert!((g.value(l.frequency.unwrap()).item() - freq).abs() < 1e-12);
    assert!((g.value(l.total).item() - (spatial + 10.0 * freq)).abs() < 1e-11);
}

#[test]
fn dual_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = Tensor::<f64>::uniform(&[1, 1, 4, 4], 0.0, 1.0, &mut rng);
    let inputs = [Tensor::uniform(&[1, 1, 4, 4], 0.0, 1.0, &mut rng), Tensor::uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng)];
    let err = grad_check(&inputs, |g, v| {
        let spec = g.fft2(v[0])?;
        let spec = g.add(spec, v[1])?;
        Ok(dual_loss(g, v[0], Some(spec), &y, LAMBDA)?.total)
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}
