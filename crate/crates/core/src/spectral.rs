//! Orthonormal 2D discrete Fourier transforms over NCHW feature maps.
//!
//! Both directions scale by `1/√(HW)`, so the transform is unitary and Parseval
//! holds exactly. Any extents work; rustfft picks mixed-radix or Bluestein plans.
//!
//! Inside the network a spectrum travels as a single "packed" real tensor
//! `[N, 2C, H, W]`: channels `0..C` hold the real planes, `C..2C` the imaginary
//! ones. That is the concatenation the frequency branch convolves over.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{shape_err, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum<T = f32> {
    pub real: Tensor<T>,
    pub imag: Tensor<T>,
}

impl<T: Float> ComplexSpectrum<T> {
    pub fn new(real: Tensor<T>, imag: Tensor<T>) -> Result<Self> {
        if real.shape() != imag.shape() {
            return Err(shape_err!("real {:?} vs imag {:?}", real.shape(), imag.shape()));
        }
        real.dims4()?;
        Ok(Self { real, imag })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { real: Tensor::zeros(shape), imag: Tensor::zeros(shape) }
    }

    pub fn shape(&self) -> &[usize] {
        self.real.shape()
    }

    /// `Σ re² + im²` over every bin.
    pub fn energy(&self) -> T {
        self.real.sum_sq() + self.imag.sum_sq()
    }

    /// Packs into `[N, 2C, H, W]` (real channels first, per sample).
    pub fn to_packed(&self) -> Tensor<T> {
        let (n, c, h, w) = self.real.dims4().expect("validated at construction");
        let plane = c * h * w;
        let mut data = Vec::with_capacity(2 * n * plane);
        for b in 0..n {
            data.extend_from_slice(&self.real.data()[b * plane..(b + 1) * plane]);
            data.extend_from_slice(&self.imag.data()[b * plane..(b + 1) * plane]);
        }
        Tensor::new(&[n, 2 * c, h, w], data).expect("packed shape")
    }

    pub fn from_packed(packed: &Tensor<T>) -> Result<Self> {
        let (n, c2, h, w) = packed.dims4()?;
        if c2 % 2 != 0 {
            return Err(shape_err!("packed spectrum needs an even channel count, got {c2}"));
        }
        let plane = c2 / 2 * h * w;
        let (mut re, mut im) = (Vec::with_capacity(n * plane), Vec::with_capacity(n * plane));
        for b in 0..n {
            let s = &packed.data()[b * 2 * plane..(b + 1) * 2 * plane];
            re.extend_from_slice(&s[..plane]);
            im.extend_from_slice(&s[plane..]);
        }
        let shape = [n, c2 / 2, h, w];
        Ok(Self { real: Tensor::new(&shape, re)?, imag: Tensor::new(&shape, im)? })
    }

    /// Multiplies every bin by `e^{iθ}`.
    pub fn rotate_phase(&self, theta: f64) -> Self {
        let (c, s) = (T::lit(theta.cos()), T::lit(theta.sin()));
        let re = self.real.zip_map(&self.imag, |a, b| a * c - b * s).expect("same shape");
        let im = self.real.zip_map(&self.imag, |a, b| a * s + b * c).expect("same shape");
        Self { real: re, imag: im }
    }
}

/// In-place orthonormal 2D transform of consecutive `h×w` complex planes.
pub fn transform_planes<T: Float>(buf: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    let plane = h * w;
    if plane == 0 {
        return;
    }
    debug_assert_eq!(buf.len() % plane, 0);
    let mut planner = FftPlanner::<T>::new();
    let (rows, cols) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let scratch_len = rows.get_inplace_scratch_len().max(cols.get_inplace_scratch_len());
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); scratch_len];
    let mut transposed = vec![Complex::new(T::zero(), T::zero()); plane];
    let scale = T::one() / T::lit((plane as f64).sqrt());
    for chunk in buf.chunks_exact_mut(plane) {
        rows.process_with_scratch(chunk, &mut scratch);
        for y in 0..h {
            for x in 0..w {
                transposed[x * h + y] = chunk[y * w + x];
            }
        }
        cols.process_with_scratch(&mut transposed, &mut scratch);
        for x in 0..w {
            for y in 0..h {
                chunk[y * w + x] = transposed[x * h + y] * scale;
            }
        }
    }
}

fn complex_buffer<T: Float>(real: &[T], imag: Option<&[T]>) -> Vec<Complex<T>> {
    match imag {
        Some(im) => real.iter().zip(im).map(|(&r, &i)| Complex::new(r, i)).collect(),
        None => real.iter().map(|&r| Complex::new(r, T::zero())).collect(),
    }
}

fn split<T: Float>(buf: &[Complex<T>], shape: &[usize]) -> ComplexSpectrum<T> {
    let re = buf.iter().map(|z| z.re).collect();
    let im = buf.iter().map(|z| z.im).collect();
    ComplexSpectrum {
        real: Tensor::new(shape, re).expect("same shape"),
        imag: Tensor::new(shape, im).expect("same shape"),
    }
}

/// Forward transform of a real map, per sample and channel.
pub fn fft2<T: Float>(input: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    let (_, _, h, w) = input.dims4()?;
    let mut buf = complex_buffer(input.data(), None);
    transform_planes(&mut buf, h, w, false);
    Ok(split(&buf, input.shape()))
}

/// Forward transform of a complex spectrum.
pub fn fft2_complex<T: Float>(spec: &ComplexSpectrum<T>) -> ComplexSpectrum<T> {
    let (_, _, h, w) = spec.real.dims4().expect("validated");
    let mut buf = complex_buffer(spec.real.data(), Some(spec.imag.data()));
    transform_planes(&mut buf, h, w, false);
    split(&buf, spec.shape())
}

/// Full complex inverse transform.
pub fn ifft2_complex<T: Float>(spec: &ComplexSpectrum<T>) -> ComplexSpectrum<T> {
    let (_, _, h, w) = spec.real.dims4().expect("validated");
    let mut buf = complex_buffer(spec.real.data(), Some(spec.imag.data()));
    transform_planes(&mut buf, h, w, true);
    split(&buf, spec.shape())
}

/// Inverse transform keeping the real part. The second value is the largest
/// `|imag|` that was discarded; it is ~0 only for Hermitian-symmetric spectra.
pub fn ifft2<T: Float>(spec: &ComplexSpectrum<T>) -> (Tensor<T>, T) {
    let full = ifft2_complex(spec);
    let residue = full.imag.data().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    (full.real, residue)
}

/// Per-bin magnitude, optionally `ln(1 + ·)`, shifted so DC lands at `(H/2, W/2)`.
pub fn amplitude_map<T: Float>(spec: &ComplexSpectrum<T>, log_scale: bool) -> Tensor<T> {
    let (n, c, h, w) = spec.real.dims4().expect("validated");
    let mut out = Vec::with_capacity(n * c * h * w);
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..h {
            let sy = (y + h - h / 2) % h;
            for x in 0..w {
                let sx = (x + w - w / 2) % w;
                let i = base + sy * w + sx;
                let (re, im) = (spec.real.data()[i], spec.imag.data()[i]);
                let mag = (re * re + im * im).sqrt();
                out.push(if log_scale { mag.ln_1p() } else { mag });
            }
        }
    }
    Tensor::new(&[n, c, h, w], out).expect("same shape")
}

/// Mean amplitude per integer radius ring (distance from DC in shifted coordinates).
pub fn radial_profile<T: Float>(amplitude: &Tensor<T>) -> Vec<f64> {
    let (n, c, h, w) = amplitude.dims4().expect("NCHW amplitude");
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let rings = ((cy * cy + cx * cx).sqrt().floor() as usize) + 1;
    let mut sum = vec![0.0; rings];
    let mut count = vec![0usize; rings];
    for p in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                let r = ((y as f64 - cy).hypot(x as f64 - cx)).floor() as usize;
                sum[r] += amplitude.data()[(p * h + y) * w + x].as_f64();
                count[r] += 1;
            }
        }
    }
    sum.iter().zip(&count).map(|(s, &k)| if k > 0 { s / k as f64 } else { 0.0 }).collect()
}

/// Bins whose normalised radial frequency `max(|fy|/(H/2), |fx|/(W/2))` is at least `cutoff`.
pub fn is_high_band(y: usize, x: usize, h: usize, w: usize, cutoff: f64) -> bool {
    let fy = y.min(h - y) as f64 / (h as f64 / 2.0).max(1.0);
    let fx = x.min(w - x) as f64 / (w as f64 / 2.0).max(1.0);
    fy.max(fx) >= cutoff
}
