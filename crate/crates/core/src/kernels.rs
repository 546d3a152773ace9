//! Forward and backward numeric kernels behind the autograd ops.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Float, MatRef, Tensor};

/// Padding that keeps spatial size for an odd kernel.
pub fn same_padding(kernel: usize) -> Result<usize> {
    if kernel.is_multiple_of(2) {
        return Err(shape_err!("same padding needs an odd kernel, got {kernel}"));
    }
    Ok((kernel - 1) / 2)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], pad: usize) -> Result<Self> {
        let [batch, cin, h, w]: [usize; 4] =
            input.try_into().map_err(|_| shape_err!("conv2d input must be NCHW, got {:?}", input))?;
        let [cout, wcin, kh, kw]: [usize; 4] = weight
            .try_into()
            .map_err(|_| shape_err!("conv2d weight must be [Cout,Cin,kh,kw], got {:?}", weight))?;
        if wcin != cin {
            return Err(shape_err!("conv2d channel mismatch: input has {cin}, weight expects {wcin}"));
        }
        if kh == 0 || kw == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_err!("conv2d kernel {kh}x{kw} does not fit {h}x{w} with padding {pad}"));
        }
        Ok(Self { batch, cin, h, w, cout, kh, kw, pad, oh: h + 2 * pad + 1 - kh, ow: w + 2 * pad + 1 - kw })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }
}

fn im2col<T: Float>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let p = g.p();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.oh {
                    let iy = (oy + ky) as isize - g.pad as isize;
                    let dst = &mut col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(ci * g.h + iy as usize) * g.w..(ci * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(col: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let p = g.p();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.oh {
                    let iy = (oy + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] = dx[base + ix as usize] + col[row + oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation, stride 1, zero padding.
pub fn conv2d_forward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), weight.shape(), pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(shape_err!("conv2d bias {:?} for {} output channels", b.shape(), g.cout));
        }
    }
    let (k, p) = (g.k(), g.p());
    let in_plane = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); g.batch * g.cout * p];
    out.par_chunks_mut(g.cout * p).enumerate().for_each(|(n, o)| {
        let xs = &x.data()[n * in_plane..(n + 1) * in_plane];
        let wm = MatRef::new(weight.data(), g.cout, k);
        if g.is_pointwise() {
            gemm(wm, MatRef::new(xs, k, p), o, false);
        } else {
            let mut col = vec![T::zero(); k * p];
            im2col(xs, &g, &mut col);
            gemm(wm, MatRef::new(&col, k, p), o, false);
        }
        if let Some(b) = bias {
            for (co, plane) in o.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    });
    Tensor::new(&[g.batch, g.cout, g.oh, g.ow], out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    pad: usize,
    grad: &Tensor<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(x.shape(), weight.shape(), pad)?;
    let (k, p) = (g.k(), g.p());
    let in_plane = g.cin * g.h * g.w;
    let out_plane = g.cout * p;
    let [need_x, need_w, need_b] = need;

    let input = need_x.then(|| {
        let mut dx = vec![T::zero(); g.batch * in_plane];
        dx.par_chunks_mut(in_plane).enumerate().for_each(|(n, d)| {
            let gs = &grad.data()[n * out_plane..(n + 1) * out_plane];
            let wt = MatRef::new(weight.data(), g.cout, k).t();
            if g.is_pointwise() {
                gemm(wt, MatRef::new(gs, g.cout, p), d, false);
            } else {
                let mut dcol = vec![T::zero(); k * p];
                gemm(wt, MatRef::new(gs, g.cout, p), &mut dcol, false);
                col2im(&dcol, &g, d);
            }
        });
        Tensor::new(x.shape(), dx).expect("input shape")
    });

    let weight_grad = need_w.then(|| {
        let partials: Vec<Vec<T>> = (0..g.batch)
            .into_par_iter()
            .map(|n| {
                let xs = &x.data()[n * in_plane..(n + 1) * in_plane];
                let gs = &grad.data()[n * out_plane..(n + 1) * out_plane];
                let mut dw = vec![T::zero(); g.cout * k];
                if g.is_pointwise() {
                    gemm(MatRef::new(gs, g.cout, p), MatRef::new(xs, k, p).t(), &mut dw, false);
                } else {
                    let mut col = vec![T::zero(); k * p];
                    im2col(xs, &g, &mut col);
                    gemm(MatRef::new(gs, g.cout, p), MatRef::new(&col, k, p).t(), &mut dw, false);
                }
                dw
            })
            .collect();
        let mut dw = vec![T::zero(); g.cout * k];
        for part in &partials {
            dw.iter_mut().zip(part).for_each(|(a, &b)| *a = *a + b);
        }
        Tensor::new(weight.shape(), dw).expect("weight shape")
    });

    let bias = need_b.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for n in 0..g.batch {
            for (co, acc) in db.iter_mut().enumerate() {
                let s = (n * g.cout + co) * p;
                *acc = *acc + grad.data()[s..s + p].iter().copied().sum::<T>();
            }
        }
        Tensor::new(&[g.cout], db).expect("bias shape")
    });

    Ok(ConvGrads { input, weight: weight_grad, bias })
}

/// Rows of the flattened `[..., Din]` input.
pub fn linear_rows(input: &[usize], din: usize) -> Result<usize> {
    match input.last() {
        Some(&d) if d == din => Ok(input.iter().product::<usize>() / din.max(1)),
        _ => Err(shape_err!("linear expects last extent {din}, got {:?}", input)),
    }
}

pub fn linear_forward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let [din, dout]: [usize; 2] = weight
        .shape()
        .try_into()
        .map_err(|_| shape_err!("linear weight must be [Din, Dout], got {:?}", weight.shape()))?;
    let rows = linear_rows(x.shape(), din)?;
    if let Some(b) = bias {
        if b.shape() != [dout] {
            return Err(shape_err!("linear bias {:?} for Dout {dout}", b.shape()));
        }
    }
    let mut out = vec![T::zero(); rows * dout];
    gemm(MatRef::new(x.data(), rows, din), MatRef::new(weight.data(), din, dout), &mut out, false);
    if let Some(b) = bias {
        for row in out.chunks_mut(dout) {
            row.iter_mut().zip(b.data()).for_each(|(v, &bv)| *v = *v + bv);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = dout;
    Tensor::new(&shape, out)
}

/// Batched matmul: `a [B,M,K] · b [B,K,N]`, or `a · bᵀ` with `b [B,N,K]` when `trans_b`.
pub fn bmm_forward<T: Float>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let (batch, m, k, n) = bmm_dims(a.shape(), b.shape(), trans_b)?;
    let mut out = vec![T::zero(); batch * m * n];
    for i in 0..batch {
        let am = MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k);
        let bm = if trans_b {
            MatRef::new(&b.data()[i * n * k..(i + 1) * n * k], n, k).t()
        } else {
            MatRef::new(&b.data()[i * k * n..(i + 1) * k * n], k, n)
        };
        gemm(am, bm, &mut out[i * m * n..(i + 1) * m * n], false);
    }
    Tensor::new(&[batch, m, n], out)
}

pub fn bmm_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<(usize, usize, usize, usize)> {
    let ([ba, m, k], [bb, b1, b2]): ([usize; 3], [usize; 3]) = (
        a.try_into().map_err(|_| shape_err!("bmm lhs must be rank 3, got {:?}", a))?,
        b.try_into().map_err(|_| shape_err!("bmm rhs must be rank 3, got {:?}", b))?,
    );
    let (kb, n) = if trans_b { (b2, b1) } else { (b1, b2) };
    if ba != bb || k != kb {
        return Err(shape_err!("bmm {:?} x {:?} (trans_b={trans_b})", a, b));
    }
    Ok((ba, m, k, n))
}

pub fn bmm_backward<T: Float>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    trans_b: bool,
    grad: &Tensor<T>,
    need: [bool; 2],
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (batch, m, k, n) = bmm_dims(a.shape(), b.shape(), trans_b).expect("validated in forward");
    let da = need[0].then(|| {
        let mut da = vec![T::zero(); batch * m * k];
        for i in 0..batch {
            let gm = MatRef::new(&grad.data()[i * m * n..(i + 1) * m * n], m, n);
            let bm = if trans_b {
                MatRef::new(&b.data()[i * n * k..(i + 1) * n * k], n, k)
            } else {
                MatRef::new(&b.data()[i * k * n..(i + 1) * k * n], k, n).t()
            };
            gemm(gm, bm, &mut da[i * m * k..(i + 1) * m * k], false);
        }
        Tensor::new(a.shape(), da).expect("lhs shape")
    });
    let db = need[1].then(|| {
        let mut db = vec![T::zero(); batch * k * n];
        for i in 0..batch {
            let am = MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k);
            let gm = MatRef::new(&grad.data()[i * m * n..(i + 1) * m * n], m, n);
            let dst = &mut db[i * k * n..(i + 1) * k * n];
            if trans_b {
                gemm(gm.t(), am, dst, false);
            } else {
                gemm(am.t(), gm, dst, false);
            }
        }
        Tensor::new(b.shape(), db).expect("rhs shape")
    });
    (da, db)
}

/// Returns `(output, xhat, rstd)`; `xhat` and `rstd` feed the backward pass.
pub fn layer_norm_forward<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let d = *x.shape().last().ok_or_else(|| shape_err!("layer_norm on a scalar"))?;
    if d == 0 || gamma.shape() != [d] || beta.shape() != [d] {
        return Err(shape_err!(
            "layer_norm over {d} features with gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        ));
    }
    let dn = T::lit(d as f64);
    let mut out = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let mut rstds = Vec::with_capacity(x.numel() / d);
    for (r, row) in x.data().chunks(d).enumerate() {
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rstd = T::one() / (var + eps).sqrt();
        rstds.push(rstd);
        for j in 0..d {
            let xh = (row[j] - mean) * rstd;
            xhat[r * d + j] = xh;
            out[r * d + j] = xh * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((Tensor::new(x.shape(), out)?, xhat, rstds))
}

pub fn layer_norm_backward<T: Float>(
    xhat: &[T],
    rstd: &[T],
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = gamma.numel();
    let dn = T::lit(d as f64);
    let mut dx = vec![T::zero(); grad.numel()];
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    for (r, g) in grad.data().chunks(d).enumerate() {
        let xh = &xhat[r * d..(r + 1) * d];
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for j in 0..d {
            let dxh = g[j] * gamma.data()[j];
            mean_dxh = mean_dxh + dxh;
            mean_dxh_xh = mean_dxh_xh + dxh * xh[j];
            dgamma[j] = dgamma[j] + g[j] * xh[j];
            dbeta[j] = dbeta[j] + g[j];
        }
        mean_dxh = mean_dxh / dn;
        mean_dxh_xh = mean_dxh_xh / dn;
        for j in 0..d {
            let dxh = g[j] * gamma.data()[j];
            dx[r * d + j] = rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    (
        Tensor::new(grad.shape(), dx).expect("shape"),
        Tensor::new(&[d], dgamma).expect("shape"),
        Tensor::new(&[d], dbeta).expect("shape"),
    )
}

/// Softmax over the last axis.
pub fn softmax_forward<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d = *x.shape().last().ok_or_else(|| shape_err!("softmax on a scalar"))?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d.max(1)) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    Tensor::new(x.shape(), out)
}

pub fn softmax_backward<T: Float>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let d = *y.shape().last().expect("validated");
    let mut dx = vec![T::zero(); y.numel()];
    for ((yr, gr), dr) in y.data().chunks(d).zip(grad.data().chunks(d)).zip(dx.chunks_mut(d)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for j in 0..d {
            dr[j] = yr[j] * (gr[j] - dot);
        }
    }
    Tensor::new(y.shape(), dx).expect("shape")
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// tanh-approximated GeLU.
pub fn gelu<T: Float>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Float>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    let t = (c * (x + a * x * x * x)).tanh();
    let three = T::lit(3.0);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}
