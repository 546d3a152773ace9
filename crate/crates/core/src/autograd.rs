//! Tape-based reverse-mode differentiation over a fixed op set.
//!
//! A [`Graph`] records every op as it runs. `backward` walks the tape once in
//! reverse and returns first-order gradients for every node that requires one.
//! Nodes are appended in evaluation order, so reverse index order is a valid
//! topological order.

use crate::error::{shape_err, Error, Result};
use crate::kernels;
use crate::reindex::IndexMap;
use crate::spectral::{self, ComplexSpectrum};
use crate::tensor::{gemm, Float, MatRef, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv2d { x: usize, w: usize, b: Option<usize>, pad: usize },
    Linear { x: usize, w: usize, b: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, T),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, rstd: Vec<T> },
    Softmax(usize),
    Gelu(usize),
    Bmm { a: usize, b: usize, trans_b: bool },
    Gather { x: usize, map: IndexMap },
    ConcatChannels(Vec<usize>),
    Fft2(usize),
    Ifft2Real { x: usize, residue: T },
    MeanAbs(usize),
    WeightedSum { x: usize, weights: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Float = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by [`Var`]; `None` for nodes that did not need one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate<T: Float>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b),
        None => *slot = Some(g),
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient (data, targets, frozen weights).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), pad)?;
        let mut deps = vec![x.0, w.0];
        deps.extend(b.map(|b| b.0));
        let rg = self.any_grad(&deps);
        Ok(self.push(out, Op::Conv2d { x: x.0, w: w.0, b: b.map(|b| b.0), pad }, rg))
    }

    /// Convolution with size-preserving padding; the kernel must be odd.
    pub fn conv2d_same(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let k = self.value(w).shape().get(2).copied().ok_or_else(|| shape_err!("conv weight rank"))?;
        let kw = self.value(w).shape().get(3).copied().unwrap_or(k);
        let pad = kernels::same_padding(k)?;
        if kernels::same_padding(kw)? != pad {
            return Err(shape_err!("same padding needs a square kernel, got {k}x{kw}"));
        }
        self.conv2d(x, w, b, pad)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = kernels::linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut deps = vec![x.0, w.0];
        deps.extend(b.map(|b| b.0));
        let rg = self.any_grad(&deps);
        Ok(self.push(out, Op::Linear { x: x.0, w: w.0, b: b.map(|b| b.0) }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(out, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(out, Op::Sub(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.any_grad(&[a.0]);
        self.push(out, Op::Scale(a.0, s), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, xhat, rstd) =
            kernels::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.any_grad(&[x.0, gamma.0, beta.0]);
        Ok(self.push(out, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, rstd }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_forward(self.value(x))?;
        let rg = self.any_grad(&[x.0]);
        Ok(self.push(out, Op::Softmax(x.0), rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::gelu);
        let rg = self.any_grad(&[x.0]);
        self.push(out, Op::Gelu(x.0), rg)
    }

    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let out = kernels::bmm_forward(self.value(a), self.value(b), trans_b)?;
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(out, Op::Bmm { a: a.0, b: b.0, trans_b }, rg))
    }

    /// `out[i] = x[map.src[i]]`, reshaped to `map.shape`.
    pub fn gather(&mut self, x: Var, map: IndexMap) -> Result<Var> {
        let n = self.value(x).numel();
        if map.src.iter().any(|&i| i >= n) {
            return Err(shape_err!("gather index out of range for {} elements", n));
        }
        let out = map.apply(self.value(x));
        let rg = self.any_grad(&[x.0]);
        Ok(self.push(out, Op::Gather { x: x.0, map }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).numel();
        if shape.iter().product::<usize>() != n {
            return Err(shape_err!("cannot reshape {:?} into {:?}", self.value(x).shape(), shape));
        }
        self.gather(x, IndexMap { shape: shape.to_vec(), src: (0..n).collect() })
    }

    /// Concatenates along axis 1; all other extents must agree.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| shape_err!("concat of nothing"))?).shape();
        if first.len() < 2 {
            return Err(shape_err!("concat needs rank >= 2, got {:?}", first));
        }
        let (outer, inner) = (first[0], first[2..].iter().product::<usize>());
        let mut channels = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(shape_err!("concat {:?} with {:?}", s, first));
            }
            channels += s[1];
        }
        let mut shape = first.to_vec();
        shape[1] = channels;
        let mut data = Vec::with_capacity(outer * channels * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let block = t.shape()[1] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.any_grad(&ids);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::ConcatChannels(ids), rg))
    }

    /// Orthonormal forward FFT of a real `[N,C,H,W]` map into a packed `[N,2C,H,W]` spectrum.
    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        let out = spectral::fft2(self.value(x))?.to_packed();
        let rg = self.any_grad(&[x.0]);
        Ok(self.push(out, Op::Fft2(x.0), rg))
    }

    /// Real part of the orthonormal inverse FFT of a packed spectrum.
    pub fn ifft2_real(&mut self, spec: Var) -> Result<Var> {
        let (out, residue) = spectral::ifft2(&ComplexSpectrum::from_packed(self.value(spec))?);
        let rg = self.any_grad(&[spec.0]);
        Ok(self.push(out, Op::Ifft2Real { x: spec.0, residue }, rg))
    }

    /// Largest discarded imaginary magnitude of an [`Graph::ifft2_real`] node.
    pub fn imag_residue(&self, v: Var) -> Option<T> {
        match self.nodes[v.0].op {
            Op::Ifft2Real { residue, .. } => Some(residue),
            _ => None,
        }
    }

    /// Scalar mean of `|x|`.
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = T::lit(t.numel().max(1) as f64);
        let out = Tensor::scalar(t.data().iter().map(|v| v.abs()).sum::<T>() / n);
        let rg = self.any_grad(&[x.0]);
        self.push(out, Op::MeanAbs(x.0), rg)
    }

    /// Scalar `Σ x ⊙ weights` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != weights.shape() {
            return Err(shape_err!("weighted_sum {:?} vs {:?}", t.shape(), weights.shape()));
        }
        let out = Tensor::scalar(t.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum());
        let rg = self.any_grad(&[x.0]);
        Ok(self.push(out, Op::WeightedSum { x: x.0, weights }, rg))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got {:?}", lv.shape()));
        }
        if !lv.all_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let needs = |i: usize| self.nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d { x, w, b, pad } => {
                    let need = [needs(*x), needs(*w), b.is_some_and(needs)];
                    let cg = kernels::conv2d_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        *pad,
                        &g,
                        need,
                    )?;
                    if let Some(t) = cg.input {
                        accumulate(&mut grads[*x], t);
                    }
                    if let Some(t) = cg.weight {
                        accumulate(&mut grads[*w], t);
                    }
                    if let (Some(b), Some(t)) = (b, cg.bias) {
                        accumulate(&mut grads[*b], t);
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                    let rows = xv.numel() / din.max(1);
                    if needs(*x) {
                        let mut dx = vec![T::zero(); rows * din];
                        gemm(MatRef::new(g.data(), rows, dout), MatRef::new(wv.data(), din, dout).t(), &mut dx, false);
                        accumulate(&mut grads[*x], Tensor::new(xv.shape(), dx)?);
                    }
                    if needs(*w) {
                        let mut dw = vec![T::zero(); din * dout];
                        gemm(MatRef::new(xv.data(), rows, din).t(), MatRef::new(g.data(), rows, dout), &mut dw, false);
                        accumulate(&mut grads[*w], Tensor::new(wv.shape(), dw)?);
                    }
                    if let Some(b) = b.filter(|&b| needs(b)) {
                        let mut db = vec![T::zero(); dout];
                        for row in g.data().chunks(dout) {
                            db.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                        }
                        accumulate(&mut grads[b], Tensor::new(&[dout], db)?);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*b) {
                        accumulate(&mut grads[*b], g.clone());
                    }
                    if needs(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        accumulate(&mut grads[*b], g.map(|v| -v));
                    }
                    if needs(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads[*a], g.map(|v| v * s));
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let (dx, dg, db) =
                        kernels::layer_norm_backward(xhat, rstd, &self.nodes[*gamma].value, &g);
                    if needs(*x) {
                        accumulate(&mut grads[*x], dx);
                    }
                    if needs(*gamma) {
                        accumulate(&mut grads[*gamma], dg);
                    }
                    if needs(*beta) {
                        accumulate(&mut grads[*beta], db);
                    }
                }
                Op::Softmax(x) => {
                    accumulate(&mut grads[*x], kernels::softmax_backward(&node.value, &g));
                }
                Op::Gelu(x) => {
                    let xv = &self.nodes[*x].value;
                    accumulate(&mut grads[*x], xv.zip_map(&g, |v, gv| gv * kernels::gelu_grad(v))?);
                }
                Op::Bmm { a, b, trans_b } => {
                    let (da, db) = kernels::bmm_backward(
                        &self.nodes[*a].value,
                        &self.nodes[*b].value,
                        *trans_b,
                        &g,
                        [needs(*a), needs(*b)],
                    );
                    if let Some(t) = da {
                        accumulate(&mut grads[*a], t);
                    }
                    if let Some(t) = db {
                        accumulate(&mut grads[*b], t);
                    }
                }
                Op::Gather { x, map } => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = vec![T::zero(); xv.numel()];
                    for (&src, &gv) in map.src.iter().zip(g.data()) {
                        dx[src] = dx[src] + gv;
                    }
                    accumulate(&mut grads[*x], Tensor::new(xv.shape(), dx)?);
                }
                Op::ConcatChannels(parts) => {
                    let shape = node.value.shape();
                    let (outer, inner) = (shape[0], shape[2..].iter().product::<usize>());
                    let mut offset = 0;
                    let total = shape[1] * inner;
                    for &p in parts {
                        let ps = self.nodes[p].value.shape();
                        let block = ps[1] * inner;
                        if needs(p) {
                            let mut d = Vec::with_capacity(outer * block);
                            for o in 0..outer {
                                d.extend_from_slice(&g.data()[o * total + offset..o * total + offset + block]);
                            }
                            accumulate(&mut grads[p], Tensor::new(ps, d)?);
                        }
                        offset += block;
                    }
                }
                Op::Fft2(x) => {
                    // adjoint of a unitary map is its inverse
                    let spec = ComplexSpectrum::from_packed(&g)?;
                    accumulate(&mut grads[*x], spectral::ifft2_complex(&spec).real);
                }
                Op::Ifft2Real { x, .. } => {
                    let zero = Tensor::zeros(g.shape());
                    let spec = ComplexSpectrum::new(g, zero)?;
                    accumulate(&mut grads[*x], spectral::fft2_complex(&spec).to_packed());
                }
                Op::MeanAbs(x) => {
                    let xv = &self.nodes[*x].value;
                    let scale = g.item() / T::lit(xv.numel().max(1) as f64);
                    let sub = |v: T| match v.partial_cmp(&T::zero()) {
                        Some(std::cmp::Ordering::Greater) => scale,
                        Some(std::cmp::Ordering::Less) => -scale,
                        _ => T::zero(),
                    };
                    accumulate(&mut grads[*x], xv.map(sub));
                }
                Op::WeightedSum { x, weights } => {
                    let s = g.item();
                    accumulate(&mut grads[*x], weights.map(|w| w * s));
                }
            }
        }
        Ok(Gradients { grads })
    }
}
