//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug)]
pub struct AdamState<T: Float = f32> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Float> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { step: 0, beta1, beta2, eps, lr, moments: BTreeMap::new() }
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }
}

/// One named parameter with its gradient.
pub struct Slot<'a, T> {
    pub name: &'a str,
    pub param: &'a mut Tensor<T>,
    pub grad: &'a Tensor<T>,
}

/// Applies one Adam update to every slot.
///
/// All gradients are validated before anything is written, so a non-finite
/// gradient aborts the step with the offending parameter's name and leaves
/// every parameter and moment untouched.
pub fn adam_step<T: Float>(slots: &mut [Slot<'_, T>], state: &mut AdamState<T>) -> Result<()> {
    if state.lr.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", state.lr)));
    }
    for s in slots.iter() {
        if s.param.shape() != s.grad.shape() {
            return Err(shape_err!("{}: param {:?} vs grad {:?}", s.name, s.param.shape(), s.grad.shape()));
        }
        if !s.grad.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", s.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let (b1t, b2t, eps) = (T::lit(b1), T::lit(b2), T::lit(state.eps));
    let (one_b1, one_b2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
    // bc = 0 only when beta = 1, where the moments never move; skip correction then.
    let step_size = T::lit(state.lr / if bc1 > 0.0 { bc1 } else { 1.0 });
    let inv_sqrt_bc2 = T::lit(if bc2 > 0.0 { 1.0 / bc2.sqrt() } else { 1.0 });
    for s in slots.iter_mut() {
        let (m, v) = state
            .moments
            .entry(s.name.to_string())
            .or_insert_with(|| (Tensor::zeros(s.param.shape()), Tensor::zeros(s.param.shape())));
        let p = s.param.data_mut();
        for (((pi, &g), mi), vi) in p.iter_mut().zip(s.grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1t * *mi + one_b1 * g;
            *vi = b2t * *vi + one_b2 * g * g;
            *pi = *pi - step_size * *mi / ((*vi).sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}
