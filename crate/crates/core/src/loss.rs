//! Dual-domain L1 objective.

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::spectral::fft2;
use crate::tensor::{Float, Tensor};

pub const LAMBDA: f64 = 10.0;

#[derive(Clone, Copy, Debug)]
pub struct DualLoss {
    pub total: Var,
    pub spatial: Var,
    pub frequency: Option<Var>,
}

/// `mean|O^s − Y| + λ·mean|O^f − FFT(Y)|`, the second term over real and
/// imaginary planes jointly and only when a spectrum is given.
pub fn dual_loss<T: Float>(
    g: &mut Graph<T>,
    spatial: Var,
    spectrum: Option<Var>,
    target: &Tensor<T>,
    lambda: T,
) -> Result<DualLoss> {
    if g.value(spatial).shape() != target.shape() {
        return Err(shape_err!("prediction {:?} vs target {:?}", g.value(spatial).shape(), target.shape()));
    }
    let y = g.input(target.clone());
    let d = g.sub(spatial, y)?;
    let l_s = g.mean_abs(d);
    let Some(spec) = spectrum else {
        return Ok(DualLoss { total: l_s, spatial: l_s, frequency: None });
    };
    let fy = g.input(fft2(target)?.to_packed());
    if g.value(spec).shape() != g.value(fy).shape() {
        return Err(shape_err!("spectrum {:?} vs target spectrum {:?}", g.value(spec).shape(), g.value(fy).shape()));
    }
    let d = g.sub(spec, fy)?;
    let l_f = g.mean_abs(d);
    let weighted = g.scale(l_f, lambda);
    let total = g.add(l_s, weighted)?;
    Ok(DualLoss { total, spatial: l_s, frequency: Some(l_f) })
}
