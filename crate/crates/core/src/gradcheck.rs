//! Finite-difference verification of reverse-mode gradients (f64 only).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Central-difference gradient check.
///
/// Non-scalar outputs are reduced with a fixed random projection so every output
/// element contributes. The perturbation per element is `step · max(1, |x|)`.
/// The error for one element is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
/// where `floor` is `1e-3` times the largest analytic magnitude over all inputs, which
/// keeps round-off on near-zero entries (or identically-zero gradients, such as a key
/// bias under softmax) from dominating.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Check at most this many (randomly chosen) elements per input.
    pub max_elements: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: 1e-4, max_elements: None, seed: 0 }
    }
}

impl GradCheck {
    pub fn sampled(max_elements: usize) -> Self {
        Self { max_elements: Some(max_elements), ..Self::default() }
    }

    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<f64>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let projection = {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
            let out = f(&mut g, &vars)?;
            let shape = g.value(out).shape().to_vec();
            (g.value(out).numel() > 1).then(|| Tensor::<f64>::uniform(&shape, -1.0, 1.0, &mut rng))
        };
        let scalar_of = |g: &mut Graph<f64>, out: Var| -> Result<Var> {
            match &projection {
                Some(p) => g.weighted_sum(out, p.clone()),
                None => Ok(out),
            }
        };

        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let loss = scalar_of(&mut g, out)?;
        let grads = g.backward(loss)?;

        let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = perturbed.iter().map(|t| g.input(t.clone())).collect();
            let out = f(&mut g, &vars)?;
            let l = scalar_of(&mut g, out)?;
            Ok(g.value(l).item())
        };

        let analytic: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        let floor = 1e-3 * analytic.iter().flat_map(|a| a.data()).fold(0.0f64, |m, a| m.max(a.abs()));

        let mut worst: f64 = 0.0;
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (i, analytic) in analytic.iter().enumerate() {
            let n = inputs[i].numel();
            let elements: Vec<usize> = match self.max_elements {
                Some(k) if k < n => {
                    let mut idx = sample(&mut rng, n, k).into_vec();
                    idx.sort_unstable();
                    idx
                }
                _ => (0..n).collect(),
            };
            for j in elements {
                let x = inputs[i].data()[j];
                let h = self.step * x.abs().max(1.0);
                work[i].data_mut()[j] = x + h;
                let plus = eval(&work)?;
                work[i].data_mut()[j] = x - h;
                let minus = eval(&work)?;
                work[i].data_mut()[j] = x;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic.data()[j];
                let denom = a.abs().max(numeric.abs()).max(floor).max(f64::MIN_POSITIVE);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        Ok(worst)
    }
}

/// [`GradCheck::run`] with default settings.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    GradCheck::default().run(inputs, f)
}
