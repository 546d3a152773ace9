//! Paired LR/HR image sets and random patch batches.

use rand::Rng;

use crate::degrade::DegradationSpec;
use crate::error::{arg_err, Error, Result};
use crate::synth::synth_image;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    /// `[C, ρh, ρw]`.
    pub hr: Tensor<f64>,
    /// `[C, h, w]`.
    pub lr: Tensor<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<Pair>,
    pub scale: usize,
}

impl Dataset {
    /// Degrades every HR image with `spec`; image `i` uses degradation index `i`.
    pub fn from_hr(images: Vec<Tensor<f64>>, spec: &DegradationSpec) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Data("no images".into()));
        }
        let pairs = images
            .into_iter()
            .enumerate()
            .map(|(i, hr)| Ok(Pair { lr: spec.apply(&hr, i as u64)?, hr }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs, scale: spec.scale })
    }

    /// `count` procedural images of side `hr_size` from corpus `corpus_seed`, starting at `first`.
    pub fn synthetic(corpus_seed: u64, first: u64, count: usize, hr_size: usize, spec: &DegradationSpec) -> Result<Self> {
        let images = (0..count as u64).map(|i| synth_image(corpus_seed, first + i, hr_size)).collect();
        Self::from_hr(images, spec)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subset(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Data(format!("subset of {n} from {} images", self.len())));
        }
        Ok(Self { pairs: self.pairs[..n].to_vec(), scale: self.scale })
    }

    /// Random aligned crops: LR `[B, C, p, p]` and HR `[B, C, ρp, ρp]`.
    pub fn sample_batch<T: Float, R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        batch: usize,
        patch: usize,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if self.is_empty() || batch == 0 || patch == 0 {
            return Err(arg_err!("empty batch request"));
        }
        let s = self.scale;
        let mut lrs = Vec::with_capacity(batch);
        let mut hrs = Vec::with_capacity(batch);
        for _ in 0..batch {
            let pair = &self.pairs[rng.random_range(0..self.len())];
            let [c, h, w] = pair.lr.shape() else {
                return Err(Error::Data(format!("LR image of shape {:?}", pair.lr.shape())));
            };
            let (c, h, w) = (*c, *h, *w);
            if h < patch || w < patch {
                return Err(Error::Data(format!("{h}x{w} image is smaller than patch {patch}")));
            }
            let (y0, x0) = (rng.random_range(0..=h - patch), rng.random_range(0..=w - patch));
            lrs.push(crop(&pair.lr, c, w, y0, x0, patch, patch));
            hrs.push(crop(&pair.hr, c, w * s, y0 * s, x0 * s, patch * s, patch * s));
        }
        Ok((Tensor::stack0(&lrs)?, Tensor::stack0(&hrs)?))
    }
}

fn crop<T: Float>(img: &Tensor<f64>, c: usize, w: usize, y0: usize, x0: usize, ph: usize, pw: usize) -> Tensor<T> {
    let h = img.numel() / (c * w);
    Tensor::from_fn(&[1, c, ph, pw], |i| {
        let (k, y, x) = (i / (ph * pw), i / pw % ph, i % pw);
        T::lit(img.data()[(k * h + y0 + y) * w + x0 + x])
    })
}
