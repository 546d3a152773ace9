use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Architecture hyper-parameters shared by the backbone, adapters and frequency branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature-enhancement groups (N).
    pub groups: usize,
    /// Transformer units per group (M).
    pub units: usize,
    /// Backbone feature channels (d).
    pub dim: usize,
    /// Attention window side.
    pub window: usize,
    /// Upsampling ratio ρ.
    pub scale: usize,
    /// Image channels.
    pub channels: usize,
    /// Frozen leading units per group (M^sta).
    pub frozen_units: usize,
    /// LoRA rank; 0 disables adapters.
    pub rank: usize,
    /// LoRA scale numerator; the adapter scale is `alpha / rank`.
    pub alpha: usize,
    /// Frequency-branch channels (d^f).
    pub freq_dim: usize,
    /// Fusion stages in the frequency branch (n^f ≤ N).
    pub freq_stages: usize,
    /// Channel width inside the spatial upsampler.
    pub up_dim: usize,
}

impl ModelConfig {
    /// Dimensions reported for the full-size SwinIR-based model.
    pub fn paper() -> Self {
        Self {
            groups: 6,
            units: 6,
            dim: 180,
            window: 8,
            scale: 4,
            channels: 3,
            frozen_units: 5,
            rank: 4,
            alpha: 4,
            freq_dim: 64,
            freq_stages: 6,
            up_dim: 64,
        }
    }

    /// Small model that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            groups: 2,
            units: 6,
            dim: 32,
            window: 4,
            scale: 2,
            channels: 3,
            frozen_units: 5,
            rank: 4,
            alpha: 4,
            freq_dim: 8,
            freq_stages: 2,
            up_dim: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("groups", self.groups),
            ("units", self.units),
            ("dim", self.dim),
            ("window", self.window),
            ("channels", self.channels),
            ("freq_dim", self.freq_dim),
            ("up_dim", self.up_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(arg_err!("{name} must be positive"));
            }
        }
        upsample_factors(self.scale)?;
        if self.frozen_units > self.units {
            return Err(arg_err!("frozen units {} exceed units per group {}", self.frozen_units, self.units));
        }
        if self.rank > 0 && self.rank >= self.dim {
            return Err(arg_err!("LoRA rank {} must be below the feature width {}", self.rank, self.dim));
        }
        if self.freq_stages > self.groups {
            return Err(arg_err!("{} fusion stages but only {} groups", self.freq_stages, self.groups));
        }
        Ok(())
    }

    pub fn mlp_hidden(&self) -> usize {
        2 * self.dim
    }

    pub fn lora_scale(&self) -> f64 {
        if self.rank == 0 {
            0.0
        } else {
            self.alpha as f64 / self.rank as f64
        }
    }
}

/// Pixel-shuffle factors realising `scale`: ×2, ×3, ×2·×2 or ×2·×2·×2.
pub fn upsample_factors(scale: usize) -> Result<Vec<usize>> {
    match scale {
        2 => Ok(vec![2]),
        3 => Ok(vec![3]),
        4 => Ok(vec![2, 2]),
        8 => Ok(vec![2, 2, 2]),
        _ => Err(arg_err!("unsupported upsampling ratio {scale}; expected 2, 3, 4 or 8")),
    }
}
