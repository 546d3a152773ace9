//! Dual-domain adaptation of a windowed-attention super-resolution backbone.
//!
//! The crate bundles a small reverse-mode autograd engine, orthonormal 2D FFTs,
//! the spatial backbone with LoRA/freezing adaptation, the frequency-domain
//! branch, and the training/evaluation pipeline on synthetic degradations.

pub mod adaptation;
pub mod autograd;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod degrade;
pub mod error;
pub mod fda;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod reindex;
pub mod spectral;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use autograd::{Gradients, Graph, Var};
pub use config::ModelConfig;
pub use model::Model;
pub use error::{Error, Result};
pub use spectral::ComplexSpectrum;
pub use tensor::{Float, Tensor};
