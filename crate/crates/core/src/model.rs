//! The assembled network: backbone, optional adapters and optional frequency branch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptation::{is_fda_name, FreezePlan};
use crate::autograd::{Graph, Var};
use crate::backbone::{backbone_forward, backbone_specs, BackboneActivations};
use crate::config::ModelConfig;
use crate::error::{arg_err, Result};
use crate::fda::{fda_forward, fda_specs, warm_start, FdaState};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Float, Tensor};

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Outputs {
    pub backbone: BackboneActivations,
    pub fda: Option<FdaState>,
}

impl Outputs {
    /// O^s.
    pub fn spatial(&self) -> Var {
        self.backbone.output
    }

    /// O when the frequency branch is present, O^s otherwise.
    pub fn scored(&self) -> Var {
        self.fda.as_ref().map_or(self.backbone.output, |f| f.output)
    }
}

/// Forward pass on bound parameters; runs the branch when its parameters are bound.
pub fn forward<T: Float>(g: &mut Graph<T>, p: &Bound, cfg: &ModelConfig, x: Var) -> Result<Outputs> {
    let backbone = backbone_forward(g, p, cfg, x)?;
    let fda = if p.opt("fda.init.weight").is_some() {
        Some(fda_forward(g, p, cfg, x, &backbone)?)
    } else {
        None
    };
    Ok(Outputs { backbone, fda })
}

/// Constant-graph inference result.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T: Float> {
    pub spatial: Tensor<T>,
    /// O for models with the branch, otherwise a copy of O^s.
    pub output: Tensor<T>,
    pub spectrum: Option<Tensor<T>>,
    pub imag_residue: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Float = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Float> Model<T> {
    /// Fresh backbone from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamStore::from_specs(&backbone_specs(&config)?, &mut rng);
        Ok(Self { config, params })
    }

    pub fn has_fda(&self) -> bool {
        self.params.contains("fda.init.weight")
    }

    pub fn has_adapters(&self) -> bool {
        self.params.names().any(crate::adaptation::is_lora_name)
    }

    /// Adds the frequency branch with weights drawn from `seed`, warm-started
    /// from the spatial head when the branch is wide enough.
    pub fn attach_fda(&mut self, seed: u64) -> Result<()> {
        if self.has_fda() {
            return Err(arg_err!("frequency branch already attached"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in fda_specs(&self.config)? {
            self.params.insert(&s.name, s.materialize(&mut rng));
        }
        if self.config.freq_dim >= 2 * self.config.channels {
            warm_start(&mut self.params, &self.config)?;
        }
        Ok(())
    }

    /// Adds adapters for every target of `plan` and applies its trainable flags.
    pub fn attach_plan(&mut self, plan: &FreezePlan, seed: u64) -> Result<()> {
        if self.has_adapters() {
            return Err(arg_err!("adapters already attached"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in plan.lora_specs(&self.config) {
            self.params.insert(&s.name, s.materialize(&mut rng));
        }
        plan.apply(&mut self.params)
    }

    pub fn backbone_names(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| !is_fda_name(n) && !crate::adaptation::is_lora_name(n))
            .map(str::to_string)
            .collect()
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let p = self.params.bind_constant(&mut g);
        let xv = g.input(x.clone());
        let out = forward(&mut g, &p, &self.config, xv)?;
        let spatial = g.value(out.spatial()).clone();
        let (output, spectrum, imag_residue) = match &out.fda {
            Some(f) => (
                g.value(f.output).clone(),
                Some(g.value(f.spectrum).clone()),
                g.imag_residue(f.output).map_or(0.0, |r| r.as_f64()),
            ),
            None => (spatial.clone(), None, 0.0),
        };
        Ok(Prediction { spatial, output, spectrum, imag_residue })
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model { config: self.config, params: self.params.cast() }
    }
}
