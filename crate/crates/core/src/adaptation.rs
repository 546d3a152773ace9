//! Spatial-domain adaptation: freezing policies, LoRA adapters on the query and
//! value projections of frozen units, trainable-parameter ledgers and merging.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::backbone::{group_conv_prefix, unit_prefix};
use crate::config::ModelConfig;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::kernels::linear_forward;
use crate::params::{Bound, Init, ParamSpec, ParamStore};
use crate::tensor::{gemm, Float, MatRef, Tensor};

pub const LORA_DOWN: &str = "lora.down";
pub const LORA_UP: &str = "lora.up";
pub const FDA_PREFIX: &str = "fda.";

pub fn is_lora_name(name: &str) -> bool {
    name.ends_with(LORA_DOWN) || name.ends_with(LORA_UP)
}

pub fn is_fda_name(name: &str) -> bool {
    name.starts_with(FDA_PREFIX)
}

/// `x·W + b`, plus `scale · (x·down)·up` when an adapter for `target` is bound.
pub fn adapted_linear<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    target: &str,
    x: Var,
    scale: T,
) -> Result<Var> {
    let (w, b) = p.layer(target)?;
    let base = g.linear(x, w, Some(b))?;
    let down = p.opt(&format!("{target}.{LORA_DOWN}"));
    let up = p.opt(&format!("{target}.{LORA_UP}"));
    match (down, up) {
        (None, None) => Ok(base),
        (Some(down), Some(up)) => {
            let z = g.linear(x, down, None)?;
            let z = g.linear(z, up, None)?;
            let z = g.scale(z, scale);
            g.add(base, z)
        }
        _ => Err(arg_err!("adapter for {target} is missing its down or up projection")),
    }
}

/// Low-rank residual `scale · down · up` on a frozen `[Din, Dout]` linear.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter<T: Float = f32> {
    pub down: Tensor<T>,
    pub up: Tensor<T>,
    pub scale: T,
}

impl<T: Float> LoraAdapter<T> {
    /// `down ~ N(0, 0.02²)`, `up = 0`, `scale = alpha / rank`.
    pub fn new<R: Rng + ?Sized>(din: usize, dout: usize, rank: usize, alpha: f64, rng: &mut R) -> Result<Self> {
        if rank == 0 || rank >= din {
            return Err(arg_err!("LoRA rank {rank} must satisfy 0 < r < {din}"));
        }
        Ok(Self {
            down: ParamSpec::new("down", &[din, rank], Init::Normal).materialize(rng),
            up: Tensor::zeros(&[rank, dout]),
            scale: T::lit(alpha / rank as f64),
        })
    }

    pub fn from_parts(down: Tensor<T>, up: Tensor<T>, scale: T) -> Result<Self> {
        match (down.shape(), up.shape()) {
            ([_, r1], [r2, _]) if r1 == r2 => Ok(Self { down, up, scale }),
            (a, b) => Err(shape_err!("adapter rank mismatch: down {:?}, up {:?}", a, b)),
        }
    }

    pub fn rank(&self) -> usize {
        self.down.shape()[1]
    }

    fn check(&self, weight: &Tensor<T>) -> Result<()> {
        let (din, dout) = (self.down.shape()[0], self.up.shape()[1]);
        if weight.shape() != [din, dout] {
            return Err(shape_err!("adapter {din}x{dout} on weight {:?}", weight.shape()));
        }
        Ok(())
    }

    /// `y = x·W + b + scale · (x·down)·up`.
    pub fn forward(&self, x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.check(weight)?;
        let base = linear_forward(x, weight, bias)?;
        let z = linear_forward(&linear_forward(x, &self.down, None)?, &self.up, None)?;
        let s = self.scale;
        base.zip_map(&z, |a, b| a + s * b)
    }

    /// `W' = W + scale · down · up`.
    pub fn merge(&self, weight: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(weight)?;
        merge_lora(weight, &self.down, &self.up, self.scale)
    }
}

pub fn merge_lora<T: Float>(weight: &Tensor<T>, down: &Tensor<T>, up: &Tensor<T>, scale: T) -> Result<Tensor<T>> {
    let (din, r, dout) = match (weight.shape(), down.shape(), up.shape()) {
        ([wi, wo], [di, r1], [r2, uo]) if wi == di && wo == uo && r1 == r2 => (*wi, *r1, *wo),
        (w, d, u) => return Err(shape_err!("merge weight {:?} with down {:?}, up {:?}", w, d, u)),
    };
    let mut delta = vec![T::zero(); din * dout];
    gemm(MatRef::new(down.data(), din, r), MatRef::new(up.data(), r, dout), &mut delta, false);
    let data = weight.data().iter().zip(&delta).map(|(&w, &d)| w + scale * d).collect();
    Tensor::new(weight.shape(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreezePolicy {
    /// Nothing frozen (full fine-tuning).
    None,
    /// Head plus the first `budget` groups entirely.
    ShallowGroups,
    /// Head plus the last `budget` units of every group.
    DeepUnitsPerGroup,
    /// Head plus the first `budget` units of every group.
    ShallowUnitsPerGroup,
}

impl FreezePolicy {
    pub const COMPARED: [FreezePolicy; 3] =
        [FreezePolicy::ShallowGroups, FreezePolicy::DeepUnitsPerGroup, FreezePolicy::ShallowUnitsPerGroup];

    pub fn as_str(&self) -> &'static str {
        match self {
            FreezePolicy::None => "none",
            FreezePolicy::ShallowGroups => "shallow-groups",
            FreezePolicy::DeepUnitsPerGroup => "deep-units-per-group",
            FreezePolicy::ShallowUnitsPerGroup => "shallow-units-per-group",
        }
    }

    pub fn max_budget(&self, cfg: &ModelConfig) -> usize {
        match self {
            FreezePolicy::None => 0,
            FreezePolicy::ShallowGroups => cfg.groups,
            FreezePolicy::DeepUnitsPerGroup | FreezePolicy::ShallowUnitsPerGroup => cfg.units,
        }
    }

    /// Fraction of Transformer units frozen at `budget`.
    pub fn frozen_unit_fraction(&self, cfg: &ModelConfig, budget: usize) -> f64 {
        match self {
            FreezePolicy::None => 0.0,
            _ => budget as f64 / self.max_budget(cfg) as f64,
        }
    }
}

impl fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FreezePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "ft" => Ok(FreezePolicy::None),
            "shallow-groups" => Ok(FreezePolicy::ShallowGroups),
            "deep-units-per-group" | "deep-units" => Ok(FreezePolicy::DeepUnitsPerGroup),
            "shallow-units-per-group" | "shallow-units" => Ok(FreezePolicy::ShallowUnitsPerGroup),
            _ => Err(arg_err!("unknown freeze policy {s:?}")),
        }
    }
}

/// Structural role of a backbone parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Head,
    Unit { group: usize, unit: usize },
    GroupConv { group: usize },
    Upsampler,
}

pub fn classify(name: &str) -> Option<Role> {
    let mut parts = name.split('.');
    match parts.next()? {
        "head" => Some(Role::Head),
        "upsample" => Some(Role::Upsampler),
        "groups" => {
            let group = parts.next()?.parse().ok()?;
            match parts.next()? {
                "units" => Some(Role::Unit { group, unit: parts.next()?.parse().ok()? }),
                "conv" => Some(Role::GroupConv { group }),
                _ => None,
            }
        }
        _ => None,
    }
}

/// Which backbone parameters stay fixed and which q/v linears get adapters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezePlan {
    pub policy: FreezePolicy,
    pub budget: usize,
    pub frozen: BTreeSet<String>,
    pub trainable: BTreeSet<String>,
    /// Linear prefixes (e.g. `groups.0.units.1.attn.q`) that receive adapters.
    pub lora_targets: BTreeSet<String>,
}

/// Classifies every backbone parameter name under `policy` with `budget`.
///
/// A non-zero budget always freezes the conv head. Group convs are frozen with
/// their group under `shallow-groups`, and in every group under the two per-unit
/// policies. The upsampler always trains.
pub fn apply_freeze_plan<'a>(
    backbone_names: impl IntoIterator<Item = &'a str>,
    cfg: &ModelConfig,
    policy: FreezePolicy,
    budget: usize,
) -> Result<FreezePlan> {
    let max = policy.max_budget(cfg);
    if budget > max {
        return Err(arg_err!("budget {budget} out of range 0..={max} for policy {policy}"));
    }
    let active = budget > 0;
    let unit_frozen = |group: usize, unit: usize| match policy {
        FreezePolicy::None => false,
        FreezePolicy::ShallowGroups => group < budget,
        FreezePolicy::DeepUnitsPerGroup => unit >= cfg.units - budget,
        FreezePolicy::ShallowUnitsPerGroup => unit < budget,
    };
    let group_conv_frozen = |group: usize| match policy {
        FreezePolicy::None => false,
        FreezePolicy::ShallowGroups => group < budget,
        _ => active,
    };

    let mut plan = FreezePlan {
        policy,
        budget,
        frozen: BTreeSet::new(),
        trainable: BTreeSet::new(),
        lora_targets: BTreeSet::new(),
    };
    for name in backbone_names {
        let role = classify(name).ok_or_else(|| arg_err!("unclassified parameter {name}"))?;
        let frozen = match role {
            Role::Head => active,
            Role::Unit { group, unit } => unit_frozen(group, unit),
            Role::GroupConv { group } => group_conv_frozen(group),
            Role::Upsampler => false,
        };
        if frozen {
            plan.frozen.insert(name.to_string());
        } else {
            plan.trainable.insert(name.to_string());
        }
    }
    if cfg.rank > 0 {
        for group in 0..cfg.groups {
            for unit in (0..cfg.units).filter(|&u| unit_frozen(group, u)) {
                for proj in ["q", "v"] {
                    let target = format!("{}.attn.{proj}", unit_prefix(group, unit));
                    if plan.frozen.contains(&format!("{target}.weight")) {
                        plan.lora_targets.insert(target);
                    }
                }
            }
        }
    }
    Ok(plan)
}

impl FreezePlan {
    /// Adapter parameters for every target: `down [d, r]` normal, `up [r, d]` zero.
    pub fn lora_specs(&self, cfg: &ModelConfig) -> Vec<ParamSpec> {
        let (d, r) = (cfg.dim, cfg.rank);
        let mut specs = Vec::new();
        for t in &self.lora_targets {
            specs.push(ParamSpec::new(format!("{t}.{LORA_DOWN}"), &[d, r], Init::Normal));
            specs.push(ParamSpec::new(format!("{t}.{LORA_UP}"), &[r, d], Init::Zeros));
        }
        specs
    }

    /// Sets trainable flags: frozen backbone entries off, everything else on.
    pub fn apply<T: Float>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in names {
            let trainable = if is_lora_name(&name) || is_fda_name(&name) {
                true
            } else if self.frozen.contains(&name) {
                false
            } else if self.trainable.contains(&name) {
                true
            } else {
                return Err(arg_err!("parameter {name} is not classified by the plan"));
            };
            store.set_trainable(&name, trainable)?;
        }
        Ok(())
    }
}

/// Parameter counts under a plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub total: usize,
    pub trainable: usize,
    pub frozen: usize,
    pub lora: usize,
    pub fda: usize,
    /// Backbone parameters, i.e. the trainable count of full fine-tuning.
    pub backbone: usize,
    pub fraction_vs_ft: f64,
}

/// Counts `(name, numel)` entries: adapters and frequency-branch parameters
/// are trainable, backbone parameters follow the plan. Unclassified names are errors.
pub fn count_trainable<'a>(
    plan: &FreezePlan,
    entries: impl IntoIterator<Item = (&'a str, usize)>,
) -> Result<Ledger> {
    let mut l = Ledger { total: 0, trainable: 0, frozen: 0, lora: 0, fda: 0, backbone: 0, fraction_vs_ft: 0.0 };
    for (name, n) in entries {
        l.total += n;
        if is_lora_name(name) {
            l.lora += n;
            l.trainable += n;
        } else if is_fda_name(name) {
            l.fda += n;
            l.trainable += n;
        } else {
            l.backbone += n;
            if plan.frozen.contains(name) {
                l.frozen += n;
            } else if plan.trainable.contains(name) {
                l.trainable += n;
            } else {
                return Err(arg_err!("parameter {name} is not classified by the plan"));
            }
        }
    }
    l.fraction_vs_ft = if l.backbone == 0 { 0.0 } else { l.trainable as f64 / l.backbone as f64 };
    Ok(l)
}

pub fn ledger_of_store<T: Float>(plan: &FreezePlan, store: &ParamStore<T>) -> Result<Ledger> {
    count_trainable(plan, store.iter().map(|(n, p)| (n, p.value.numel())))
}

/// Folds every adapter into its base weight and drops the adapter entries.
pub fn merge_adapters<T: Float>(store: &ParamStore<T>, cfg: &ModelConfig) -> Result<ParamStore<T>> {
    let scale = T::lit(cfg.lora_scale());
    let mut merged = store.clone();
    let targets: Vec<String> = store
        .names()
        .filter_map(|n| n.strip_suffix(&format!(".{LORA_DOWN}")).map(str::to_string))
        .collect();
    for t in targets {
        let down = merged.remove(&format!("{t}.{LORA_DOWN}")).expect("listed above").value;
        let up = merged
            .remove(&format!("{t}.{LORA_UP}"))
            .ok_or_else(|| arg_err!("adapter {t} has no up projection"))?
            .value;
        let w = merged.get_mut(&format!("{t}.weight"))?;
        *w = merge_lora(w, &down, &up, scale)?;
    }
    if let Some(stray) = merged.names().find(|n| is_lora_name(n)) {
        return Err(arg_err!("adapter entry {stray} has no matching down projection"));
    }
    Ok(merged)
}

/// Group conv names of a config; used by sweeps that report per-role counts.
pub fn group_conv_names(cfg: &ModelConfig) -> Vec<String> {
    (0..cfg.groups)
        .flat_map(|g| {
            let p = group_conv_prefix(g);
            [format!("{p}.weight"), format!("{p}.bias")]
        })
        .collect()
}
