use std::collections::BTreeSet;

use ddsr::adaptation::{
    apply_freeze_plan, count_trainable, ledger_of_store, merge_adapters, LoraAdapter, FreezePlan, FreezePolicy,
};
use ddsr::backbone::backbone_specs;
use ddsr::fda::fda_specs;
use ddsr::kernels::linear_forward;
use ddsr::{Model, ModelConfig, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn names(cfg: &ModelConfig) -> Vec<String> {
    backbone_specs(cfg).unwrap().into_iter().map(|s| s.name).collect()
}

fn plan(cfg: &ModelConfig, policy: FreezePolicy, budget: usize) -> FreezePlan {
    apply_freeze_plan(names(cfg).iter().map(String::as_str), cfg, policy, budget).unwrap()
}

/// Independent count: every spec is enumerated, adapters sized from the plan.
fn brute_force(cfg: &ModelConfig, plan: &FreezePlan, with_fda: bool) -> (usize, usize) {
    let mut trainable = 0;
    let mut total = 0;
    for s in backbone_specs(cfg).unwrap() {
        let n: usize = s.shape.iter().product();
        total += n;
        if !plan.frozen.contains(&s.name) {
            trainable += n;
        }
    }
    let lora = plan.lora_targets.len() * cfg.rank * 2 * cfg.dim;
    let fda: usize = if with_fda { fda_specs(cfg).unwrap().iter().map(|s| s.shape.iter().product::<usize>()).sum() } else { 0 };
    (total + lora + fda, trainable + lora + fda)
}

fn dan_p_ledger(cfg: &ModelConfig) -> ddsr::adaptation::Ledger {
    let p = plan(cfg, FreezePolicy::ShallowUnitsPerGroup, cfg.frozen_units);
    let mut entries: Vec<(String, usize)> =
        backbone_specs(cfg).unwrap().into_iter().map(|s| (s.name.clone(), s.numel())).collect();
    entries.extend(p.lora_specs(cfg).into_iter().map(|s| (s.name.clone(), s.numel())));
    entries.extend(fda_specs(cfg).unwrap().into_iter().map(|s| (s.name.clone(), s.numel())));
    count_trainable(&p, entries.iter().map(|(n, k)| (n.as_str(), *k))).unwrap()
}

#[test]
fn paper_dims_fraction() {
    let cfg = ModelConfig::paper();
    let l = dan_p_ledger(&cfg);
    assert!((0.25..=0.35).contains(&l.fraction_vs_ft), "{l:?}");
    assert_eq!(l.trainable + l.frozen, l.total);
    let p = plan(&cfg, FreezePolicy::ShallowUnitsPerGroup, cfg.frozen_units);
    assert_eq!((l.total, l.trainable), brute_force(&cfg, &p, true));
    assert_eq!(p.lora_targets.len(), 2 * cfg.groups * cfg.frozen_units);
    assert_eq!(l.lora, p.lora_targets.len() * cfg.rank * (cfg.dim + cfg.dim));
}

#[test]
fn desk_fraction_below_forty_percent() {
    let l = dan_p_ledger(&ModelConfig::desk());
    assert!(l.fraction_vs_ft < 0.40, "{l:?}");
}

#[test]
fn full_fine_tuning_boundary() {
    let cfg = ModelConfig { rank: 0, ..ModelConfig::desk() };
    let p = plan(&cfg, FreezePolicy::ShallowUnitsPerGroup, 0);
    assert!(p.frozen.is_empty() && p.lora_targets.is_empty());
    let entries: Vec<_> = backbone_specs(&cfg).unwrap().into_iter().map(|s| (s.name.clone(), s.numel())).collect();
    let l = count_trainable(&p, entries.iter().map(|(n, k)| (n.as_str(), *k))).unwrap();
    assert_eq!(l.fraction_vs_ft, 1.0);
    assert_eq!(plan(&cfg, FreezePolicy::None, 0), FreezePlan { policy: FreezePolicy::None, ..p });
}

#[test]
fn everything_frozen_but_the_upsampler() {
    let cfg = ModelConfig::desk();
    let p = plan(&cfg, FreezePolicy::ShallowUnitsPerGroup, cfg.units);
    assert!(p.trainable.iter().all(|n| n.starts_with("upsample.")));
    assert!(p.frozen.iter().any(|n| n.starts_with("groups.1.conv")));
    assert_eq!(p.lora_targets.len(), 2 * cfg.groups * cfg.units);
}

#[test]
fn policies_cover_the_expected_units() {
    let cfg = ModelConfig::desk();
    let deep = plan(&cfg, FreezePolicy::DeepUnitsPerGroup, 2);
    assert!(deep.frozen.contains("groups.0.units.5.attn.q.weight"));
    assert!(deep.trainable.contains("groups.0.units.0.attn.q.weight"));
    assert!(deep.frozen.contains("head.weight"));
    let shallow = plan(&cfg, FreezePolicy::ShallowGroups, 1);
    assert!(shallow.frozen.contains("groups.0.units.5.mlp.fc1.weight"));
    assert!(shallow.trainable.contains("groups.1.units.0.mlp.fc1.weight"));
    assert!(shallow.trainable.contains("groups.1.conv.weight"));
}

#[test]
fn rejects_bad_budget_and_names() {
    let cfg = ModelConfig::desk();
    let n = names(&cfg);
    assert!(apply_freeze_plan(n.iter().map(String::as_str), &cfg, FreezePolicy::ShallowGroups, 3).is_err());
    assert!(apply_freeze_plan(n.iter().map(String::as_str), &cfg, FreezePolicy::ShallowUnitsPerGroup, 7).is_err());
    assert!(apply_freeze_plan(["tail.weight"], &cfg, FreezePolicy::ShallowUnitsPerGroup, 1).is_err());
    let p = plan(&cfg, FreezePolicy::ShallowUnitsPerGroup, 1);
    assert!(count_trainable(&p, [("stray.weight", 4)]).is_err());
}

#[test]
fn random_adapter_matches_dense_oracle() {
    let mut r = rng(1);
    let w = Tensor::<f64>::uniform(&[16, 16], -1.0, 1.0, &mut r);
    let b = Tensor::<f64>::uniform(&[16], -1.0, 1.0, &mut r);
    let down = Tensor::uniform(&[16, 4], -1.0, 1.0, &mut r);
    let up = Tensor::uniform(&[4, 16], -1.0, 1.0, &mut r);
    let a = LoraAdapter::from_parts(down.clone(), up.clone(), 0.5).unwrap();
    let dense = Tensor::from_fn(&[16, 16], |k| {
        let (i, j) = (k / 16, k % 16);
        w.data()[k] + 0.5 * (0..4).map(|t| down.data()[i * 4 + t] * up.data()[t * 16 + j]).sum::<f64>()
    });
    let x = Tensor::uniform(&[5, 16], -1.0, 1.0, &mut r);
    let y = a.forward(&x, &w, Some(&b)).unwrap();
    assert!(y.max_abs_diff(&linear_forward(&x, &dense, Some(&b)).unwrap()) < 1e-6);
    assert!(a.merge(&w).unwrap().max_abs_diff(&dense) < 1e-12);
}

#[test]
fn merged_weight_matches_adapter_on_random_inputs() {
    let mut r = rng(2);
    let w = Tensor::<f32>::uniform(&[16, 16], -1.0, 1.0, &mut r);
    let mut a = LoraAdapter::<f32>::new(16, 16, 4, 4.0, &mut r).unwrap();
    a.up = Tensor::uniform(&[4, 16], -1.0, 1.0, &mut r);
    let merged = a.merge(&w).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = Tensor::uniform(&[1, 16], -1.0, 1.0, &mut r);
        let y = a.forward(&x, &w, None).unwrap();
        worst = worst.max(y.max_abs_diff(&linear_forward(&x, &merged, None).unwrap()));
    }
    assert!(worst < 1e-5, "{worst}");
}

fn adapted_desk_model(seed: u64) -> (Model<f32>, Model<f32>) {
    let cfg = ModelConfig { groups: 1, units: 2, frozen_units: 1, freq_stages: 1, ..ModelConfig::desk() };
    let base = Model::<f32>::init(cfg, seed).unwrap();
    let mut adapted = base.clone();
    let p = apply_freeze_plan(adapted.backbone_names().iter().map(String::as_str), &cfg, FreezePolicy::ShallowUnitsPerGroup, 1)
        .unwrap();
    adapted.attach_plan(&p, seed + 1).unwrap();
    (base, adapted)
}

#[test]
fn fresh_adapters_leave_model_output_unchanged() {
    let (base, adapted) = adapted_desk_model(3);
    let x = Tensor::<f32>::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut rng(4));
    let (a, b) = (base.predict(&x).unwrap(), adapted.predict(&x).unwrap());
    assert!(a.spatial.max_abs_diff(&b.spatial) < 1e-6);
}

#[test]
fn merged_model_matches_adapted_model() {
    let (_, mut adapted) = adapted_desk_model(5);
    let mut r = rng(6);
    let ups: Vec<String> = adapted.params.names().filter(|n| n.ends_with("lora.up")).map(str::to_string).collect();
    for n in ups {
        let t = adapted.params.get_mut(&n).unwrap();
        *t = Tensor::uniform(t.shape(), -0.5, 0.5, &mut r);
    }
    let merged = Model { config: adapted.config, params: merge_adapters(&adapted.params, &adapted.config).unwrap() };
    assert!(!merged.has_adapters());
    let x = Tensor::<f32>::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut r);
    let (a, b) = (adapted.predict(&x).unwrap(), merged.predict(&x).unwrap());
    assert!(a.spatial.max_abs_diff(&b.spatial) < 1e-5);
}

#[test]
fn store_ledger_matches_spec_ledger() {
    let cfg = ModelConfig::desk();
    let mut m = Model::<f32>::init(cfg, 0).unwrap();
    m.attach_fda(1).unwrap();
    let p = apply_freeze_plan(m.backbone_names().iter().map(String::as_str), &cfg, FreezePolicy::ShallowUnitsPerGroup, 5)
        .unwrap();
    m.attach_plan(&p, 2).unwrap();
    assert_eq!(ledger_of_store(&p, &m.params).unwrap(), dan_p_ledger(&cfg));
    let flagged: usize = m.params.iter().filter(|(_, q)| q.trainable).map(|(_, q)| q.value.numel()).sum();
    assert_eq!(flagged, dan_p_ledger(&cfg).trainable);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plans_partition_and_shrink(
        groups in 1usize..4,
        units in 1usize..5,
        rank in 0usize..3,
        policy_idx in 0usize..3,
        seed_budget in 0usize..8,
    ) {
        let cfg = ModelConfig { groups, units, frozen_units: 0, rank, freq_stages: 1, ..ModelConfig::desk() };
        let policy = FreezePolicy::COMPARED[policy_idx];
        let max = policy.max_budget(&cfg);
        let budget = seed_budget % (max + 1);
        let all: BTreeSet<String> = names(&cfg).into_iter().collect();
        let p = plan(&cfg, policy, budget);
        prop_assert!(p.frozen.is_disjoint(&p.trainable));
        prop_assert_eq!(p.frozen.union(&p.trainable).cloned().collect::<BTreeSet<_>>(), all);
        for t in &p.lora_targets {
            let w = format!("{t}.weight");
            prop_assert!(p.frozen.contains(&w));
        }
        let (total, trainable) = brute_force(&cfg, &p, false);
        let mut entries: Vec<(String, usize)> =
            backbone_specs(&cfg).unwrap().into_iter().map(|s| (s.name.clone(), s.numel())).collect();
        entries.extend(p.lora_specs(&cfg).into_iter().map(|s| (s.name.clone(), s.numel())));
        let l = count_trainable(&p, entries.iter().map(|(n, k)| (n.as_str(), *k))).unwrap();
        prop_assert_eq!((l.total, l.trainable), (total, trainable));
        prop_assert_eq!(l.trainable + l.frozen, l.total);
        if budget < max {
            let next = plan(&cfg, policy, budget + 1);
            let (_, next_trainable) = brute_force(&cfg, &next, false);
            prop_assert!(next_trainable <= trainable);
        }
    }
}
