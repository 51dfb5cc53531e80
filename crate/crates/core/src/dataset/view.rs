use rand::seq::SliceRandom;

use super::{FoldPlan, Label, Manifest, PatchRecord, Provenance};
use crate::error::{ensure, Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    RealOnly,
    SynthBalanced,
}

impl Regime {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "real_only" => Ok(Regime::RealOnly),
            "synth_balanced" => Ok(Regime::SynthBalanced),
            other => Err(Error::invalid(format!("unknown regime {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::RealOnly => "real_only",
            Regime::SynthBalanced => "synth_balanced",
        }
    }
}

/// How synthetic records are mixed into each fold's training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixPolicy {
    pub regime: Regime,
    pub synth_pos_per_fold: usize,
    pub synth_neg_per_fold: usize,
}

impl Default for MixPolicy {
    fn default() -> Self {
        Self {
            regime: Regime::RealOnly,
            synth_pos_per_fold: 7_667,
            synth_neg_per_fold: 0,
        }
    }
}

impl MixPolicy {
    pub fn synth_balanced(pos: usize, neg: usize) -> Self {
        Self {
            regime: Regime::SynthBalanced,
            synth_pos_per_fold: pos,
            synth_neg_per_fold: neg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingView {
    pub train: Manifest,
    pub val: Manifest,
}

/// Splits the real records into fold `fold`'s validation set and the
/// remaining training set, then (for `SynthBalanced`) appends synthetic
/// records produced by that fold's generator.
///
/// Synthetic records are drawn with a seeded permutation of the eligible
/// pool rows and kept in pool order.
pub fn training_view(
    manifest: &Manifest,
    plan: &FoldPlan,
    fold: usize,
    policy: &MixPolicy,
    synth_pool: Option<&Manifest>,
    seed: u64,
) -> Result<TrainingView> {
    ensure!(fold < plan.k, "fold {fold} out of range for k = {}", plan.k);
    ensure!(
        manifest.records().iter().all(PatchRecord::is_real),
        "the base manifest must hold real records only"
    );
    plan.check_against(manifest)?;

    let (val, mut train): (Vec<PatchRecord>, Vec<PatchRecord>) = manifest
        .records()
        .iter()
        .cloned()
        .partition(|r| plan.fold_of(&r.id) == Some(fold));

    if policy.regime == Regime::SynthBalanced {
        let pool = synth_pool
            .ok_or_else(|| Error::invalid("synth_balanced regime needs a synthetic pool"))?;
        for r in pool.records() {
            ensure!(
                r.provenance == Provenance::Synthetic,
                "synthetic pool contains real record {:?}",
                r.id
            );
            let origin = r.origin_fold.expect("validated on construction");
            ensure!(
                origin < plan.k,
                "origin_fold mismatch: record {:?} has origin_fold {origin}, plan has k = {}",
                r.id,
                plan.k
            );
            ensure!(
                plan.fold_of(&r.id).is_none(),
                "synthetic id {:?} collides with a real id",
                r.id
            );
        }
        let mut rng = seed::rng(seed::derive(seed, "mix", fold as u64));
        for (label, want) in [
            (Label::Atypical, policy.synth_pos_per_fold),
            (Label::Normal, policy.synth_neg_per_fold),
        ] {
            if want == 0 {
                continue;
            }
            let mut eligible: Vec<usize> = pool
                .records()
                .iter()
                .enumerate()
                .filter(|(_, r)| r.label == label && r.origin_fold == Some(fold))
                .map(|(i, _)| i)
                .collect();
            ensure!(
                eligible.len() >= want,
                "synthetic pool has {} {label} records from fold {fold}, {want} requested",
                eligible.len()
            );
            eligible.shuffle(&mut rng);
            let mut chosen = eligible[..want].to_vec();
            chosen.sort_unstable();
            train.extend(chosen.into_iter().map(|i| pool.records()[i].clone()));
        }
    }

    Ok(TrainingView {
        train: Manifest::from_records(train)?,
        val: Manifest::from_records(val)?,
    })
}
