use std::path::Path;

use super::sample::sample_synthetic;
use super::train::GeneratorCheckpoint;
use crate::dataset::{Label, Manifest, PatchRecord};
use crate::error::{ensure, Result};
use crate::{fsutil, imageio, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthPoolSpec {
    pub atypical_total: usize,
    pub normal_total: usize,
    pub folds: usize,
}

impl Default for SynthPoolSpec {
    fn default() -> Self {
        Self {
            atypical_total: 20_000,
            normal_total: 10_191,
            folds: 5,
        }
    }
}

/// Splits `total` across `folds`; the remainder goes one each to the lowest folds.
pub fn split_quota(total: usize, folds: usize) -> Vec<usize> {
    (0..folds)
        .map(|f| total / folds + usize::from(f < total % folds))
        .collect()
}

impl SynthPoolSpec {
    /// `(normal, atypical)` per fold.
    pub fn quotas(&self) -> Vec<(usize, usize)> {
        split_quota(self.normal_total, self.folds)
            .into_iter()
            .zip(split_quota(self.atypical_total, self.folds))
            .collect()
    }
}

/// Samples every fold's quota from that fold's checkpoint, writes the PNGs
/// under `out_dir/images`, and writes `out_dir/manifest.csv`.
pub fn build_synth_pool(
    checkpoints: &[GeneratorCheckpoint],
    spec: &SynthPoolSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    ensure!(spec.folds > 0, "pool needs at least one fold");
    ensure!(
        checkpoints.len() == spec.folds,
        "pool needs one checkpoint per fold: got {} for {} folds",
        checkpoints.len(),
        spec.folds
    );
    let mut by_fold: Vec<Option<&GeneratorCheckpoint>> = vec![None; spec.folds];
    for c in checkpoints {
        let f = c
            .fold
            .ok_or_else(|| crate::Error::invalid("pool checkpoints must be fine-tuned per fold"))?;
        ensure!(f < spec.folds, "checkpoint fold {f} outside {} folds", spec.folds);
        ensure!(by_fold[f].is_none(), "two checkpoints for fold {f}");
        by_fold[f] = Some(c);
    }
    let image_dir = out_dir.join("images");
    fsutil::create_dir(&image_dir)?;
    let mut records = Vec::new();
    for (fold, (n_norm, n_atyp)) in spec.quotas().into_iter().enumerate() {
        let ckpt = by_fold[fold].expect("every fold checked above");
        for (label, n) in [(Label::Normal, n_norm), (Label::Atypical, n_atyp)] {
            let images = sample_synthetic(ckpt, label, n, seed::derive(seed, label.as_str(), fold as u64))?;
            for (i, img) in images.iter().enumerate() {
                let id = format!("synth_f{fold}_{}_{i:05}", label.as_str());
                let path = image_dir.join(format!("{id}.png"));
                imageio::write_png(&path, img)?;
                records.push(PatchRecord::synthetic(id, path, label, fold));
            }
            log::info!("fold {fold}: sampled {n} {} patches", label.as_str());
        }
    }
    let manifest = Manifest::from_records(records)?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
