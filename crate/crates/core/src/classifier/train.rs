use std::path::Path;

use candle_core::Tensor;
use image::RgbImage;
use rand::seq::SliceRandom;

use super::loss::{bce_with_logits_tensor, sigmoid};
use super::model::{build_model, to_batch, BackboneFamily, BackboneSpec, Model, WeightSource};
use super::schedule::cosine_restart_lr;
use crate::dataset::{Label, Manifest};
use crate::error::{ensure, Error, Result};
use crate::metrics::{auroc, ScoredSet};
use crate::nn::{self, NAdam, Optimizer, WeightSet};
use crate::transforms::{apply_eval_transform, apply_train_augment, AugmentConfig, NormStats};
use crate::{fsutil, imageio, seed};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub floor_lr: f64,
    /// Cosine restart period, in epochs.
    pub restart_period: f64,
    /// Stop after this many epochs without a validation-AUROC improvement.
    /// `None` trains the full budget.
    pub patience: Option<usize>,
}

impl TrainConfig {
    /// Published settings for a backbone family.
    pub fn for_family(family: BackboneFamily) -> Self {
        Self {
            batch_size: 16,
            epochs: 25,
            base_lr: match family {
                BackboneFamily::Native128Conv => 1e-4,
                BackboneFamily::Token224Cls => 1e-5,
            },
            floor_lr: 0.0,
            restart_period: 5.0,
            patience: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size > 0, "train.batch_size must be positive");
        ensure!(self.epochs > 0, "train.epochs must be positive");
        ensure!(self.restart_period > 0.0, "train.restart_period must be positive");
        ensure!(
            self.floor_lr >= 0.0 && self.base_lr > self.floor_lr,
            "need base_lr > floor_lr >= 0 (got {} and {})",
            self.base_lr,
            self.floor_lr
        );
        if let Some(p) = self.patience {
            ensure!(p > 0, "train.patience must be positive when set");
        }
        Ok(())
    }
}

/// One line of the per-epoch run log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Zero-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,lr,val_auroc\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.lr, r.val_auroc));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut epochs = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            ensure!(f.len() == 4, "run log line {line:?} needs 4 fields");
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("run log value {s:?}")))
            };
            epochs.push(EpochRecord {
                epoch: num(f[0])? as usize,
                train_loss: num(f[1])?,
                lr: num(f[2])?,
                val_auroc: num(f[3])?,
            });
        }
        Ok(Self { epochs })
    }

    /// Zero-based epoch of the first maximum of validation AUROC.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.epochs {
            if best.is_none_or(|b| r.val_auroc > b.val_auroc) {
                best = Some(r);
            }
        }
        best.map(|r| r.epoch)
    }
}

/// Model selected for one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldCheckpoint {
    pub fold: usize,
    pub selected_epoch: usize,
    /// Validation AUROC of the selected epoch, as a fraction.
    pub val_auroc: f64,
    pub fingerprint: String,
    pub seed: u64,
    pub backbone: BackboneSpec,
    pub norm: NormStats,
    pub weights: WeightSet,
}

const CHECKPOINT_KIND: &str = "fold-classifier";

impl FoldCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "fold": self.fold,
            "selected_epoch": self.selected_epoch,
            "val_auroc": self.val_auroc,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "family": self.backbone.family.as_str(),
            "embedding_dim": self.backbone.embedding_dim,
            "weight_source": self.backbone.weight_source.render(),
            "norm_mean": self.norm.mean,
            "norm_std": self.norm.std,
        });
        nn::write_container(
            path,
            &nn::Container {
                kind: CHECKPOINT_KIND.into(),
                meta,
                groups: vec![("model".into(), self.weights.clone())],
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = nn::read_container(path)?;
        ensure!(c.kind == CHECKPOINT_KIND, "{} is not a classifier checkpoint", path.display());
        let m = &c.meta;
        let bad = |k: &str| Error::invalid(format!("{}: bad or missing {k}", path.display()));
        let u = |k: &str| m.get(k).and_then(|v| v.as_u64()).ok_or_else(|| bad(k));
        let s = |k: &str| m.get(k).and_then(|v| v.as_str()).ok_or_else(|| bad(k));
        let arr3 = |k: &str| -> Result<[f32; 3]> {
            let v: Vec<f32> = serde_json::from_value(m.get(k).cloned().ok_or_else(|| bad(k))?)
                .map_err(|_| bad(k))?;
            v.try_into().map_err(|_| bad(k))
        };
        Ok(Self {
            fold: u("fold")? as usize,
            selected_epoch: u("selected_epoch")? as usize,
            val_auroc: m.get("val_auroc").and_then(|v| v.as_f64()).ok_or_else(|| bad("val_auroc"))?,
            fingerprint: s("fingerprint")?.to_string(),
            seed: u("seed")?,
            backbone: BackboneSpec {
                family: BackboneFamily::parse(s("family")?)?,
                embedding_dim: u("embedding_dim")? as usize,
                weight_source: WeightSource::parse(s("weight_source")?),
            },
            norm: NormStats::new(arr3("norm_mean")?, arr3("norm_std")?)?,
            weights: c.group("model")?.clone(),
        })
    }

    /// Rebuilds the network with the selected weights.
    pub fn model(&self) -> Result<Model> {
        let spec = BackboneSpec {
            weight_source: WeightSource::Random,
            ..self.backbone.clone()
        };
        let m = build_model(&spec, 0)?;
        m.load_weights(&self.weights)?;
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub checkpoint: FoldCheckpoint,
    pub log: RunLog,
}

/// Everything `train_fold` needs besides the data.
#[derive(Debug, Clone)]
pub struct FoldSetup<'a> {
    pub fold: usize,
    pub spec: &'a BackboneSpec,
    pub config: &'a TrainConfig,
    pub augment: &'a AugmentConfig,
    pub norm: NormStats,
    pub seed: u64,
    pub fingerprint: String,
}

fn load_images(set: &Manifest) -> Result<Vec<(RgbImage, u8)>> {
    set.records()
        .iter()
        .map(|r| Ok((imageio::read_patch(&r.image_ref)?, r.label.index() as u8)))
        .collect()
}

/// Trains for the full epoch budget (or until patience runs out), scoring
/// validation AUROC after every epoch and keeping the weights of the first
/// epoch that reaches the maximum.
pub fn train_fold(train: &Manifest, val: &Manifest, setup: &FoldSetup<'_>) -> Result<TrainedFold> {
    ensure!(!train.is_empty(), "empty training set");
    ensure!(!val.is_empty(), "empty validation set");
    ensure!(
        val.records().iter().all(|r| r.is_real()),
        "validation set must be real-only"
    );
    ensure!(
        val.count_label(Label::Atypical) > 0 && val.count_label(Label::Normal) > 0,
        "validation AUROC undefined: validation set has a single class"
    );
    setup.config.validate()?;
    setup.augment.validate()?;
    let train_data = load_images(train)?;
    let val_data = load_images(val)?;
    train_on_images(&train_data, &val_data, setup)
}

/// [`train_fold`] on already-decoded images.
pub fn train_on_images(
    train: &[(RgbImage, u8)],
    val: &[(RgbImage, u8)],
    setup: &FoldSetup<'_>,
) -> Result<TrainedFold> {
    let cfg = setup.config;
    ensure!(!train.is_empty() && !val.is_empty(), "empty training or validation set");
    let val_labels: Vec<u8> = val.iter().map(|(_, l)| *l).collect();
    ensure!(
        val_labels.contains(&0) && val_labels.contains(&1),
        "validation AUROC undefined: validation set has a single class"
    );
    let model = build_model(setup.spec, seed::derive(setup.seed, "init", setup.fold as u64))?;
    let side = setup.spec.input_side();
    let mut opt = NAdam::default();
    let mut order_rng = seed::rng(seed::derive(setup.seed, "order", setup.fold as u64));
    let mut aug_rng = seed::rng(seed::derive(setup.seed, "augment", setup.fold as u64));
    let val_images: Vec<&RgbImage> = val.iter().map(|(i, _)| i).collect();

    let n_batches = train.len().div_ceil(cfg.batch_size);
    let mut log = RunLog::default();
    let mut best: Option<(usize, f64, WeightSet)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let lr = cosine_restart_lr(
                epoch as f64 + b as f64 / n_batches as f64,
                cfg.base_lr,
                cfg.restart_period,
                cfg.floor_lr,
            );
            let mut images = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, label) = &train[i];
                let aug = apply_train_augment(img, setup.augment, &mut aug_rng);
                images.push(apply_eval_transform(&aug, side, &setup.norm)?);
                targets.push(*label as f32);
            }
            let x = to_batch(&images, side)?;
            let y = Tensor::from_vec(targets, chunk.len(), &nn::DEVICE)?;
            let loss = bce_with_logits_tensor(&model.forward(&x)?, &y)?;
            let value = loss.to_scalar::<f32>()? as f64;
            ensure!(value.is_finite(), "training loss diverged at epoch {epoch}");
            loss_sum += value;
            let grads = loss.backward()?;
            opt.step(model.params(), &grads, lr)?;
        }

        let probs = predict_with_model(&model, &setup.norm, &val_images)?;
        let val_auroc = auroc(&ScoredSet::new(probs, val_labels.clone())?)?;
        let lr0 = cosine_restart_lr(epoch as f64, cfg.base_lr, cfg.restart_period, cfg.floor_lr);
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            lr: lr0,
            val_auroc,
        });
        log::debug!(
            "fold {} epoch {epoch}: loss {:.4} lr {lr0:.2e} val AUROC {val_auroc:.4}",
            setup.fold,
            loss_sum / n_batches as f64
        );

        if best.as_ref().is_none_or(|(_, a, _)| val_auroc > *a) {
            best = Some((epoch, val_auroc, model.weights()?));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let (selected_epoch, val_auroc, weights) = best.expect("at least one epoch ran");
    Ok(TrainedFold {
        checkpoint: FoldCheckpoint {
            fold: setup.fold,
            selected_epoch,
            val_auroc,
            fingerprint: setup.fingerprint.clone(),
            seed: setup.seed,
            backbone: setup.spec.clone(),
            norm: setup.norm,
            weights,
        },
        log,
    })
}

const EVAL_BATCH: usize = 64;

fn predict_with_model(model: &Model, norm: &NormStats, patches: &[&RgbImage]) -> Result<Vec<f64>> {
    let side = model.spec.input_side();
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(EVAL_BATCH) {
        let images = chunk
            .iter()
            .map(|img| {
                ensure!(
                    img.dimensions() == (imageio::PATCH_SIDE, imageio::PATCH_SIDE),
                    "preprocessing mismatch: patches must be {0}x{0}",
                    imageio::PATCH_SIDE
                );
                apply_eval_transform(img, side, norm)
            })
            .collect::<Result<Vec<_>>>()?;
        let logits = model.forward(&to_batch(&images, side)?)?.to_vec1::<f32>()?;
        out.extend(logits.into_iter().map(|l| sigmoid(l as f64)));
    }
    Ok(out)
}

/// Probability of the atypical class for each patch, in input order.
pub fn predict_proba(checkpoint: &FoldCheckpoint, patches: &[RgbImage]) -> Result<Vec<f64>> {
    let model = checkpoint.model()?;
    let refs: Vec<&RgbImage> = patches.iter().collect();
    predict_with_model(&model, &checkpoint.norm, &refs)
}

/// Writes the checkpoint and run log for one fold into `dir`.
pub fn save_fold(dir: &Path, trained: &TrainedFold) -> Result<()> {
    trained.checkpoint.save(&dir.join("checkpoint.bin"))?;
    fsutil::write_atomic(&dir.join("run_log.csv"), trained.log.to_csv().as_bytes())
}
