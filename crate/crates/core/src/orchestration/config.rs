use std::path::{Path, PathBuf};

use crate::classifier::{BackboneFamily, BackboneSpec, TrainConfig, WeightSource};
use crate::dataset::{MixPolicy, Regime};
use crate::error::{ensure, Result};
use crate::fsutil;
use crate::kv::KeyValues;
use crate::metrics::SdKind;
use crate::transforms::AugmentConfig;

/// Every key an experiment config may set.
pub const EXPERIMENT_KEYS: &[&str] = &[
    "augment.brightness",
    "augment.contrast",
    "augment.hflip_probability",
    "augment.hue",
    "augment.max_rotation_deg",
    "augment.saturation",
    "augment.scale_max",
    "augment.scale_min",
    "augment.sharpness_factor",
    "augment.sharpness_probability",
    "augment.translation_fraction",
    "augment.vflip_probability",
    "backbone.embedding_dim",
    "backbone.family",
    "backbone.weights",
    "data.fold_plan",
    "data.manifest",
    "data.synth_pool",
    "eval.sd",
    "eval.threshold",
    "k",
    "mix.regime",
    "mix.synth_neg_per_fold",
    "mix.synth_pos_per_fold",
    "output_dir",
    "run.label",
    "run.parallel_folds",
    "seed",
    "train.base_lr",
    "train.batch_size",
    "train.epochs",
    "train.floor_lr",
    "train.patience",
    "train.restart_period",
];

/// One cross-validated training run: data, regime, backbone, and every
/// training and evaluation knob.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub synth_pool: Option<PathBuf>,
    /// Precomputed fold assignment. Without one, the plan is drawn from `seed`.
    pub fold_plan: Option<PathBuf>,
    pub k: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub mix: MixPolicy,
    pub backbone: BackboneSpec,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub threshold: f64,
    pub sd_kind: SdKind,
    pub parallel_folds: bool,
    /// Row label in rendered reports.
    pub label: String,
}

fn opt_path(kv: &KeyValues, key: &str) -> Option<PathBuf> {
    kv.get_str(key).filter(|s| !s.is_empty()).map(PathBuf::from)
}

fn render_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl ExperimentConfig {
    /// Resolves `kv` against the defaults. Unknown keys are rejected.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(EXPERIMENT_KEYS)?;
        let family = BackboneFamily::parse(kv.get_str("backbone.family").unwrap_or("native128_conv"))?;
        let tdef = TrainConfig::for_family(family);
        let adef = AugmentConfig::default();
        let mdef = MixPolicy::default();
        let regime = Regime::parse(kv.get_str("mix.regime").unwrap_or(mdef.regime.as_str()))?;
        let patience = match kv.get_str("train.patience") {
            None | Some("") | Some("none") => None,
            Some(_) => Some(kv.require::<usize>("train.patience")?),
        };
        let cfg = Self {
            manifest: PathBuf::from(kv.require_str("data.manifest")?),
            synth_pool: opt_path(kv, "data.synth_pool"),
            fold_plan: opt_path(kv, "data.fold_plan"),
            k: kv.get_or("k", 5)?,
            seed: kv.get_or("seed", 0)?,
            output_dir: PathBuf::from(kv.get_str("output_dir").unwrap_or("runs/experiment")),
            mix: MixPolicy {
                regime,
                synth_pos_per_fold: kv.get_or("mix.synth_pos_per_fold", mdef.synth_pos_per_fold)?,
                synth_neg_per_fold: kv.get_or("mix.synth_neg_per_fold", mdef.synth_neg_per_fold)?,
            },
            backbone: BackboneSpec {
                family,
                embedding_dim: kv.get_or("backbone.embedding_dim", family.reference_embedding_dim())?,
                weight_source: WeightSource::parse(kv.get_str("backbone.weights").unwrap_or("random")),
            },
            train: TrainConfig {
                batch_size: kv.get_or("train.batch_size", tdef.batch_size)?,
                epochs: kv.get_or("train.epochs", tdef.epochs)?,
                base_lr: kv.get_or("train.base_lr", tdef.base_lr)?,
                floor_lr: kv.get_or("train.floor_lr", tdef.floor_lr)?,
                restart_period: kv.get_or("train.restart_period", tdef.restart_period)?,
                patience,
            },
            augment: AugmentConfig {
                scale_min: kv.get_or("augment.scale_min", adef.scale_min)?,
                scale_max: kv.get_or("augment.scale_max", adef.scale_max)?,
                max_rotation_deg: kv.get_or("augment.max_rotation_deg", adef.max_rotation_deg)?,
                translation_fraction: kv.get_or("augment.translation_fraction", adef.translation_fraction)?,
                brightness: kv.get_or("augment.brightness", adef.brightness)?,
                contrast: kv.get_or("augment.contrast", adef.contrast)?,
                saturation: kv.get_or("augment.saturation", adef.saturation)?,
                hue: kv.get_or("augment.hue", adef.hue)?,
                sharpness_factor: kv.get_or("augment.sharpness_factor", adef.sharpness_factor)?,
                sharpness_probability: kv.get_or("augment.sharpness_probability", adef.sharpness_probability)?,
                hflip_probability: kv.get_or("augment.hflip_probability", adef.hflip_probability)?,
                vflip_probability: kv.get_or("augment.vflip_probability", adef.vflip_probability)?,
            },
            threshold: kv.get_or("eval.threshold", 0.5)?,
            sd_kind: SdKind::parse(kv.get_str("eval.sd").unwrap_or("population"))?,
            parallel_folds: kv.get_or("run.parallel_folds", false)?,
            label: kv
                .get_str("run.label")
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .unwrap_or_else(|| format!("{} {}", family.as_str(), regime.as_str())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 2, "k must be at least 2");
        ensure!(
            (0.0..=1.0).contains(&self.threshold),
            "eval.threshold must lie in [0, 1], got {}",
            self.threshold
        );
        ensure!(!self.label.contains(['\n', ',']), "run.label must not contain commas or newlines");
        if self.mix.regime == Regime::SynthBalanced {
            ensure!(self.synth_pool.is_some(), "synth_balanced regime requires data.synth_pool");
            ensure!(
                self.fold_plan.is_some(),
                "synth_balanced regime requires data.fold_plan, the plan the generators were fine-tuned on"
            );
        }
        self.train.validate()?;
        self.augment.validate()
    }

    /// Fully resolved key-value form, every key present.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let a = &self.augment;
        kv.set("augment.brightness", a.brightness);
        kv.set("augment.contrast", a.contrast);
        kv.set("augment.hflip_probability", a.hflip_probability);
        kv.set("augment.hue", a.hue);
        kv.set("augment.max_rotation_deg", a.max_rotation_deg);
        kv.set("augment.saturation", a.saturation);
        kv.set("augment.scale_max", a.scale_max);
        kv.set("augment.scale_min", a.scale_min);
        kv.set("augment.sharpness_factor", a.sharpness_factor);
        kv.set("augment.sharpness_probability", a.sharpness_probability);
        kv.set("augment.translation_fraction", a.translation_fraction);
        kv.set("augment.vflip_probability", a.vflip_probability);
        kv.set("backbone.embedding_dim", self.backbone.embedding_dim);
        kv.set("backbone.family", self.backbone.family.as_str());
        kv.set("backbone.weights", self.backbone.weight_source.render());
        kv.set("data.fold_plan", render_path(&self.fold_plan));
        kv.set("data.manifest", self.manifest.display());
        kv.set("data.synth_pool", render_path(&self.synth_pool));
        kv.set("eval.sd", self.sd_kind.as_str());
        kv.set("eval.threshold", self.threshold);
        kv.set("k", self.k);
        kv.set("mix.regime", self.mix.regime.as_str());
        kv.set("mix.synth_neg_per_fold", self.mix.synth_neg_per_fold);
        kv.set("mix.synth_pos_per_fold", self.mix.synth_pos_per_fold);
        kv.set("output_dir", self.output_dir.display());
        kv.set("run.label", &self.label);
        kv.set("run.parallel_folds", self.parallel_folds);
        kv.set("seed", self.seed);
        kv.set("train.base_lr", self.train.base_lr);
        kv.set("train.batch_size", self.train.batch_size);
        kv.set("train.epochs", self.train.epochs);
        kv.set("train.floor_lr", self.train.floor_lr);
        kv.set(
            "train.patience",
            self.train.patience.map(|p| p.to_string()).unwrap_or_else(|| "none".into()),
        );
        kv.set("train.restart_period", self.train.restart_period);
        kv
    }

    /// Canonical text of the resolved config.
    pub fn snapshot(&self) -> String {
        self.to_kv().render()
    }
}
