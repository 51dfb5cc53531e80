use std::collections::HashSet;
use std::path::Path;

use candle_core::{DType, Tensor};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::config::{GenConfig, StageBudget};
use super::denoiser::{Condition, Denoiser, NoisePredictor};
use super::schedule::{forward_diffuse_batch, NoiseSchedule};
use super::vae::{images_to_tensor, vae_loss, LatentShape, Vae};
use crate::dataset::{FoldPlan, Label, Manifest};
use crate::error::{ensure, Error, Result};
use crate::kv::KeyValues;
use crate::nn::{self, AdamW, Optimizer, WeightSet};
use crate::seed::{self, Rng};
use crate::imageio;

/// Maps images to the diffusion latent space and back.
pub trait LatentCodec {
    fn latent_shape(&self) -> LatentShape;
    /// Images in `[-1, 1]` to latents.
    fn encode_latents(&self, images: &Tensor) -> Result<Tensor>;
    /// Latents to images in `[-1, 1]`.
    fn decode_latents(&self, z: &Tensor) -> Result<Tensor>;
}

/// VAE posterior mean, multiplied by `scale` so latents have roughly unit variance.
pub struct ScaledVae {
    pub vae: Vae,
    pub scale: f64,
}

impl LatentCodec for ScaledVae {
    fn latent_shape(&self) -> LatentShape {
        self.vae.latent
    }

    fn encode_latents(&self, images: &Tensor) -> Result<Tensor> {
        let (mu, _) = self.vae.encode(images)?;
        Ok((mu * self.scale)?)
    }

    fn decode_latents(&self, z: &Tensor) -> Result<Tensor> {
        self.vae.decode(&(z / self.scale)?)
    }
}

/// Unit Gaussian tensor drawn from `rng`.
pub fn gaussian(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, shape, &nn::DEVICE)?)
}

/// Noise-prediction loss on already-encoded latents. Draws one step per
/// sample, then the noise.
pub fn ddpm_latent_step(
    denoiser: &dyn NoisePredictor,
    z0: &Tensor,
    cond: &[Condition],
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Tensor> {
    let b = z0.dim(0)?;
    ensure!(b > 0, "empty diffusion batch");
    ensure!(cond.len() == b, "one condition per latent");
    let ts: Vec<usize> = (0..b).map(|_| rng.random_range(1..=schedule.steps())).collect();
    let eps = gaussian(rng, z0.dims())?.to_dtype(z0.dtype())?;
    let z_t = forward_diffuse_batch(z0, &ts, &eps, schedule)?;
    let pred = denoiser.predict_noise(&z_t, &ts, cond)?;
    ensure!(
        pred.dims() == z0.dims(),
        "denoiser output shape {:?} does not match latent shape {:?}",
        pred.dims(),
        z0.dims()
    );
    Ok((pred - eps)?.sqr()?.mean_all()?)
}

/// Encodes `images` (NCHW in `[-1, 1]`) and returns the noise-prediction
/// loss. `labels` switch on conditional mode.
pub fn ddpm_training_step(
    denoiser: &dyn NoisePredictor,
    codec: &dyn LatentCodec,
    images: &Tensor,
    labels: Option<&[Label]>,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Tensor> {
    let b = images.dim(0)?;
    ensure!(b > 0, "empty diffusion batch");
    let cond: Vec<Condition> = match labels {
        Some(l) => {
            ensure!(l.len() == b, "{} labels for {b} images", l.len());
            l.iter().map(|&l| l.into()).collect()
        }
        None => vec![Condition::Unconditional; b],
    };
    let z0 = codec.encode_latents(images)?.detach();
    let loss = ddpm_latent_step(denoiser, &z0, &cond, schedule, rng)?;
    let v = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    ensure!(v.is_finite(), "diffusion loss is not finite");
    Ok(loss)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Trains the VAE with reparameterized posterior samples. Returns the mean
/// loss of every epoch.
pub fn fit_vae(
    vae: &Vae,
    images: &[RgbImage],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    kl_weight: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    ensure!(!images.is_empty(), "no images to train the VAE on");
    let mut pooled = Vec::new();
    for chunk in images.chunks(ENCODE_BATCH) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        pooled.push(vae.pool_input(&images_to_tensor(&refs)?)?);
    }
    let pooled = Tensor::cat(&pooled, 0)?;
    let mut opt = AdamW::default();
    let mut order: Vec<u32> = (0..images.len() as u32).collect();
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let x = pooled.index_select(&Tensor::from_slice(chunk, chunk.len(), &nn::DEVICE)?, 0)?;
            let (mu, logvar) = vae.encode_native(&x)?;
            let eps = gaussian(rng, mu.dims())?;
            let z = (&mu + (logvar.affine(0.5, 0.0)?.exp()? * eps)?)?;
            // Nearest upsampling only adds a per-image constant to the
            // pixel error, so the loss is taken at native resolution.
            let recon = vae.decode_native(&z)?;
            let loss = vae_loss(&x, &recon, &mu, &logvar, kl_weight)?;
            sum += scalar(&loss)?;
            batches += 1;
            opt.step(vae.params(), &loss.backward()?, lr)?;
        }
        let mean = sum / batches as f64;
        log::debug!("vae epoch {epoch}: loss {mean:.5}");
        losses.push(mean);
    }
    Ok(losses)
}

const ENCODE_BATCH: usize = 64;

/// Posterior means for every image, `(n, C, S, S)`.
pub fn encode_means(vae: &Vae, images: &[RgbImage]) -> Result<Tensor> {
    ensure!(!images.is_empty(), "no images to encode");
    let mut parts = Vec::new();
    for chunk in images.chunks(ENCODE_BATCH) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        parts.push(vae.encode(&images_to_tensor(&refs)?)?.0.detach());
    }
    Ok(Tensor::cat(&parts, 0)?)
}

/// Mean squared error of mean-latent reconstructions, in `[-1, 1]` units.
pub fn reconstruction_error(vae: &Vae, images: &[RgbImage]) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in images.chunks(ENCODE_BATCH) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        let x = images_to_tensor(&refs)?;
        let (mu, _) = vae.encode(&x)?;
        let err = scalar(&(vae.decode(&mu)? - &x)?.sqr()?.mean_all()?)?;
        sum += err * chunk.len() as f64;
    }
    Ok(sum / images.len() as f64)
}

/// Reciprocal standard deviation of the latents, so scaled latents have unit variance.
pub fn latent_scale(latents: &Tensor) -> Result<f64> {
    let v: Vec<f32> = latents.flatten_all()?.to_vec1()?;
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(if var.sqrt() > 1e-8 { 1.0 / var.sqrt() } else { 1.0 })
}

/// Trains the denoiser on fixed latents. Returns the mean loss of every epoch.
pub fn fit_denoiser(
    denoiser: &Denoiser,
    latents: &Tensor,
    cond: &[Condition],
    schedule: &NoiseSchedule,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = latents.dim(0)?;
    ensure!(n > 0 && n == cond.len(), "need one condition per latent");
    let mut opt = AdamW::default();
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let idx = Tensor::from_slice(chunk, chunk.len(), &nn::DEVICE)?;
            let z0 = latents.index_select(&idx, 0)?;
            let c: Vec<Condition> = chunk.iter().map(|&i| cond[i as usize]).collect();
            let loss = ddpm_latent_step(denoiser, &z0, &c, schedule, rng)?;
            let v = scalar(&loss)?;
            ensure!(v.is_finite(), "diffusion loss diverged at epoch {epoch}");
            sum += v;
            batches += 1;
            opt.step(denoiser.params(), &loss.backward()?, lr)?;
        }
        let mean = sum / batches as f64;
        log::debug!("denoiser epoch {epoch}: loss {mean:.5}");
        losses.push(mean);
    }
    Ok(losses)
}

/// Trained codec and denoiser plus everything needed to audit and reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorCheckpoint {
    pub config: GenConfig,
    /// Fold the checkpoint was fine-tuned for; `None` for the pretrained base.
    pub fold: Option<usize>,
    pub conditional: bool,
    pub latent_scale: f64,
    /// Sorted ids of every patch the checkpoint was trained on.
    pub training_ids: Vec<String>,
    pub vae_losses: Vec<f64>,
    pub ddpm_losses: Vec<f64>,
    pub seed: u64,
    pub vae: WeightSet,
    pub denoiser: WeightSet,
}

const GENERATOR_KIND: &str = "generator";

impl GeneratorCheckpoint {
    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.config.schedule()
    }

    pub fn codec(&self) -> Result<ScaledVae> {
        let vae = Vae::new(self.config.latent, self.config.vae_hidden, 0)?;
        vae.load_weights(&self.vae)?;
        Ok(ScaledVae {
            vae,
            scale: self.latent_scale,
        })
    }

    pub fn denoiser(&self) -> Result<Denoiser> {
        let d = Denoiser::new(self.config.latent, self.config.denoiser, 0)?;
        d.load_weights(&self.denoiser)?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "config": self.config.to_kv().to_json(),
            "fingerprint": self.fingerprint(),
            "fold": self.fold,
            "conditional": self.conditional,
            "latent_scale": self.latent_scale,
            "training_ids": self.training_ids,
            "vae_losses": self.vae_losses,
            "ddpm_losses": self.ddpm_losses,
            "seed": self.seed,
            "alpha_bar_final": self.schedule()?.alpha_bar(self.config.steps),
        });
        nn::write_container(
            path,
            &nn::Container {
                kind: GENERATOR_KIND.into(),
                meta,
                groups: vec![
                    ("vae".into(), self.vae.clone()),
                    ("denoiser".into(), self.denoiser.clone()),
                ],
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = nn::read_container(path)?;
        ensure!(c.kind == GENERATOR_KIND, "{} is not a generator checkpoint", path.display());
        let m = &c.meta;
        let bad = |k: &str| Error::invalid(format!("{}: bad or missing {k}", path.display()));
        let field = |k: &str| m.get(k).cloned().ok_or_else(|| bad(k));
        let kv = KeyValues::from_json(&field("config")?)?;
        let config = GenConfig::from_kv(&kv, &GenConfig::full())?;
        let stored = m.get("fingerprint").and_then(|v| v.as_str()).ok_or_else(|| bad("fingerprint"))?;
        ensure!(
            stored == config.fingerprint(),
            "{}: config fingerprint {stored} does not match its config",
            path.display()
        );
        let parse = |k: &str| -> Result<serde_json::Value> { field(k) };
        Ok(Self {
            config,
            fold: serde_json::from_value(parse("fold")?).map_err(|_| bad("fold"))?,
            conditional: m.get("conditional").and_then(|v| v.as_bool()).ok_or_else(|| bad("conditional"))?,
            latent_scale: m.get("latent_scale").and_then(|v| v.as_f64()).ok_or_else(|| bad("latent_scale"))?,
            training_ids: serde_json::from_value(parse("training_ids")?).map_err(|_| bad("training_ids"))?,
            vae_losses: serde_json::from_value(parse("vae_losses")?).map_err(|_| bad("vae_losses"))?,
            ddpm_losses: serde_json::from_value(parse("ddpm_losses")?).map_err(|_| bad("ddpm_losses"))?,
            seed: m.get("seed").and_then(|v| v.as_u64()).ok_or_else(|| bad("seed"))?,
            vae: c.group("vae")?.clone(),
            denoiser: c.group("denoiser")?.clone(),
        })
    }
}

fn load_images(records: &[&crate::dataset::PatchRecord]) -> Result<Vec<RgbImage>> {
    records.iter().map(|r| imageio::read_patch(&r.image_ref)).collect()
}

fn train_stage(
    vae: &Vae,
    denoiser: &Denoiser,
    images: &[RgbImage],
    cond: &[Condition],
    config: &GenConfig,
    budget: &StageBudget,
    seed: u64,
    index: u64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let schedule = config.schedule()?;
    let mut vae_rng = seed::rng(seed::derive(seed, "vae-train", index));
    let vae_losses = fit_vae(
        vae,
        images,
        budget.vae_epochs,
        budget.batch_size,
        budget.lr,
        config.kl_weight,
        &mut vae_rng,
    )?;
    let means = encode_means(vae, images)?;
    let scale = latent_scale(&means)?;
    let latents = (means * scale)?;
    let mut ddpm_rng = seed::rng(seed::derive(seed, "ddpm-train", index));
    let ddpm_losses = fit_denoiser(
        denoiser,
        &latents,
        cond,
        &schedule,
        budget.ddpm_epochs,
        budget.batch_size,
        budget.lr,
        &mut ddpm_rng,
    )?;
    Ok((scale, vae_losses, ddpm_losses))
}

/// Trains the VAE, then an unconditional denoiser on its latents, over every
/// patch of `unlabeled` with labels ignored.
pub fn pretrain_generator(unlabeled: &Manifest, config: &GenConfig, seed: u64) -> Result<GeneratorCheckpoint> {
    ensure!(!unlabeled.is_empty(), "generator pretraining needs at least one patch");
    config.validate()?;
    let records: Vec<_> = unlabeled.records().iter().collect();
    let images = load_images(&records)?;
    let vae = Vae::new(config.latent, config.vae_hidden, seed::derive(seed, "vae-init", 0))?;
    let denoiser = Denoiser::new(config.latent, config.denoiser, seed::derive(seed, "ddpm-init", 0))?;
    let cond = vec![Condition::Unconditional; images.len()];
    let (scale, vae_losses, ddpm_losses) =
        train_stage(&vae, &denoiser, &images, &cond, config, &config.pretrain, seed, u64::MAX)?;
    let mut training_ids: Vec<String> = unlabeled.ids().map(str::to_string).collect();
    training_ids.sort();
    Ok(GeneratorCheckpoint {
        config: config.clone(),
        fold: None,
        conditional: false,
        latent_scale: scale,
        training_ids,
        vae_losses,
        ddpm_losses,
        seed,
        vae: vae.weights()?,
        denoiser: denoiser.weights()?,
    })
}

/// Fine-tunes one conditional generator on the training partition of `fold`.
pub fn finetune_fold(
    labeled: &Manifest,
    plan: &FoldPlan,
    fold: usize,
    base: &GeneratorCheckpoint,
    config: &GenConfig,
    seed: u64,
) -> Result<GeneratorCheckpoint> {
    ensure!(fold < plan.k, "fold {fold} outside plan of {} folds", plan.k);
    ensure!(
        labeled.records().iter().all(|r| r.is_real()),
        "generator fine-tuning takes real patches only"
    );
    plan.check_against(labeled)?;
    config.validate()?;
    ensure!(
        base.config.architecture_matches(config),
        "incompatible base checkpoint: its architecture ({}) differs from the fine-tuning config ({})",
        base.fingerprint(),
        config.fingerprint()
    );
    let held_out: HashSet<&str> = plan.validation_ids(fold).collect();
    let records: Vec<_> = labeled
        .records()
        .iter()
        .filter(|r| !held_out.contains(r.id.as_str()))
        .collect();
    ensure!(!records.is_empty(), "fold {fold} has no training patches");
    let images = load_images(&records)?;
    let cond: Vec<Condition> = records.iter().map(|r| r.label.into()).collect();

    let vae = Vae::new(config.latent, config.vae_hidden, 0)?;
    vae.load_weights(&base.vae)?;
    let denoiser = Denoiser::new(config.latent, config.denoiser, 0)?;
    denoiser.load_weights(&base.denoiser)?;
    let (scale, vae_losses, ddpm_losses) =
        train_stage(&vae, &denoiser, &images, &cond, config, &config.finetune, seed, fold as u64)?;
    let mut training_ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    training_ids.sort();
    log::info!("fine-tuned generator for fold {fold} on {} patches", training_ids.len());
    Ok(GeneratorCheckpoint {
        config: config.clone(),
        fold: Some(fold),
        conditional: true,
        latent_scale: scale,
        training_ids,
        vae_losses,
        ddpm_losses,
        seed,
        vae: vae.weights()?,
        denoiser: denoiser.weights()?,
    })
}

/// One conditional checkpoint per fold of `plan`, each trained only on that
/// fold's training partition.
pub fn finetune_generator(
    labeled: &Manifest,
    plan: &FoldPlan,
    base: &GeneratorCheckpoint,
    config: &GenConfig,
    seed: u64,
) -> Result<Vec<GeneratorCheckpoint>> {
    (0..plan.k)
        .map(|f| finetune_fold(labeled, plan, f, base, config, seed))
        .collect()
}
