use candle_core::Tensor;
use image::RgbImage;

use super::denoiser::{Condition, NoisePredictor};
use super::schedule::NoiseSchedule;
use super::train::{gaussian, GeneratorCheckpoint, LatentCodec};
use super::vae::{tensor_to_images, LatentShape};
use crate::dataset::Label;
use crate::error::{ensure, Result};
use crate::seed::{self, Rng};

const SAMPLE_BATCH: usize = 64;

/// Ancestral reverse diffusion from unit Gaussian latents, with the
/// per-step variance set to beta.
pub fn sample_latents(
    denoiser: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    shape: LatentShape,
    cond: Condition,
    count: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    ensure!(count > 0, "cannot sample an empty latent batch");
    let mut z = gaussian(rng, &[count, shape.channels, shape.side, shape.side])?;
    let conds = vec![cond; count];
    for t in (1..=schedule.steps()).rev() {
        let eps = denoiser.predict_noise(&z, &vec![t; count], &conds)?;
        let beta = schedule.beta(t);
        let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
        let mean = ((z - (eps * coef)?)? / schedule.alpha(t).sqrt())?;
        z = if t > 1 {
            (mean + (gaussian(rng, &[count, shape.channels, shape.side, shape.side])? * beta.sqrt())?)?
        } else {
            mean
        };
    }
    Ok(z)
}

/// Decoded synthetic patches of class `label`, deterministic in `seed`.
pub fn sample_synthetic(checkpoint: &GeneratorCheckpoint, label: Label, count: usize, seed: u64) -> Result<Vec<RgbImage>> {
    ensure!(
        checkpoint.conditional,
        "checkpoint is unconditional; fine-tune it before sampling a class"
    );
    if count == 0 {
        return Ok(Vec::new());
    }
    let schedule = checkpoint.schedule()?;
    let codec = checkpoint.codec()?;
    let denoiser = checkpoint.denoiser()?;
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(count);
    let mut left = count;
    while left > 0 {
        let n = left.min(SAMPLE_BATCH);
        let z = sample_latents(&denoiser, &schedule, codec.latent_shape(), label.into(), n, &mut rng)?;
        out.extend(tensor_to_images(&codec.decode_latents(&z)?)?);
        left -= n;
    }
    Ok(out)
}
