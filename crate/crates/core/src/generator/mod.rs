//! Class-conditional latent diffusion: a VAE codec, a linear noise schedule,
//! a transformer noise predictor, unconditional pretraining followed by
//! per-fold conditional fine-tuning, and synthetic pool construction.

mod config;
mod denoiser;
mod pool;
mod sample;
mod schedule;
mod train;
mod vae;

pub use config::{fingerprint, GenConfig, StageBudget, GEN_KEYS};
pub use denoiser::{timestep_embedding, Condition, Denoiser, DenoiserConfig, NoisePredictor};
pub use pool::{build_synth_pool, split_quota, SynthPoolSpec};
pub use sample::{sample_latents, sample_synthetic};
pub use schedule::{build_noise_schedule, forward_diffuse, forward_diffuse_batch, NoiseSchedule};
pub use train::{
    ddpm_latent_step, ddpm_training_step, encode_means, finetune_fold, finetune_generator, fit_denoiser, fit_vae,
    gaussian, latent_scale, pretrain_generator, reconstruction_error, GeneratorCheckpoint, LatentCodec, ScaledVae,
};
pub use vae::{images_to_tensor, tensor_to_images, vae_loss, LatentShape, Vae};
