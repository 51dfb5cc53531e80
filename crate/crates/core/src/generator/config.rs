use sha2::{Digest, Sha256};

use super::denoiser::DenoiserConfig;
use super::schedule::{build_noise_schedule, NoiseSchedule};
use super::vae::LatentShape;
use crate::error::{ensure, Result};
use crate::kv::KeyValues;

/// Epoch budget and optimizer settings of one training stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageBudget {
    pub vae_epochs: usize,
    pub ddpm_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub latent: LatentShape,
    pub vae_hidden: usize,
    pub kl_weight: f64,
    pub denoiser: DenoiserConfig,
    pub pretrain: StageBudget,
    pub finetune: StageBudget,
}

pub const GEN_KEYS: &[&str] = &[
    "schedule.steps",
    "schedule.beta_start",
    "schedule.beta_end",
    "latent.channels",
    "latent.side",
    "vae.hidden",
    "vae.kl_weight",
    "denoiser.patch",
    "denoiser.dim",
    "denoiser.depth",
    "denoiser.heads",
    "pretrain.vae_epochs",
    "pretrain.ddpm_epochs",
    "pretrain.batch_size",
    "pretrain.lr",
    "finetune.vae_epochs",
    "finetune.ddpm_epochs",
    "finetune.batch_size",
    "finetune.lr",
];

impl GenConfig {
    /// Full-scale settings: 1000 linear steps, 16x16x4 latents, 1000
    /// pretraining epochs at batch 32, fine-tuning the VAE for 2000 and the
    /// denoiser for 5000 epochs at batch 8, learning rate 1e-4 throughout.
    pub fn full() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            latent: LatentShape { channels: 4, side: 16 },
            vae_hidden: 256,
            kl_weight: 1e-4,
            denoiser: DenoiserConfig { patch: 2, dim: 256, depth: 6, heads: 8 },
            pretrain: StageBudget { vae_epochs: 1000, ddpm_epochs: 1000, batch_size: 32, lr: 1e-4 },
            finetune: StageBudget { vae_epochs: 2000, ddpm_epochs: 5000, batch_size: 8, lr: 1e-4 },
        }
    }

    /// CPU-sized profile. 50 steps with betas 0.002 to 0.35 end at roughly the
    /// same terminal signal level as the full 1000-step schedule.
    pub fn tiny() -> Self {
        Self {
            steps: 50,
            beta_start: 2e-3,
            beta_end: 0.35,
            latent: LatentShape { channels: 2, side: 8 },
            vae_hidden: 64,
            kl_weight: 1e-4,
            denoiser: DenoiserConfig { patch: 2, dim: 32, depth: 2, heads: 4 },
            pretrain: StageBudget { vae_epochs: 10, ddpm_epochs: 20, batch_size: 16, lr: 1e-3 },
            finetune: StageBudget { vae_epochs: 5, ddpm_epochs: 20, batch_size: 16, lr: 1e-3 },
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(crate::Error::invalid(format!("unknown generator profile {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.denoiser.validate(self.latent)?;
        ensure!(self.vae_hidden > 0, "vae.hidden must be positive");
        ensure!(self.kl_weight >= 0.0 && self.kl_weight.is_finite(), "vae.kl_weight must be >= 0");
        for (name, s) in [("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            ensure!(s.vae_epochs > 0 && s.ddpm_epochs > 0, "{name} epoch counts must be positive");
            ensure!(s.batch_size > 0, "{name}.batch_size must be positive");
            ensure!(s.lr > 0.0 && s.lr.is_finite(), "{name}.lr must be positive");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        build_noise_schedule(self.steps, self.beta_start, self.beta_end)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("schedule.steps", self.steps);
        kv.set("schedule.beta_start", self.beta_start);
        kv.set("schedule.beta_end", self.beta_end);
        kv.set("latent.channels", self.latent.channels);
        kv.set("latent.side", self.latent.side);
        kv.set("vae.hidden", self.vae_hidden);
        kv.set("vae.kl_weight", self.kl_weight);
        kv.set("denoiser.patch", self.denoiser.patch);
        kv.set("denoiser.dim", self.denoiser.dim);
        kv.set("denoiser.depth", self.denoiser.depth);
        kv.set("denoiser.heads", self.denoiser.heads);
        for (name, s) in [("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            kv.set(&format!("{name}.vae_epochs"), s.vae_epochs);
            kv.set(&format!("{name}.ddpm_epochs"), s.ddpm_epochs);
            kv.set(&format!("{name}.batch_size"), s.batch_size);
            kv.set(&format!("{name}.lr"), s.lr);
        }
        kv
    }

    /// Overrides `base` with whatever keys `kv` sets.
    pub fn from_kv(kv: &KeyValues, base: &GenConfig) -> Result<Self> {
        kv.check_known(GEN_KEYS)?;
        let stage = |name: &str, b: &StageBudget| -> Result<StageBudget> {
            Ok(StageBudget {
                vae_epochs: kv.get_or(&format!("{name}.vae_epochs"), b.vae_epochs)?,
                ddpm_epochs: kv.get_or(&format!("{name}.ddpm_epochs"), b.ddpm_epochs)?,
                batch_size: kv.get_or(&format!("{name}.batch_size"), b.batch_size)?,
                lr: kv.get_or(&format!("{name}.lr"), b.lr)?,
            })
        };
        let cfg = Self {
            steps: kv.get_or("schedule.steps", base.steps)?,
            beta_start: kv.get_or("schedule.beta_start", base.beta_start)?,
            beta_end: kv.get_or("schedule.beta_end", base.beta_end)?,
            latent: LatentShape {
                channels: kv.get_or("latent.channels", base.latent.channels)?,
                side: kv.get_or("latent.side", base.latent.side)?,
            },
            vae_hidden: kv.get_or("vae.hidden", base.vae_hidden)?,
            kl_weight: kv.get_or("vae.kl_weight", base.kl_weight)?,
            denoiser: DenoiserConfig {
                patch: kv.get_or("denoiser.patch", base.denoiser.patch)?,
                dim: kv.get_or("denoiser.dim", base.denoiser.dim)?,
                depth: kv.get_or("denoiser.depth", base.denoiser.depth)?,
                heads: kv.get_or("denoiser.heads", base.denoiser.heads)?,
            },
            pretrain: stage("pretrain", &base.pretrain)?,
            finetune: stage("finetune", &base.finetune)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// True when both configs build networks and schedules of identical shape.
    pub fn architecture_matches(&self, other: &GenConfig) -> bool {
        self.steps == other.steps
            && self.beta_start == other.beta_start
            && self.beta_end == other.beta_end
            && self.latent == other.latent
            && self.vae_hidden == other.vae_hidden
            && self.denoiser == other.denoiser
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.to_kv().render())
    }
}

/// Short SHA-256 digest of `text`.
pub fn fingerprint(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        for cfg in [GenConfig::full(), GenConfig::tiny()] {
            cfg.validate().unwrap();
            assert_eq!(GenConfig::from_kv(&cfg.to_kv(), &GenConfig::full()).unwrap(), cfg);
        }
        let kv = KeyValues::parse("pretrain.vae_epochs=3\n").unwrap();
        let cfg = GenConfig::from_kv(&kv, &GenConfig::tiny()).unwrap();
        assert_eq!(cfg.pretrain.vae_epochs, 3);
        assert_ne!(cfg.fingerprint(), GenConfig::tiny().fingerprint());
        assert!(GenConfig::from_kv(&KeyValues::parse("bogus=1").unwrap(), &cfg).is_err());
        assert!(GenConfig::from_kv(&KeyValues::parse("pretrain.batch_size=0").unwrap(), &cfg).is_err());
    }

    #[test]
    fn full_profile_values() {
        let c = GenConfig::full();
        assert_eq!((c.pretrain.vae_epochs, c.pretrain.batch_size, c.pretrain.lr), (1000, 32, 1e-4));
        assert_eq!((c.finetune.vae_epochs, c.finetune.ddpm_epochs, c.finetune.batch_size), (2000, 5000, 8));
    }

    #[test]
    fn tiny_terminal_noise_level() {
        let full = GenConfig::full().schedule().unwrap();
        let tiny = GenConfig::tiny().schedule().unwrap();
        let (a, b) = (full.alpha_bar(full.steps()), tiny.alpha_bar(tiny.steps()));
        assert!(b < 1e-4 && a < 1e-4, "terminal alpha_bar {a:e} / {b:e}");
    }
}
