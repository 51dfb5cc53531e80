use candle_core::{DType, Tensor};

use super::vae::LatentShape;
use crate::dataset::Label;
use crate::error::{ensure, Result};
use crate::nn::{self, silu, Embedding, LayerNorm, Linear, Mlp, ParamStore, TransformerBlock, WeightSet};

/// Class condition of one denoiser call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Normal,
    Atypical,
    Unconditional,
}

impl Condition {
    pub fn index(&self) -> u32 {
        match self {
            Self::Normal => 0,
            Self::Atypical => 1,
            Self::Unconditional => 2,
        }
    }
}

impl From<Label> for Condition {
    fn from(l: Label) -> Self {
        match l {
            Label::Normal => Self::Normal,
            Label::Atypical => Self::Atypical,
        }
    }
}

/// Anything that predicts the noise component of a noised latent batch.
pub trait NoisePredictor {
    /// `z_t`: `(batch, C, S, S)`; one step and one condition per batch row.
    fn predict_noise(&self, z_t: &Tensor, t: &[usize], cond: &[Condition]) -> Result<Tensor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
}

impl DenoiserConfig {
    pub fn validate(&self, latent: LatentShape) -> Result<()> {
        ensure!(self.patch > 0 && latent.side % self.patch == 0, "denoiser patch {} must divide latent side {}", self.patch, latent.side);
        ensure!(self.depth > 0, "denoiser depth must be positive");
        ensure!(
            self.dim > 0 && self.heads > 0 && self.dim % self.heads == 0 && self.dim % 2 == 0,
            "denoiser width {} must be even and divisible by {} heads",
            self.dim,
            self.heads
        );
        Ok(())
    }
}

/// Sinusoidal embedding of step indices, `(len, dim)`.
pub fn timestep_embedding(t: &[usize], dim: usize) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        let (mut sin, mut cos) = (Vec::with_capacity(half), Vec::with_capacity(half));
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let a = step as f64 * freq;
            sin.push(a.sin() as f32);
            cos.push(a.cos() as f32);
        }
        data.extend(sin);
        data.extend(cos);
    }
    Ok(Tensor::from_vec(data, (t.len(), dim), &nn::DEVICE)?)
}

struct CondBlock {
    cond_proj: Linear,
    block: TransformerBlock,
}

/// Transformer denoiser over `patch x patch` latent tokens. The timestep
/// embedding plus a learned class embedding is projected into every block.
pub struct Denoiser {
    params: ParamStore,
    pub latent: LatentShape,
    pub config: DenoiserConfig,
    embed: Linear,
    pos: Tensor,
    time_mlp: Mlp,
    class_embed: Embedding,
    blocks: Vec<CondBlock>,
    norm: LayerNorm,
    out: Linear,
}

impl Denoiser {
    pub fn new(latent: LatentShape, config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate(latent)?;
        let mut p = ParamStore::new(seed);
        let d = config.dim;
        let token = latent.channels * config.patch * config.patch;
        let n = (latent.side / config.patch).pow(2);
        let embed = Linear::new(&mut p, "embed", token, d)?;
        let pos = p.normal("pos", &[1, n, d], 0.02)?;
        let time_mlp = Mlp::new(&mut p, "time_mlp", d, d, d)?;
        let class_embed = Embedding::new(&mut p, "class_embed", 3, d)?;
        let blocks = (0..config.depth)
            .map(|i| {
                p.scoped(&format!("block{i}"), |p| {
                    Ok(CondBlock {
                        cond_proj: Linear::new(p, "cond_proj", d, d)?,
                        block: TransformerBlock::new(p, "attn", d, config.heads, 2)?,
                    })
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(&mut p, "norm", d)?;
        let out = Linear::zeros(&mut p, "out", d, token)?;
        Ok(Self {
            params: p,
            latent,
            config,
            embed,
            pos,
            time_mlp,
            class_embed,
            blocks,
            norm,
            out,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn weights(&self) -> Result<WeightSet> {
        self.params.snapshot()
    }

    pub fn load_weights(&self, w: &WeightSet) -> Result<()> {
        self.params.load(w)
    }

    fn patchify(&self, z: &Tensor) -> Result<Tensor> {
        let (b, c, s, _) = z.dims4()?;
        let p = self.config.patch;
        let g = s / p;
        Ok(z.reshape((b, c, g, p, g, p))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((b, g * g, c * p * p))?)
    }

    fn unpatchify(&self, tokens: &Tensor) -> Result<Tensor> {
        let b = tokens.dim(0)?;
        let LatentShape { channels: c, side: s } = self.latent;
        let p = self.config.patch;
        let g = s / p;
        Ok(tokens
            .reshape((b, g, g, c, p, p))?
            .permute((0, 3, 1, 4, 2, 5))?
            .contiguous()?
            .reshape((b, c, s, s))?)
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, z_t: &Tensor, t: &[usize], cond: &[Condition]) -> Result<Tensor> {
        let (b, c, h, w) = z_t.dims4()?;
        ensure!(
            c == self.latent.channels && h == self.latent.side && w == self.latent.side,
            "latent shape mismatch: denoiser takes {}x{s}x{s}, got {c}x{h}x{w}",
            self.latent.channels,
            s = self.latent.side
        );
        ensure!(t.len() == b && cond.len() == b, "one step and condition per batch element");
        let z = z_t.to_dtype(DType::F32)?;
        let mut x = self.embed.forward(&self.patchify(&z)?)?.broadcast_add(&self.pos)?;
        let temb = self.time_mlp.forward(&timestep_embedding(t, self.config.dim)?)?;
        let ids: Vec<u32> = cond.iter().map(Condition::index).collect();
        let c = silu(&(temb + self.class_embed.forward(&ids)?)?)?;
        for blk in &self.blocks {
            let shift = blk.cond_proj.forward(&c)?.unsqueeze(1)?;
            x = blk.block.forward(&x.broadcast_add(&shift)?)?;
        }
        let tokens = self.out.forward(&self.norm.forward(&x)?)?;
        Ok(self.unpatchify(&tokens)?.to_dtype(z_t.dtype())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Denoiser {
        Denoiser::new(
            LatentShape { channels: 2, side: 8 },
            DenoiserConfig { patch: 2, dim: 16, depth: 2, heads: 4 },
            3,
        )
        .unwrap()
    }

    #[test]
    fn output_shape_and_zero_init() {
        let d = small();
        let z = Tensor::randn(0f32, 1.0, (3, 2, 8, 8), &nn::DEVICE).unwrap();
        let conds = [Condition::Normal, Condition::Atypical, Condition::Unconditional];
        let eps = d.predict_noise(&z, &[1, 5, 50], &conds).unwrap();
        assert_eq!(eps.dims(), z.dims());
        assert_eq!(eps.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
    }

    #[test]
    fn patchify_round_trip() {
        let d = small();
        let z = Tensor::arange(0f32, 256.0, &nn::DEVICE).unwrap().reshape((2, 2, 8, 8)).unwrap();
        let back = d.unpatchify(&d.patchify(&z).unwrap()).unwrap();
        assert_eq!(
            back.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            z.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn rejects_wrong_latent() {
        let d = small();
        let z = Tensor::zeros((1, 4, 8, 8), DType::F32, &nn::DEVICE).unwrap();
        assert!(d.predict_noise(&z, &[1], &[Condition::Unconditional]).is_err());
        let z = Tensor::zeros((2, 2, 8, 8), DType::F32, &nn::DEVICE).unwrap();
        assert!(d.predict_noise(&z, &[1], &[Condition::Unconditional]).is_err());
    }

    #[test]
    fn embedding_distinguishes_steps() {
        let e = timestep_embedding(&[0, 1, 2], 8).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(&e[0][..4], &[0.0; 4]);
        assert_eq!(&e[0][4..], &[1.0; 4]);
        assert_ne!(e[1], e[2]);
    }
}
