use candle_core::Tensor;
use image::RgbImage;

use crate::error::{ensure, Error, Result};
use crate::imageio::PATCH_SIDE;
use crate::nn::{self, avg_pool, silu, upsample_nearest, Linear, ParamStore, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentShape {
    pub channels: usize,
    pub side: usize,
}

impl LatentShape {
    pub fn numel(&self) -> usize {
        self.channels * self.side * self.side
    }

    pub fn dims(&self, batch: usize) -> (usize, usize, usize, usize) {
        (batch, self.channels, self.side, self.side)
    }
}

/// Side of the square pixel patch that becomes one latent position.
const PATCH: usize = 4;

/// Patch-token VAE between 128x128 RGB patches and a `channels x side x side`
/// latent.
///
/// Input is average-pooled to `4 * side`, cut into 4x4 pixel patches, and
/// every patch is mapped to one latent position by a small MLP. The decoder
/// runs the mirror MLP and upsamples back to full resolution.
pub struct Vae {
    params: ParamStore,
    pub latent: LatentShape,
    pool: usize,
    enc: [Linear; 3],
    dec: [Linear; 3],
}

impl Vae {
    pub fn new(latent: LatentShape, hidden: usize, seed: u64) -> Result<Self> {
        let side = PATCH_SIDE as usize;
        ensure!(
            latent.side > 0 && side % latent.side == 0,
            "latent side {} must divide {side}",
            latent.side
        );
        let factor = side / latent.side;
        ensure!(
            factor >= PATCH && factor.is_power_of_two(),
            "latent downsampling factor {factor} must be a power of two >= {PATCH}"
        );
        ensure!(latent.channels > 0 && hidden > 0, "latent channels and hidden width must be positive");
        let mut p = ParamStore::new(seed);
        let token = 3 * PATCH * PATCH;
        let c = latent.channels;
        let enc = p.scoped("encoder", |p| {
            Ok([
                Linear::new(p, "fc1", token, hidden)?,
                Linear::new(p, "fc2", hidden, hidden)?,
                Linear::new(p, "out", hidden, 2 * c)?,
            ])
        })?;
        let dec = p.scoped("decoder", |p| {
            Ok([
                Linear::new(p, "fc1", c, hidden)?,
                Linear::new(p, "fc2", hidden, hidden)?,
                Linear::new(p, "out", hidden, token)?,
            ])
        })?;
        Ok(Self {
            params: p,
            latent,
            pool: factor / PATCH,
            enc,
            dec,
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

    /// Input at the resolution the decoder natively produces.
    pub fn pool_input(&self, x: &Tensor) -> Result<Tensor> {
        avg_pool(x, self.pool)
    }

    /// Posterior mean and log-variance for images in `[-1, 1]`, NCHW.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.encode_native(&self.pool_input(x)?)
    }

    /// [`Vae::encode`] on input already pooled with [`Vae::pool_input`].
    pub fn encode_native(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, ch, h, w) = x.dims4()?;
        ensure!(ch == 3 && h == PATCH * self.latent.side && w == h, "VAE input must be 3x128x128");
        let s = self.latent.side;
        let tokens = x
            .reshape((b, 3, s, PATCH, s, PATCH))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((b, s * s, 3 * PATCH * PATCH))?;
        let h = silu(&self.enc[0].forward(&tokens)?)?;
        let h = silu(&self.enc[1].forward(&h)?)?;
        let out = self.enc[2]
            .forward(&h)?
            .reshape((b, s, s, 2 * self.latent.channels))?
            .permute((0, 3, 1, 2))?
            .contiguous()?;
        let c = self.latent.channels;
        Ok((out.narrow(1, 0, c)?, out.narrow(1, c, c)?))
    }

    /// Reconstruction at `4 * side` resolution, before the final upsampling.
    pub fn decode_native(&self, z: &Tensor) -> Result<Tensor> {
        let (b, c, s, _) = z.dims4()?;
        ensure!(
            c == self.latent.channels && s == self.latent.side,
            "latent shape mismatch: VAE takes {}x{s2}x{s2}, got {c}x{s}x{s}",
            self.latent.channels,
            s2 = self.latent.side
        );
        let tokens = z.permute((0, 2, 3, 1))?.contiguous()?.reshape((b, s * s, c))?;
        let h = silu(&self.dec[0].forward(&tokens)?)?;
        let h = silu(&self.dec[1].forward(&h)?)?;
        Ok(self.dec[2]
            .forward(&h)?
            .tanh()?
            .reshape((b, s, s, 3, PATCH, PATCH))?
            .permute((0, 3, 1, 4, 2, 5))?
            .contiguous()?
            .reshape((b, 3, s * PATCH, s * PATCH))?)
    }

    /// Images in `[-1, 1]`, NCHW at full patch resolution.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        upsample_nearest(&self.decode_native(z)?, self.pool)
    }
}

/// Reconstruction MSE (mean over pixels) plus `kl_weight` times the KL
/// divergence of `N(mu, exp(logvar))` from `N(0, I)`, summed over latent
/// dimensions and averaged over the batch:
/// `KL = sum 0.5 * (mu^2 + exp(logvar) - logvar - 1)`.
pub fn vae_loss(x: &Tensor, recon: &Tensor, mu: &Tensor, logvar: &Tensor, kl_weight: f64) -> Result<Tensor> {
    ensure!(x.dims() == recon.dims(), "reconstruction shape {:?} != input shape {:?}", recon.dims(), x.dims());
    ensure!(mu.dims() == logvar.dims(), "mu and logvar shapes differ");
    ensure!(kl_weight >= 0.0 && kl_weight.is_finite(), "kl_weight must be finite and >= 0");
    let batch = mu.dim(0)? as f64;
    let mse = (x - recon)?.sqr()?.mean_all()?;
    let kl_terms = ((mu.sqr()? + logvar.exp()?)? - logvar)?.affine(0.5, -0.5)?;
    let kl = (kl_terms.sum_all()? / batch)?;
    let loss = (mse + (kl * kl_weight)?)?;
    let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::invalid("VAE loss is not finite"));
    }
    Ok(loss)
}

/// NCHW batch in `[-1, 1]`.
pub fn images_to_tensor(images: &[&RgbImage]) -> Result<Tensor> {
    ensure!(!images.is_empty(), "empty image batch");
    let side = PATCH_SIDE as usize;
    let plane = side * side;
    let mut data = vec![0f32; images.len() * 3 * plane];
    for (i, img) in images.iter().enumerate() {
        ensure!(
            img.dimensions() == (PATCH_SIDE, PATCH_SIDE),
            "generator images must be {side}x{side}"
        );
        let base = i * 3 * plane;
        for (p, px) in img.as_raw().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[base + c * plane + p] = px[c] as f32 / 127.5 - 1.0;
            }
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, side, side), &nn::DEVICE)?)
}

/// Inverse of [`images_to_tensor`], rounding to the nearest level.
pub fn tensor_to_images(x: &Tensor) -> Result<Vec<RgbImage>> {
    let (b, c, h, w) = x.dims4()?;
    ensure!(c == 3, "expected 3 channels");
    let values = x.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let plane = h * w;
    Ok((0..b)
        .map(|i| {
            let base = i * 3 * plane;
            let mut raw = vec![0u8; 3 * plane];
            for p in 0..plane {
                for ch in 0..3 {
                    let v = (values[base + ch * plane + p] + 1.0) * 127.5;
                    raw[p * 3 + ch] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
                }
            }
            RgbImage::from_raw(w as u32, h as u32, raw).expect("sized buffer")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DEVICE;
    use candle_core::{DType, Var};

    #[test]
    fn shapes() {
        for (ls, ch) in [(8, 2), (16, 4)] {
            let vae = Vae::new(LatentShape { channels: ch, side: ls }, 4, 0).unwrap();
            let x = Tensor::zeros((2, 3, 128, 128), DType::F32, &DEVICE).unwrap();
            let (mu, logvar) = vae.encode(&x).unwrap();
            assert_eq!(mu.dims(), &[2, ch, ls, ls]);
            assert_eq!(logvar.dims(), &[2, ch, ls, ls]);
            assert_eq!(vae.decode(&mu).unwrap().dims(), &[2, 3, 128, 128]);
        }
        assert!(Vae::new(LatentShape { channels: 2, side: 64 }, 4, 0).is_err());
        assert!(Vae::new(LatentShape { channels: 2, side: 48 }, 4, 0).is_err());
        assert!(Vae::new(LatentShape { channels: 2, side: 0 }, 4, 0).is_err());
    }

    #[test]
    fn loss_closed_forms() {
        let x = Tensor::new(&[[0.1f64, -0.4], [0.9, 0.0]], &DEVICE).unwrap();
        let zeros = Tensor::zeros((2, 4), DType::F64, &DEVICE).unwrap();
        let l = vae_loss(&x, &x, &zeros, &zeros, 1.0).unwrap();
        assert_eq!(l.to_scalar::<f64>().unwrap(), 0.0);

        let ones = Tensor::ones((2, 4), DType::F64, &DEVICE).unwrap();
        let l = vae_loss(&x, &x, &ones, &zeros, 1.0).unwrap();
        // 0.5 per latent dimension, 4 dimensions per sample
        assert!((l.to_scalar::<f64>().unwrap() - 2.0).abs() < 1e-15);

        let nan = Tensor::new(&[[f64::NAN, 0.0], [0.0, 0.0]], &DEVICE).unwrap();
        assert!(vae_loss(&x, &nan, &zeros, &zeros, 1.0).is_err());
        assert!(vae_loss(&x, &zeros, &zeros, &zeros, 1.0).is_err());
    }

    #[test]
    fn gradient_wrt_mu_matches_finite_differences() {
        let x = Tensor::new(&[[0.2f64, -0.3, 0.5]], &DEVICE).unwrap();
        let recon = Tensor::new(&[[0.1f64, -0.1, 0.4]], &DEVICE).unwrap();
        let mu0 = vec![0.3f64, -1.2, 0.7, 0.05];
        let logvar = Tensor::new(&[[-0.5f64, 0.2, 0.0, 1.1]], &DEVICE).unwrap();
        let mu = Var::from_tensor(&Tensor::from_vec(mu0.clone(), (1, 4), &DEVICE).unwrap()).unwrap();
        let loss = vae_loss(&x, &recon, mu.as_tensor(), &logvar, 0.7).unwrap();
        let g = loss.backward().unwrap().get(mu.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let eval = |m: &[f64]| {
            let t = Tensor::from_vec(m.to_vec(), (1, 4), &DEVICE).unwrap();
            vae_loss(&x, &recon, &t, &logvar, 0.7).unwrap().to_scalar::<f64>().unwrap()
        };
        let h = 1e-6;
        for i in 0..mu0.len() {
            let mut up = mu0.clone();
            let mut dn = mu0.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            assert!(((fd - g[i]) / g[i]).abs() < 1e-4, "dim {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn image_tensor_round_trip() {
        let img = RgbImage::from_fn(128, 128, |x, y| image::Rgb([x as u8, y as u8, (x ^ y) as u8]));
        let t = images_to_tensor(&[&img]).unwrap();
        assert_eq!(tensor_to_images(&t).unwrap()[0], img);
    }
}
