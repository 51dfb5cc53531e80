use candle_core::Tensor;

use crate::error::{ensure, Result};

/// Linear DDPM variance schedule. Steps are 1-based: `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn build_noise_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    ensure!(steps >= 1, "diffusion needs at least one step");
    ensure!(
        beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
        "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
    );
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut running = 1.0;
    for b in &betas {
        running *= 1.0 - b;
        alpha_bars.push(running);
    }
    Ok(NoiseSchedule {
        beta_start,
        beta_end,
        betas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        ensure!(
            (1..=self.steps()).contains(&t),
            "diffusion step {t} outside [1, {}]",
            self.steps()
        );
        Ok(())
    }
}

/// Closed-form `q(x_t | x_0)` draw: `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_diffuse(x0: &Tensor, t: usize, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    schedule.check_step(t)?;
    ensure!(
        x0.dims() == eps.dims(),
        "noise shape {:?} differs from latent shape {:?}",
        eps.dims(),
        x0.dims()
    );
    let ab = schedule.alpha_bar(t);
    Ok(((x0 * ab.sqrt())? + (eps * (1.0 - ab).sqrt())?)?)
}

/// Per-sample version for a batch with one step index per leading-axis row.
pub fn forward_diffuse_batch(x0: &Tensor, ts: &[usize], eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    ensure!(x0.dims() == eps.dims(), "noise shape differs from latent shape");
    ensure!(x0.dim(0)? == ts.len(), "one step index per batch element");
    let mut a = Vec::with_capacity(ts.len());
    let mut s = Vec::with_capacity(ts.len());
    for &t in ts {
        schedule.check_step(t)?;
        a.push(schedule.alpha_bar(t).sqrt() as f32);
        s.push((1.0 - schedule.alpha_bar(t)).sqrt() as f32);
    }
    let mut shape = vec![ts.len()];
    shape.extend(std::iter::repeat_n(1, x0.rank() - 1));
    let a = Tensor::from_vec(a, shape.as_slice(), x0.device())?.to_dtype(x0.dtype())?;
    let s = Tensor::from_vec(s, shape.as_slice(), x0.device())?.to_dtype(x0.dtype())?;
    Ok((x0.broadcast_mul(&a)? + eps.broadcast_mul(&s)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DEVICE;

    #[test]
    fn single_step() {
        let s = build_noise_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn canonical_terminal_alpha_bar() {
        let s = build_noise_schedule(1000, 1e-4, 0.02).unwrap();
        // Direct product, independent of the running accumulation.
        let direct: f64 = (0..1000)
            .map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0))
            .product();
        let last = s.alpha_bar(1000);
        assert!(((last - direct) / direct).abs() < 1e-12);
        assert!((last - 4.0e-5).abs() < 0.1e-5, "alpha_bar[1000] = {last:e}");
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters() {
        assert!(build_noise_schedule(0, 1e-4, 0.02).is_err());
        assert!(build_noise_schedule(10, 0.0, 0.02).is_err());
        assert!(build_noise_schedule(10, 0.03, 0.02).is_err());
        assert!(build_noise_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn closed_form_cases() {
        let x0 = Tensor::new(&[1.0f64, -2.0, 0.5], &DEVICE).unwrap();
        let eps = Tensor::new(&[0.3f64, 0.1, -1.2], &DEVICE).unwrap();

        let tiny = build_noise_schedule(3, 1e-300, 1e-300).unwrap();
        assert_eq!(tiny.alpha_bar(3), 1.0);
        let xt = forward_diffuse(&x0, 3, &eps, &tiny).unwrap();
        assert_eq!(xt.to_vec1::<f64>().unwrap(), x0.to_vec1::<f64>().unwrap());

        let s = build_noise_schedule(50, 1e-4, 0.02).unwrap();
        let zero = x0.zeros_like().unwrap();
        let xt = forward_diffuse(&zero, 20, &eps, &s).unwrap().to_vec1::<f64>().unwrap();
        let k = (1.0 - s.alpha_bar(20)).sqrt();
        for (a, e) in xt.iter().zip(eps.to_vec1::<f64>().unwrap()) {
            assert!((a - k * e).abs() < 1e-15);
        }
        assert!(forward_diffuse(&x0, 0, &eps, &s).is_err());
        assert!(forward_diffuse(&x0, 51, &eps, &s).is_err());
    }
}
