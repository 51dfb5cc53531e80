use candle_core::backprop::GradStore;
use candle_core::Tensor;

use super::params::ParamStore;
use super::DEVICE;
use crate::error::{ensure, Result};

pub trait Optimizer {
    /// Applies one update to every parameter of `params` that received a gradient.
    fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()>;
}

struct Moments {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Moments {
    fn for_store(params: &ParamStore) -> Self {
        let sizes: Vec<usize> = params.vars().iter().map(|(_, v)| v.elem_count()).collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Gradients and values of one parameter as flat vectors.
fn flat(grads: &GradStore, var: &candle_core::Var) -> Result<Option<(Vec<f32>, Vec<f32>)>> {
    let Some(g) = grads.get(var.as_tensor()) else {
        return Ok(None);
    };
    let g = g.flatten_all()?.to_vec1::<f32>()?;
    let p = var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
    Ok(Some((g, p)))
}

fn write_back(var: &candle_core::Var, data: Vec<f32>) -> Result<()> {
    let shape = var.dims().to_vec();
    var.set(&Tensor::from_vec(data, shape, &DEVICE)?)?;
    Ok(())
}

/// Adam with decoupled weight decay.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    state: Option<Moments>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            t: 0,
            state: None,
        }
    }
}

impl Optimizer for AdamW {
    fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        let state = self.state.get_or_insert_with(|| Moments::for_store(params));
        ensure!(state.m.len() == params.vars().len(), "optimizer bound to a different model");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, var)) in params.vars().iter().enumerate() {
            let Some((g, mut p)) = flat(grads, var)? else {
                continue;
            };
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            for j in 0..p.len() {
                let gj = g[j] as f64;
                let mj = self.beta1 * m[j] as f64 + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * v[j] as f64 + (1.0 - self.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let mut pj = p[j] as f64 * (1.0 - lr * self.weight_decay);
                pj -= lr * (mj / bc1) / ((vj / bc2).sqrt() + self.eps);
                p[j] = pj as f32;
            }
            write_back(var, p)?;
        }
        Ok(())
    }
}

/// Adam with Nesterov momentum and the momentum-decay warmup schedule
/// `mu_t = beta1 * (1 - 0.5 * 0.96^(t * momentum_decay))`.
pub struct NAdam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum_decay: f64,
    t: u64,
    mu_product: f64,
    state: Option<Moments>,
}

impl Default for NAdam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum_decay: 4e-3,
            t: 0,
            mu_product: 1.0,
            state: None,
        }
    }
}

impl NAdam {
    fn mu(&self, t: u64) -> f64 {
        self.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.momentum_decay))
    }
}

impl Optimizer for NAdam {
    fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        if self.state.is_none() {
            self.state = Some(Moments::for_store(params));
        }
        self.t += 1;
        let mu = self.mu(self.t);
        let mu_next = self.mu(self.t + 1);
        self.mu_product *= mu;
        let grad_coef = lr * (1.0 - mu) / (1.0 - self.mu_product);
        let mom_coef = lr * mu_next / (1.0 - self.mu_product * mu_next);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let state = self.state.as_mut().unwrap();
        ensure!(state.m.len() == params.vars().len(), "optimizer bound to a different model");
        for (i, (_, var)) in params.vars().iter().enumerate() {
            let Some((g, mut p)) = flat(grads, var)? else {
                continue;
            };
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            for j in 0..p.len() {
                let gj = g[j] as f64;
                let mj = self.beta1 * m[j] as f64 + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * v[j] as f64 + (1.0 - self.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let denom = (vj / bc2).sqrt() + self.eps;
                p[j] = (p[j] as f64 - grad_coef * gj / denom - mom_coef * mj / denom) as f32;
            }
            write_back(var, p)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar NAdam written out step by step, used as the reference.
    fn nadam_reference(mut p: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps, psi) = (0.9, 0.999, 1e-8, 4e-3);
        let (mut m, mut v, mut prod) = (0.0, 0.0, 1.0);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as f64;
            let mu_t = b1 * (1.0 - 0.5 * 0.96f64.powf(t * psi));
            let mu_t1 = b1 * (1.0 - 0.5 * 0.96f64.powf((t + 1.0) * psi));
            prod *= mu_t;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = mu_t1 * m / (1.0 - prod * mu_t1) + (1.0 - mu_t) * g / (1.0 - prod);
            let v_hat = v / (1.0 - b2.powf(t));
            p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p
    }

    fn run<O: Optimizer>(opt: &mut O, x0: f32, steps: usize, lr: f64) -> (f32, Vec<f64>) {
        // loss = (x - 3)^2 per element, gradient 2(x - 3)
        let mut p = ParamStore::new(0);
        let x = p.constant("x", &[1], x0).unwrap();
        let mut seen = Vec::new();
        for _ in 0..steps {
            let cur = x.to_vec1::<f32>().unwrap()[0] as f64;
            seen.push(2.0 * (cur - 3.0));
            let loss = (&x - 3.0).unwrap().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&p, &grads, lr).unwrap();
        }
        (x.to_vec1::<f32>().unwrap()[0], seen)
    }

    #[test]
    fn nadam_matches_scalar_reference() {
        let (x, grads) = run(&mut NAdam::default(), 0.0, 20, 0.05);
        let expected = nadam_reference(0.0, &grads, 0.05);
        assert!((x as f64 - expected).abs() < 1e-5, "{x} vs {expected}");
    }

    #[test]
    fn optimizers_descend() {
        let (x, _) = run(&mut NAdam::default(), 0.0, 300, 0.05);
        assert!((x - 3.0).abs() < 0.1, "nadam ended at {x}");
        let (x, _) = run(&mut AdamW::default(), 0.0, 300, 0.05);
        assert!((x - 3.0).abs() < 0.1, "adamw ended at {x}");
    }
}
