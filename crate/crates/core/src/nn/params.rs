use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use super::DEVICE;
use crate::error::{ensure, Error, Result};
use crate::seed;

/// A named, shaped block of `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Detached copy of a model's parameters, keyed by name.
pub type WeightSet = BTreeMap<String, TensorData>;

/// Trainable parameters of one model, in creation order.
///
/// Initial values come from a ChaCha stream seeded at construction, so a
/// model built twice from the same seed is bit-identical.
pub struct ParamStore {
    rng: seed::Rng,
    vars: Vec<(String, Var)>,
    prefix: Vec<String>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: seed::rng(seed),
            vars: Vec::new(),
            prefix: Vec::new(),
        }
    }

    /// Runs `f` with `name` pushed onto the parameter-name prefix.
    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    fn add(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let full = self.full_name(name);
        ensure!(
            self.vars.iter().all(|(n, _)| *n != full),
            "parameter {full} defined twice"
        );
        let var = Var::from_vec(data, shape, &DEVICE)?;
        let t = var.as_tensor().clone();
        self.vars.push((full, var));
        Ok(t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f32) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| std * self.rng.sample::<f32, _>(StandardNormal))
            .collect();
        self.add(name, shape, data)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f32) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.add(name, shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        let n = shape.iter().product();
        self.add(name, shape, vec![value; n])
    }

    pub fn vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn num_params(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn snapshot(&self) -> Result<WeightSet> {
        let mut out = WeightSet::new();
        for (name, var) in &self.vars {
            let t = var.as_tensor();
            out.insert(
                name.clone(),
                TensorData {
                    shape: t.dims().to_vec(),
                    data: t.flatten_all()?.to_vec1::<f32>()?,
                },
            );
        }
        Ok(out)
    }

    /// Overwrites every parameter from `weights`. Names and shapes must match exactly.
    pub fn load(&self, weights: &WeightSet) -> Result<()> {
        ensure!(
            weights.len() == self.vars.len(),
            "weight set has {} tensors, model has {}",
            weights.len(),
            self.vars.len()
        );
        for (name, var) in &self.vars {
            let w = weights
                .get(name)
                .ok_or_else(|| Error::invalid(format!("weights missing tensor {name}")))?;
            ensure!(
                w.shape.as_slice() == var.dims(),
                "tensor {name}: shape {:?} does not match model shape {:?}",
                w.shape,
                var.dims()
            );
            var.set(&Tensor::from_vec(w.data.clone(), w.shape.as_slice(), &DEVICE)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_and_round_trip() {
        let build = |seed| {
            let mut p = ParamStore::new(seed);
            p.scoped("layer", |p| p.normal("w", &[3, 4], 0.1)).unwrap();
            p.constant("b", &[4], 0.0).unwrap();
            p
        };
        let a = build(1).snapshot().unwrap();
        assert_eq!(a, build(1).snapshot().unwrap());
        assert_ne!(a, build(2).snapshot().unwrap());
        assert!(a.contains_key("layer.w"));

        let other = build(2);
        other.load(&a).unwrap();
        assert_eq!(other.snapshot().unwrap(), a);

        let mut bad = a.clone();
        bad.get_mut("b").unwrap().shape = vec![2, 2];
        assert!(other.load(&bad).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamStore::new(0);
        p.constant("w", &[1], 0.0).unwrap();
        assert!(p.constant("w", &[1], 0.0).is_err());
    }
}
