use std::hash::Hasher;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::autodiff::{Grads, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    tensors: Vec<Tensor>,
    names: Vec<String>,
}

impl Params {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.tensors.push(tensor);
        self.names.push(name.to_string());
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform in ±scale/√fan_in, fan_in being the row count.
    pub fn add_uniform(&mut self, name: &str, shape: (usize, usize), scale: f64, rng: &mut impl Rng) -> ParamId {
        let bound = scale / (shape.0.max(1) as f64).sqrt();
        let t = Array2::from_shape_fn(shape, |_| rng.gen_range(-bound..bound));
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: &str, shape: (usize, usize)) -> ParamId {
        self.add(name, Array2::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Params { tensors, names }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Bit-level fingerprint of all values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for t in &self.tensors {
            h.write_usize(t.nrows());
            h.write_usize(t.ncols());
            for v in t.iter() {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(params: &Params, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
        Adam { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One step on the parameters that have gradients; `frozen` ids are skipped.
    pub fn step(&mut self, params: &mut Params, grads: &Grads, frozen: &[ParamId]) {
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (i, g) in grads.0.iter().enumerate() {
            let Some(g) = g else { continue };
            if frozen.contains(&ParamId(i)) {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.get_mut(ParamId(i));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            });
        }
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
