use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// One named parameter with its gradient buffer and Adam moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    m: Matrix,
    v: Matrix,
}

impl Param {
    fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
        }
    }
}

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named trainable parameters, their gradients and optimizer state.
///
/// Iteration order is the lexicographic order of names, which keeps every
/// update sequence deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    pub fn value(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Matrix) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        if p.grad.shape() != g.shape() {
            return Err(Error::Shape {
                op: "accumulate_grad",
                detail: format!("{name}: {:?} vs {:?}", p.grad.shape(), g.shape()),
            });
        }
        p.grad.add_assign(g);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .map(|p| p.grad.frobenius_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            for p in self.params.values_mut() {
                p.grad.as_mut_slice().iter_mut().for_each(|g| *g *= s);
            }
        }
    }

    /// One Adam update over every parameter, then zeroes the gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.values_mut() {
            let Param { value, grad, m, v } = p;
            for i in 0..value.len() {
                let g = grad.as_slice()[i];
                let mi = cfg.beta1 * m.as_slice()[i] + (1.0 - cfg.beta1) * g;
                let vi = cfg.beta2 * v.as_slice()[i] + (1.0 - cfg.beta2) * g * g;
                m.as_mut_slice()[i] = mi;
                v.as_mut_slice()[i] = vi;
                let update = cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
                value.as_mut_slice()[i] -= update;
            }
            grad.fill(0.0);
            debug_assert!(value.all_finite(), "non-finite parameter after update");
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .values()
            .all(|p| p.value.all_finite() && p.grad.all_finite())
    }

    /// Copies values of every parameter under `from_prefix` onto the matching
    /// names under `to_prefix`. Optimizer moments of the targets are reset.
    pub fn copy_prefix(&mut self, from_prefix: &str, to_prefix: &str) -> Result<usize> {
        let pairs: Vec<(String, Matrix)> = self
            .params
            .iter()
            .filter_map(|(n, p)| {
                n.strip_prefix(from_prefix)
                    .map(|rest| (format!("{to_prefix}{rest}"), p.value.clone()))
            })
            .collect();
        for (name, value) in &pairs {
            let target = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("no target parameter `{name}`")))?;
            if target.value.shape() != value.shape() {
                return Err(Error::Shape {
                    op: "copy_prefix",
                    detail: name.clone(),
                });
            }
            *target = Param::new(value.clone());
        }
        Ok(pairs.len())
    }

    /// Order-sensitive fingerprint of every parameter value (FNV-1a over bits).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, p) in &self.params {
            for b in name.bytes() {
                h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
            }
            for x in p.value.as_slice() {
                for b in x.to_bits().to_le_bytes() {
                    h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}
