//! Diagonal Gaussians, their mixtures, and the closed-form and Monte-Carlo
//! quantities the rest of the crate is built on.
//!
//! Everything here is a pure function over immutable values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, standard_normal};

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// `0.5 * ln(2 * pi * e)`, the entropy of a unit-variance 1-D normal.
pub const HALF_LN_2PIE: f64 = 1.418_938_533_204_672_7;

/// Monte-Carlo sample count used inside training losses.
pub const TRAIN_MC_SAMPLES: usize = 64;
/// Monte-Carlo sample count used for reported quantities.
pub const EVAL_MC_SAMPLES: usize = 4096;

/// Gaussian with diagonal covariance `diag(std^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: std.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::Empty("gaussian dimension"));
        }
        if let Some(s) = std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidValue(format!("std must be finite and > 0, got {s}")));
        }
        if let Some(m) = mean.iter().find(|m| !m.is_finite()) {
            return Err(Error::InvalidValue(format!("mean must be finite, got {m}")));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Isotropic convenience constructor.
    pub fn isotropic(mean: Vec<f64>, std: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, vec![std; d])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.log_prob_unchecked(x))
    }

    /// Same operation order as the mixture density, so a one-component
    /// mixture agrees bit for bit.
    fn log_prob_unchecked(&self, x: &[f64]) -> f64 {
        let norm = 0.0 - self.std.iter().map(|s| s.ln() + HALF_LN_2PI).sum::<f64>();
        let mut q = 0.0;
        for j in 0..x.len() {
            let z = (x[j] - self.mean[j]) * (1.0 / self.std[j]);
            q += z * z;
        }
        norm - 0.5 * q
    }

    /// `KL(self || other)` in closed form.
    pub fn kl(&self, other: &Self) -> Result<f64> {
        other.check_dim(self.dim())?;
        let kl: f64 = self
            .mean
            .iter()
            .zip(&self.std)
            .zip(other.mean.iter().zip(&other.std))
            .map(|((mp, sp), (mq, sq))| {
                let r = sp / sq;
                let dm = (mp - mq) / sq;
                0.5 * (r * r + dm * dm - 1.0) - r.ln()
            })
            .sum();
        Ok(kl.max(0.0))
    }

    /// Normalized product of the two densities (precision-weighted fusion).
    pub fn product(&self, other: &Self) -> Result<Self> {
        other.check_dim(self.dim())?;
        let mut mean = Vec::with_capacity(self.dim());
        let mut std = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let (m1, s1) = (self.mean[i], self.std[i]);
            let (m2, s2) = (other.mean[i], other.std[i]);
            let v1 = s1 * s1;
            let v2 = s2 * s2;
            mean.push((v1 * m2 + v2 * m1) / (v1 + v2));
            std.push((v1 * v2 / (v1 + v2)).sqrt());
        }
        Self::new(mean, std)
    }

    /// `mean + std * noise` for caller-supplied standard-normal noise.
    pub fn sample_with(&self, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(noise.len())?;
        Ok(self.reparam(noise))
    }

    fn reparam(&self, noise: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.reparam(&standard_normal(rng, self.dim()))
    }

    pub fn entropy(&self) -> f64 {
        self.std.iter().map(|s| HALF_LN_2PIE + s.ln()).sum()
    }

    /// Squared L2 distance between the concatenated `(mean, std)` vectors.
    pub fn moment_distance_sq(&self, other: &Self) -> f64 {
        let dm: f64 = self.mean.iter().zip(&other.mean).map(|(a, b)| (a - b).powi(2)).sum();
        let ds: f64 = self.std.iter().zip(&other.std).map(|(a, b)| (a - b).powi(2)).sum();
        dm + ds
    }
}

/// Finite weighted mixture of diagonal Gaussians sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    components: Vec<DiagGaussian>,
    weights: Vec<f64>,
    /// Per component: `ln w - sum ln std - d/2 ln 2pi`.
    log_consts: Vec<f64>,
    /// Row-major `K x d` reciprocal standard deviations.
    inv_std: Vec<f64>,
}

impl GaussianMixture {
    /// Validates and normalizes `weights` to sum to one.
    pub fn new(components: Vec<DiagGaussian>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("mixture components"));
        }
        if components.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidValue(format!("mixture weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidValue("mixture weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self::with_cache(components, weights))
    }

    fn with_cache(components: Vec<DiagGaussian>, weights: Vec<f64>) -> Self {
        let log_consts = components
            .iter()
            .zip(&weights)
            .map(|(c, w)| w.ln() - c.std.iter().map(|s| s.ln() + HALF_LN_2PI).sum::<f64>())
            .collect();
        let inv_std = components.iter().flat_map(|c| c.std.iter().map(|s| 1.0 / s)).collect();
        Self {
            components,
            weights,
            log_consts,
            inv_std,
        }
    }

    pub fn uniform(components: Vec<DiagGaussian>) -> Result<Self> {
        let n = components.len();
        Self::new(components, vec![1.0; n])
    }

    pub fn single(component: DiagGaussian) -> Self {
        Self::with_cache(vec![component], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.log_prob_unchecked(x))
    }

    fn log_prob_unchecked(&self, x: &[f64]) -> f64 {
        let d = x.len();
        // Streaming log-sum-exp over components.
        let (mut max, mut acc) = (f64::NEG_INFINITY, 0.0);
        for (k, c) in self.components.iter().enumerate() {
            let inv = &self.inv_std[k * d..(k + 1) * d];
            let mut q = 0.0;
            for j in 0..d {
                let z = (x[j] - c.mean[j]) * inv[j];
                q += z * z;
            }
            let t = self.log_consts[k] - 0.5 * q;
            if t == f64::NEG_INFINITY {
                continue;
            }
            if t > max {
                acc = acc * (max - t).exp() + 1.0;
                max = t;
            } else {
                acc += (t - max).exp();
            }
        }
        max + acc.ln()
    }

    /// Stratified draw: component counts follow the weights via systematic
    /// resampling, then each point is reparameterized from `noise` rows.
    fn sample_stratified(&self, noise: &[Vec<f64>], u: f64) -> Vec<Vec<f64>> {
        let idx = stratified_indices(&self.weights, noise.len(), u);
        idx.iter()
            .zip(noise)
            .map(|(&k, e)| self.components[k].reparam(e))
            .collect()
    }

    /// `n` stratified samples using `rng`.
    pub fn sample_n(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        let noise: Vec<Vec<f64>> = (0..n).map(|_| standard_normal(rng, self.dim())).collect();
        let u: f64 = rng.gen();
        self.sample_stratified(&noise, u)
    }
}

/// Systematic-resampling component indices for `n` draws at offset `u` in `[0, 1)`.
pub fn stratified_indices(weights: &[f64], n: usize, u: f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut k = 0;
    for j in 0..n {
        let pos = (j as f64 + u) / n as f64;
        while pos >= cum && k + 1 < weights.len() {
            k += 1;
            cum += weights[k];
        }
        out.push(k);
    }
    out
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn gauss_log_prob(g: &DiagGaussian, x: &[f64]) -> Result<f64> {
    g.log_prob(x)
}

pub fn gauss_kl(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    p.kl(q)
}

pub fn gauss_product(a: &DiagGaussian, b: &DiagGaussian) -> Result<DiagGaussian> {
    a.product(b)
}

pub fn gauss_sample(g: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    g.sample_with(noise)
}

pub fn gauss_entropy(g: &DiagGaussian) -> f64 {
    g.entropy()
}

pub fn mixture_log_prob(m: &GaussianMixture, x: &[f64]) -> Result<f64> {
    m.log_prob(x)
}

fn check_same_dim(p: &DiagGaussian, m: &GaussianMixture) -> Result<()> {
    if p.dim() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: p.dim(),
        });
    }
    Ok(())
}

/// Monte-Carlo `KL(p || m)` from `n_samples` reparameterized draws of `p`.
pub fn mc_kl_to_mixture(p: &DiagGaussian, m: &GaussianMixture, n_samples: usize, seed: u64) -> Result<f64> {
    check_same_dim(p, m)?;
    if n_samples == 0 {
        return Err(Error::InvalidValue("n_samples must be >= 1".into()));
    }
    let mut rng = rng_for(seed, &[]);
    let noise: Vec<Vec<f64>> = (0..n_samples).map(|_| standard_normal(&mut rng, p.dim())).collect();
    Ok(forward_kl_with(p, m, &noise))
}

fn forward_kl_with(p: &DiagGaussian, m: &GaussianMixture, noise: &[Vec<f64>]) -> f64 {
    let total: f64 = noise
        .iter()
        .map(|e| {
            let c = p.reparam(e);
            p.log_prob_unchecked(&c) - m.log_prob_unchecked(&c)
        })
        .sum();
    total / noise.len() as f64
}

/// Monte-Carlo `KL(p || m) + KL(m || p)`.
///
/// Both directions reuse the same standard-normal draws, so swapping the
/// roles of two single Gaussians gives the same value.
pub fn symmetric_kl(p: &DiagGaussian, m: &GaussianMixture, n_samples: usize, seed: u64) -> Result<f64> {
    check_same_dim(p, m)?;
    if n_samples == 0 {
        return Err(Error::InvalidValue("n_samples must be >= 1".into()));
    }
    let mut rng = rng_for(seed, &[]);
    let noise: Vec<Vec<f64>> = (0..n_samples).map(|_| standard_normal(&mut rng, p.dim())).collect();
    let u: f64 = rng.gen();
    let forward = forward_kl_with(p, m, &noise);
    let reverse: f64 = m
        .sample_stratified(&noise, u)
        .iter()
        .map(|c| m.log_prob_unchecked(c) - p.log_prob_unchecked(c))
        .sum::<f64>()
        / n_samples as f64;
    Ok(forward + reverse)
}
