//! Queue of prior components backed by trainable pseudo-trajectories.
//!
//! Each component stores an input-space pseudo-trajectory `U` and an
//! additive noise term `ε`; its density is the context posterior of
//! `U + ε` under the current encoder, so components follow the encoder as
//! it trains. The queue's mixture weights form a probability vector.

mod io;
mod kmeans;
mod prune;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{
    log_sum_exp, mc_kl_to_mixture, DiagGaussian, GaussianMixture, EVAL_MC_SAMPLES, TRAIN_MC_SAMPLES,
};
use crate::model::{EncoderKind, PriorInputs, TrajectoryBatch, TrajectoryModel};
use crate::nn::{Matrix, Tape};
use crate::rng::{normal_matrix, rng_for, standard_normal, tags};

pub use io::{load_queue, save_queue, QUEUE_SCHEMA_VERSION};
pub use kmeans::{kmeans, KMeansResult};
pub use prune::{prune_gaussians, prune_order_brute_force};

/// Default queue capacity.
pub const DEFAULT_CAPACITY: usize = 45;
/// Scale of the initial additive noise on a pseudo-trajectory.
pub const NOISE_SCALE: f64 = 0.01;
/// Inner steps and step size of component optimization.
pub const COMPONENT_STEPS: usize = 10;
pub const COMPONENT_LR: f64 = 1e-2;
/// Grid resolution of the weight search.
pub const WEIGHT_GRID: usize = 100;

const WEIGHT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorComponent {
    /// Flattened pseudo-trajectory displacements, `2(obs_len - 1)` values.
    pub pseudo: Vec<f64>,
    /// Additive trainable noise, same length as `pseudo`.
    pub noise: Vec<f64>,
    pub task_id: usize,
    pub creation_epoch: usize,
}

impl PriorComponent {
    /// Wraps a real trajectory with fresh `NOISE_SCALE`-scaled noise.
    pub fn from_trajectory(pseudo: Vec<f64>, task_id: usize, creation_epoch: usize, rng: &mut impl Rng) -> Self {
        let noise = standard_normal(rng, pseudo.len()).into_iter().map(|e| NOISE_SCALE * e).collect();
        Self {
            pseudo,
            noise,
            task_id,
            creation_epoch,
        }
    }

    /// The encoder input `U + ε`.
    pub fn input(&self) -> Vec<f64> {
        self.pseudo.iter().zip(&self.noise).map(|(u, e)| u + e).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pseudo.len() != self.noise.len() || self.pseudo.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.pseudo.len(),
                got: self.noise.len(),
            });
        }
        if self.pseudo.iter().chain(&self.noise).any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite pseudo-trajectory".into()));
        }
        if self.task_id < 1 {
            return Err(Error::InvalidValue("component task ids start at 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryQueue {
    components: Vec<PriorComponent>,
    weights: Vec<f64>,
    capacity: usize,
    /// Training agents per task, in task order.
    task_counts: Vec<usize>,
    /// Index of the most recently added component.
    newest: Option<usize>,
}

impl MemoryQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::InvalidValue("queue capacity must be >= 1".into()));
        }
        Ok(Self {
            components: Vec::new(),
            weights: Vec::new(),
            capacity,
            task_counts: Vec::new(),
            newest: None,
        })
    }

    pub(crate) fn from_parts(
        components: Vec<PriorComponent>,
        weights: Vec<f64>,
        capacity: usize,
        task_counts: Vec<usize>,
        newest: Option<usize>,
    ) -> Result<Self> {
        let q = Self {
            components,
            weights,
            capacity,
            task_counts,
            newest,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity < 1 {
            return Err(Error::InvalidValue("queue capacity must be >= 1".into()));
        }
        if self.components.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.components.len(),
                got: self.weights.len(),
            });
        }
        for c in &self.components {
            c.validate()?;
            if c.pseudo.len() != self.components[0].pseudo.len() {
                return Err(Error::InvalidValue("components have differing widths".into()));
            }
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidValue(format!("queue weight {w} is negative or non-finite")));
        }
        if !self.weights.is_empty() {
            let s: f64 = self.weights.iter().sum();
            if (s - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::InvalidValue(format!("queue weights sum to {s}")));
            }
        }
        if self.newest.is_some_and(|n| n >= self.components.len()) {
            return Err(Error::InvalidValue("newest index out of range".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn components(&self) -> &[PriorComponent] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn task_counts(&self) -> &[usize] {
        &self.task_counts
    }

    pub fn newest(&self) -> Option<usize> {
        self.newest
    }

    /// Marks which component the symmetric term pushes away from the rest.
    pub fn set_newest(&mut self, newest: Option<usize>) -> Result<()> {
        if newest.is_some_and(|n| n >= self.len()) {
            return Err(Error::InvalidValue("newest index out of range".into()));
        }
        self.newest = newest;
        Ok(())
    }

    /// Registers a new task with `train_agents` training agents.
    pub fn begin_task(&mut self, train_agents: usize) {
        self.task_counts.push(train_agents);
    }

    /// `|D≤K-1|`: agents of every task before the current one.
    pub fn history_count(&self) -> usize {
        let n = self.task_counts.len();
        self.task_counts[..n.saturating_sub(1)].iter().sum()
    }

    /// `|D^K|`: agents of the current task.
    pub fn current_count(&self) -> usize {
        self.task_counts.last().copied().unwrap_or(0)
    }

    /// Appends `c`, scaling existing weights by `alpha` and giving `c` weight
    /// `1 - alpha`. The first component always gets weight one.
    pub fn push(&mut self, c: PriorComponent, alpha: f64) -> Result<()> {
        c.validate()?;
        if let Some(first) = self.components.first() {
            if first.pseudo.len() != c.pseudo.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.pseudo.len(),
                    got: c.pseudo.len(),
                });
            }
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidValue(format!("alpha {alpha} outside [0, 1]")));
        }
        if self.components.is_empty() {
            self.weights.push(1.0);
        } else {
            self.weights.iter_mut().for_each(|w| *w *= alpha);
            self.weights.push(1.0 - alpha);
            normalize(&mut self.weights);
        }
        self.components.push(c);
        self.newest = Some(self.components.len() - 1);
        Ok(())
    }

    /// Removes component `i` and renormalizes the remaining weights proportionally.
    pub fn remove(&mut self, i: usize) -> Result<(PriorComponent, f64)> {
        if i >= self.components.len() {
            return Err(Error::InvalidValue(format!("component {i} out of range")));
        }
        let c = self.components.remove(i);
        let w = self.weights.remove(i);
        normalize(&mut self.weights);
        self.newest = match self.newest {
            Some(n) if n == i => None,
            Some(n) if n > i => Some(n - 1),
            other => other,
        };
        Ok((c, w))
    }

    /// Puts `c` back at position `i` with weight `w` (other weights scaled by `1 - w`).
    pub fn insert(&mut self, i: usize, c: PriorComponent, w: f64) -> Result<()> {
        c.validate()?;
        if i > self.components.len() || !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidValue("bad insert position or weight".into()));
        }
        if self.components.is_empty() {
            self.weights.push(1.0);
        } else {
            self.weights.iter_mut().for_each(|x| *x *= 1.0 - w);
            self.weights.insert(i, w);
            normalize(&mut self.weights);
        }
        self.components.insert(i, c);
        if let Some(n) = self.newest.as_mut() {
            if *n >= i {
                *n += 1;
            }
        }
        Ok(())
    }

    /// Pseudo inputs `U + ε`, one row per component.
    pub fn input_matrix(&self) -> Result<Matrix> {
        if self.is_empty() {
            return Err(Error::Empty("prior queue"));
        }
        Ok(Matrix::from_rows(&self.components.iter().map(PriorComponent::input).collect::<Vec<_>>()))
    }

    /// Loss-side view of the queue. `pseudo` must come from [`Self::input_matrix`].
    pub fn prior_inputs<'a>(&'a self, pseudo: &'a Matrix) -> PriorInputs<'a> {
        PriorInputs {
            pseudo,
            weights: &self.weights,
            newest: self.newest,
        }
    }

    /// Removes components until `len <= capacity`; returns removed components.
    pub fn prune(&mut self, model: &TrajectoryModel, store: &crate::nn::ParamStore) -> Result<Vec<PriorComponent>> {
        if self.len() <= self.capacity {
            return Ok(Vec::new());
        }
        let mix = materialize(self, model, store)?;
        let order = prune_gaussians(mix.components(), self.capacity);
        // Remove from the back so earlier indices stay valid.
        let mut sorted = order.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let mut removed = Vec::with_capacity(sorted.len());
        for i in sorted {
            removed.push(self.remove(i)?.0);
        }
        Ok(removed)
    }
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    } else if !w.is_empty() {
        let u = 1.0 / w.len() as f64;
        w.iter_mut().for_each(|x| *x = u);
    }
}

fn encode_rows(model: &TrajectoryModel, store: &crate::nn::ParamStore, inputs: &Matrix) -> Result<Vec<DiagGaussian>> {
    let (m, s) = model.encode_inputs(EncoderKind::Context, store, inputs, None)?;
    (0..m.rows())
        .map(|i| DiagGaussian::new(m.row(i).to_vec(), s.row(i).to_vec()))
        .collect()
}

/// Context posterior of one component under the current encoder.
pub fn component_posterior(
    c: &PriorComponent,
    model: &TrajectoryModel,
    store: &crate::nn::ParamStore,
) -> Result<DiagGaussian> {
    Ok(encode_rows(model, store, &Matrix::row_vector(c.input()))?.remove(0))
}

/// The queue as a mixture under the current context encoder.
pub fn materialize(queue: &MemoryQueue, model: &TrajectoryModel, store: &crate::nn::ParamStore) -> Result<GaussianMixture> {
    let inputs = queue.input_matrix()?;
    GaussianMixture::new(encode_rows(model, store, &inputs)?, queue.weights.clone())
}

/// Mixture of the stored components (total weight `|D≤K-1| / |D≤K|`, split
/// by queue weights) and the batch's context posteriors (total weight
/// `|D^K| / |D≤K|`, split uniformly). Either group may be absent.
pub fn aggregated_posterior_target(
    queue: &MemoryQueue,
    batch_posteriors: &[DiagGaussian],
    model: &TrajectoryModel,
    store: &crate::nn::ParamStore,
) -> Result<GaussianMixture> {
    let hist = queue.history_count() as f64;
    let cur = queue.current_count() as f64;
    let use_queue = !queue.is_empty() && (hist > 0.0 || batch_posteriors.is_empty());
    let use_batch = !batch_posteriors.is_empty();
    if !use_queue && !use_batch {
        return Err(Error::Empty("aggregated posterior target"));
    }
    let (wq, wb) = match (use_queue, use_batch) {
        (true, true) => (hist / (hist + cur), cur / (hist + cur)),
        (true, false) => (1.0, 0.0),
        _ => (0.0, 1.0),
    };
    let mut comps = Vec::new();
    let mut weights = Vec::new();
    if use_queue {
        let m = materialize(queue, model, store)?;
        for (c, w) in m.components().iter().zip(m.weights()) {
            comps.push(c.clone());
            weights.push(wq * w);
        }
    }
    if use_batch {
        let u = wb / batch_posteriors.len() as f64;
        for p in batch_posteriors {
            comps.push(p.clone());
            weights.push(u);
        }
    }
    GaussianMixture::new(comps, weights)
}

/// Index of the agent whose context posterior has the smallest Monte-Carlo
/// KL to `target`, with its KL values. All candidates share one noise seed.
pub fn select_online_candidate(posteriors: &[DiagGaussian], target: &GaussianMixture, seed: u64) -> Result<(usize, Vec<f64>)> {
    if posteriors.is_empty() {
        return Err(Error::Empty("candidate posteriors"));
    }
    let kls = posteriors
        .iter()
        .map(|p| mc_kl_to_mixture(p, target, TRAIN_MC_SAMPLES, seed))
        .collect::<Result<Vec<_>>>()?;
    // KL is non-negative, so negative estimates are treated as zero; among
    // those the estimate nearest zero wins.
    let key = |k: f64| (k.max(0.0), k.abs());
    let best = (0..kls.len()).fold(0, |b, i| if key(kls[i]) < key(kls[b]) { i } else { b });
    Ok((best, kls))
}

/// New component from the batch agent closest to `target`, with noise drawn from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn init_online_component(
    batch: &TrajectoryBatch,
    target: &GaussianMixture,
    model: &TrajectoryModel,
    store: &crate::nn::ParamStore,
    task_id: usize,
    epoch: usize,
    seed: u64,
) -> Result<PriorComponent> {
    let posteriors = model.encode_context(store, batch)?;
    let (best, _) = select_online_candidate(&posteriors, target, seed)?;
    let mut rng = rng_for(seed, &[tags::COMPONENT]);
    Ok(PriorComponent::from_trajectory(batch.obs.row(best).to_vec(), task_id, epoch, &mut rng))
}

/// `k` components from k-means medoids of the context-encoder means of `obs` rows.
pub fn init_offline_components(
    obs: &Matrix,
    k: usize,
    model: &TrajectoryModel,
    store: &crate::nn::ParamStore,
    task_id: usize,
    seed: u64,
) -> Result<Vec<PriorComponent>> {
    if obs.rows() < k || k == 0 {
        return Err(Error::InvalidValue(format!(
            "offline initialization needs 1 <= k <= {} trajectories, got k = {k}",
            obs.rows()
        )));
    }
    let (means, _) = model.encode_inputs(EncoderKind::Context, store, obs, None)?;
    let points: Vec<Vec<f64>> = (0..means.rows()).map(|i| means.row(i).to_vec()).collect();
    let km = kmeans(&points, k, 50, seed)?;
    let mut rng = rng_for(seed, &[tags::COMPONENT]);
    Ok(km
        .medoids
        .iter()
        .map(|&i| PriorComponent::from_trajectory(obs.row(i).to_vec(), task_id, 0, &mut rng))
        .collect())
}

/// Greedy component update: `steps` rounds of gradient ascent on
/// `E_c[log target(c) - log reference(c)] + H(Q(C | U + ε))`, where `c` is drawn
/// from the component's own posterior. Only `U` and `ε` move.
#[allow(clippy::too_many_arguments)]
pub fn optimize_component(
    component: &PriorComponent,
    target: &GaussianMixture,
    reference: &GaussianMixture,
    model: &TrajectoryModel,
    store: &crate::nn::ParamStore,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<PriorComponent> {
    let d = model.config().latent_dim;
    if target.dim() != d || reference.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: target.dim().min(reference.dim()),
        });
    }
    let (tm, ts, tw) = mixture_matrices(target);
    let (rm, rs, rw) = mixture_matrices(reference);
    let mut out = component.clone();
    let mut rng = rng_for(seed, &[tags::COMPONENT]);
    let s = TRAIN_MC_SAMPLES;
    for _ in 0..steps {
        let mut tape = Tape::frozen();
        let u = tape.variable(Matrix::row_vector(out.pseudo.clone()));
        let e = tape.variable(Matrix::row_vector(out.noise.clone()));
        let x = tape.add(u, e);
        let enc = model.encode(EncoderKind::Context, &mut tape, store, x, None)?;
        let eta = tape.constant(normal_matrix(&mut rng, s, d));
        let mr = tape.repeat_rows(enc.mean, s);
        let sr = tape.repeat_rows(enc.std, s);
        let se = tape.mul(sr, eta);
        let c = tape.add(mr, se);
        let (a, b, w) = (tape.constant(tm.clone()), tape.constant(ts.clone()), tape.constant(tw.clone()));
        let lt = tape.mixture_log_prob(c, a, b, w);
        let (a, b, w) = (tape.constant(rm.clone()), tape.constant(rs.clone()), tape.constant(rw.clone()));
        let lr_ = tape.mixture_log_prob(c, a, b, w);
        let diff = tape.sub(lt, lr_);
        let ratio = tape.mean_all(diff);
        let ent = tape.sum_all(enc.log_std);
        let obj = tape.add(ratio, ent);
        let g = tape.backward(obj)?;
        let gu = g.get_or_zeros(&tape, u);
        let ge = g.get_or_zeros(&tape, e);
        for (p, gv) in out.pseudo.iter_mut().zip(gu.as_slice()) {
            *p += lr * gv;
        }
        for (p, gv) in out.noise.iter_mut().zip(ge.as_slice()) {
            *p += lr * gv;
        }
    }
    out.validate()?;
    Ok(out)
}

/// Entropy-inclusive value of the component objective (for inspection and tests).
pub fn component_objective(
    posterior: &DiagGaussian,
    target: &GaussianMixture,
    reference: &GaussianMixture,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng_for(seed, &[]);
    let mut acc = 0.0;
    for _ in 0..n_samples {
        let c = posterior.sample(&mut rng);
        acc += target.log_prob(&c)? - reference.log_prob(&c)?;
    }
    Ok(acc / n_samples as f64 + posterior.entropy())
}

fn mixture_matrices(m: &GaussianMixture) -> (Matrix, Matrix, Matrix) {
    let rows = |f: fn(&DiagGaussian) -> &[f64]| Matrix::from_rows(&m.components().iter().map(|c| f(c).to_vec()).collect::<Vec<_>>());
    (
        rows(DiagGaussian::mean),
        rows(DiagGaussian::std),
        Matrix::row_vector(m.weights().iter().map(|w| w.max(1e-300).ln()).collect()),
    )
}

/// Outcome of the mixing-weight grid search.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSearch {
    /// Chosen weight of the existing queue; the new component gets `1 - alpha`.
    pub alpha: f64,
    /// Monte-Carlo `E_target[log target - log mixture(alpha)]` per grid point.
    pub objective: Vec<f64>,
}

impl WeightSearch {
    pub fn grid() -> Vec<f64> {
        (0..=WEIGHT_GRID).map(|i| i as f64 / WEIGHT_GRID as f64).collect()
    }
}

/// Grid search over `alpha` minimizing `KL(target ‖ alpha·queue + (1 - alpha)·new)`,
/// estimated with `EVAL_MC_SAMPLES` stratified draws from `target`. Ties go
/// to the larger `alpha`.
pub fn optimize_weight(
    queue_mixture: &GaussianMixture,
    new_component: &DiagGaussian,
    target: &GaussianMixture,
    seed: u64,
) -> Result<WeightSearch> {
    let mut rng = rng_for(seed, &[tags::WEIGHT]);
    let samples = target.sample_n(EVAL_MC_SAMPLES, &mut rng);
    let mut lt = Vec::with_capacity(samples.len());
    let mut lm = Vec::with_capacity(samples.len());
    let mut lq = Vec::with_capacity(samples.len());
    for x in &samples {
        lt.push(target.log_prob(x)?);
        lm.push(queue_mixture.log_prob(x)?);
        lq.push(new_component.log_prob(x)?);
    }
    let n = samples.len() as f64;
    let grid = WeightSearch::grid();
    let objective: Vec<f64> = grid
        .iter()
        .map(|&a| {
            let s: f64 = (0..samples.len())
                .map(|i| lt[i] - log_sum_exp(&[a.ln() + lm[i], (1.0 - a).ln() + lq[i]]))
                .sum();
            s / n
        })
        .collect();
    let mut best = grid.len() - 1;
    for i in (0..grid.len()).rev() {
        if objective[i] < objective[best] {
            best = i;
        }
    }
    Ok(WeightSearch {
        alpha: grid[best],
        objective,
    })
}

#[cfg(test)]
mod tests;
