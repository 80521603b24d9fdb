use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{EncoderKind, TrajectoryModel};
use super::TrajectoryBatch;
use crate::error::{Error, Result};
use crate::gaussian::{stratified_indices, HALF_LN_2PI, TRAIN_MC_SAMPLES};
use crate::nn::{Matrix, ParamStore, Tape, Var};
use crate::rng::{normal_matrix, rng_for, tags};

/// The prior mixture as encoder inputs, so the loss can differentiate
/// through the context encoding of every component.
#[derive(Clone, Copy, Debug)]
pub struct PriorInputs<'a> {
    /// `K x 2(obs_len-1)` pseudo-trajectories (noise already added).
    pub pseudo: &'a Matrix,
    /// Mixture weights, length `K`.
    pub weights: &'a [f64],
    /// Component regularized away from the rest of the queue, if any.
    pub newest: Option<usize>,
}

impl PriorInputs<'_> {
    fn validate(&self, width: usize) -> Result<()> {
        let k = self.pseudo.rows();
        if k == 0 {
            return Err(Error::Contract("prior queue is empty".into()));
        }
        if self.pseudo.cols() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: self.pseudo.cols(),
            });
        }
        if self.weights.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: self.weights.len(),
            });
        }
        if self.newest.is_some_and(|n| n >= k) {
            return Err(Error::Contract("newest component index out of range".into()));
        }
        Ok(())
    }
}

/// Saturation level of the maximized divergence term.
pub const SYM_KL_CAP: f64 = 10.0;

/// Unweighted loss parts and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub pred: f64,
    pub rec: f64,
    pub kl: f64,
    pub sym: f64,
}

/// A recorded loss, ready for [`Tape::backward`].
pub struct LossEval {
    pub tape: Tape,
    pub loss: Var,
    pub parts: LossParts,
}

impl LossEval {
    /// Accumulates parameter gradients into `store` and returns the parts.
    pub fn backprop(self, store: &mut ParamStore) -> Result<LossParts> {
        self.tape.backward_into(self.loss, store)?;
        Ok(self.parts)
    }
}

fn log_weights(w: &[f64]) -> Matrix {
    Matrix::row_vector(w.iter().map(|&x| x.max(1e-300).ln()).collect())
}

impl TrajectoryModel {
    /// Prediction and reconstruction terms for latent samples `z`.
    fn pred_rec(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &TrajectoryBatch,
        z: Var,
        features: Var,
    ) -> Result<(Var, Var)> {
        let cfg = self.config();
        let a = batch.num_agents();
        let ld = tape.constant(batch.last_obs_disp());
        let disp = self.decode(tape, store, z, features, ld)?;
        // Cumulative sums as a product with an upper-triangular selector.
        let w = 2 * cfg.pred_len;
        let mut tri = Matrix::zeros(w, w);
        for s in 0..cfg.pred_len {
            for t in s..cfg.pred_len {
                tri[(2 * s, 2 * t)] = 1.0;
                tri[(2 * s + 1, 2 * t + 1)] = 1.0;
            }
        }
        let target = batch.fut.matmul(&tri);
        let tri = tape.constant(tri);
        let pos = tape.matmul(disp, tri);
        let tgt = tape.constant(target);
        let err = tape.sub(pos, tgt);
        let sq = tape.square(err);
        let total = tape.sum_all(sq);
        let pred = tape.scale(total, 1.0 / (a * cfg.pred_len) as f64);

        let rec_out = self.reconstruct(tape, store, z)?;
        let obs = tape.constant(batch.obs.clone());
        let rerr = tape.sub(rec_out, obs);
        let rsq = tape.square(rerr);
        let per_agent = tape.sum_cols(rsq);
        let norms = tape.sqrt(per_agent);
        let rec = tape.mean_all(norms);
        Ok((pred, rec))
    }

    /// Prediction plus reconstruction with `z` drawn from the trajectory
    /// posterior alone; used before the context encoder is initialized.
    pub fn pretrain_loss(&self, store: &ParamStore, batch: &TrajectoryBatch, seed: u64) -> Result<LossEval> {
        let cfg = self.config();
        let mut tape = Tape::new();
        let mut rng = rng_for(seed, &[tags::LOSS]);
        let obs = tape.constant(batch.obs.clone());
        let ez = self.encode(EncoderKind::Trajectory, &mut tape, store, obs, batch.pool.as_ref())?;
        let eps = tape.constant(normal_matrix(&mut rng, batch.num_agents(), cfg.latent_dim));
        let se = tape.mul(ez.std, eps);
        let z = tape.add(ez.mean, se);
        let (pred, rec) = self.pred_rec(&mut tape, store, batch, z, ez.features)?;
        let wp = tape.scale(pred, cfg.lambda_pred);
        let wr = tape.scale(rec, cfg.lambda_rec);
        let loss = tape.add(wp, wr);
        let parts = LossParts {
            total: tape.value(loss).scalar(),
            pred: tape.value(pred).scalar(),
            rec: tape.value(rec).scalar(),
            kl: 0.0,
            sym: 0.0,
        };
        Ok(LossEval { tape, loss, parts })
    }

    /// Model-update objective:
    /// `λp·pred + λr·rec + λkl·KL(context ‖ prior) − λsym·cap·tanh(symKL(newest ‖ rest) / cap)`.
    /// `LossParts::sym` reports the raw divergence.
    ///
    /// The prediction uses one reparameterized sample of the fused posterior
    /// per agent. Both divergences are Monte-Carlo estimates whose noise is
    /// fixed by `seed`. A prior is required whenever `λkl > 0`.
    pub fn max_step_loss(
        &self,
        store: &ParamStore,
        batch: &TrajectoryBatch,
        prior: Option<&PriorInputs<'_>>,
        seed: u64,
    ) -> Result<LossEval> {
        let cfg = self.config();
        let d = cfg.latent_dim;
        let a = batch.num_agents();
        let uses_prior = cfg.lambda_kl > 0.0 || cfg.lambda_sym > 0.0;
        let prior = match prior {
            Some(p) => {
                p.validate(cfg.obs_width())?;
                Some(p)
            }
            None if cfg.lambda_kl > 0.0 => {
                return Err(Error::Contract("divergence term needs a non-empty prior queue".into()))
            }
            None => None,
        };
        let mut rng = rng_for(seed, &[tags::LOSS]);
        let eps_z = normal_matrix(&mut rng, a, d);
        let s = TRAIN_MC_SAMPLES;

        let mut tape = Tape::new();
        let obs = tape.constant(batch.obs.clone());
        let ez = self.encode(EncoderKind::Trajectory, &mut tape, store, obs, batch.pool.as_ref())?;
        let ec = self.encode(EncoderKind::Context, &mut tape, store, obs, batch.pool.as_ref())?;
        let (fm, fs) = Self::fuse(&mut tape, ez.mean, ez.std, ec.mean, ec.std);
        let eps = tape.constant(eps_z);
        let se = tape.mul(fs, eps);
        let z = tape.add(fm, se);
        let (pred, rec) = self.pred_rec(&mut tape, store, batch, z, ez.features)?;
        let wp = tape.scale(pred, cfg.lambda_pred);
        let wr = tape.scale(rec, cfg.lambda_rec);
        let mut loss = tape.add(wp, wr);
        let mut kl_val = 0.0;
        let mut sym_val = 0.0;

        if let (Some(p), true) = (prior, uses_prior) {
            let u = tape.constant(p.pseudo.clone());
            let pe = self.encode(EncoderKind::Context, &mut tape, store, u, None)?;
            if cfg.lambda_kl > 0.0 {
                let noise = normal_matrix(&mut rng, a * s, d);
                let sq_half: Vec<f64> = (0..a * s)
                    .map(|i| -0.5 * noise.row(i).iter().map(|e| e * e).sum::<f64>() - d as f64 * HALF_LN_2PI)
                    .collect();
                let mr = tape.repeat_rows(ec.mean, s);
                let sr = tape.repeat_rows(ec.std, s);
                let nv = tape.constant(noise);
                let sn = tape.mul(sr, nv);
                let c = tape.add(mr, sn);
                // log q(c) = -sum log std - 0.5 |eps|^2 - d/2 ln 2pi
                let ls = tape.sum_cols(ec.log_std);
                let lsr = tape.repeat_rows(ls, s);
                let neg = tape.scale(lsr, -1.0);
                let cst = tape.constant(Matrix::column_vector(sq_half));
                let log_q = tape.add(neg, cst);
                let lw = tape.constant(log_weights(p.weights));
                let log_m = tape.mixture_log_prob(c, pe.mean, pe.std, lw);
                let diff = tape.sub(log_q, log_m);
                let kl = tape.mean_all(diff);
                kl_val = tape.value(kl).scalar();
                let wk = tape.scale(kl, cfg.lambda_kl);
                loss = tape.add(loss, wk);
            }
            if cfg.lambda_sym > 0.0 {
                if let Some(sym) = self.symmetric_term(&mut tape, p, pe.mean, pe.std, &mut rng)? {
                    sym_val = tape.value(sym).scalar();
                    // The term is maximized and unbounded above, so it enters
                    // through a saturating `cap·tanh(sym / cap)`.
                    let shrunk = tape.scale(sym, 1.0 / SYM_KL_CAP);
                    let sat = tape.tanh(shrunk);
                    let ws = tape.scale(sat, -cfg.lambda_sym * SYM_KL_CAP);
                    loss = tape.add(loss, ws);
                }
            }
        }
        let parts = LossParts {
            total: tape.value(loss).scalar(),
            pred: tape.value(pred).scalar(),
            rec: tape.value(rec).scalar(),
            kl: kl_val,
            sym: sym_val,
        };
        Ok(LossEval { tape, loss, parts })
    }

    /// `KL(newest ‖ rest) + KL(rest ‖ newest)` with shared noise; `None` when
    /// there is no newest component or nothing to compare it against.
    fn symmetric_term(
        &self,
        tape: &mut Tape,
        p: &PriorInputs<'_>,
        means: Var,
        stds: Var,
        rng: &mut impl Rng,
    ) -> Result<Option<Var>> {
        let Some(n) = p.newest else { return Ok(None) };
        let rest: Vec<usize> = (0..p.weights.len()).filter(|&j| j != n).collect();
        let rest_w: Vec<f64> = rest.iter().map(|&j| p.weights[j]).collect();
        let total: f64 = rest_w.iter().sum();
        if rest.is_empty() || !(total > 0.0) {
            return Ok(None);
        }
        let rest_w: Vec<f64> = rest_w.iter().map(|w| w / total).collect();
        let s = TRAIN_MC_SAMPLES;
        let d = self.config().latent_dim;
        let noise = normal_matrix(rng, s, d);
        let u: f64 = rng.gen();

        let pm = tape.gather_rows(means, &[n]);
        let ps = tape.gather_rows(stds, &[n]);
        let rm = tape.gather_rows(means, &rest);
        let rs = tape.gather_rows(stds, &rest);
        let zero_w = tape.constant(Matrix::zeros(1, 1));
        let rest_lw = tape.constant(log_weights(&rest_w));
        let nv = tape.constant(noise);

        let pmr = tape.repeat_rows(pm, s);
        let psr = tape.repeat_rows(ps, s);
        let sn = tape.mul(psr, nv);
        let c_fwd = tape.add(pmr, sn);
        let lp = tape.mixture_log_prob(c_fwd, pm, ps, zero_w);
        let lm = tape.mixture_log_prob(c_fwd, rm, rs, rest_lw);
        let fd = tape.sub(lp, lm);
        let fwd = tape.mean_all(fd);

        let idx = stratified_indices(&rest_w, s, u);
        let gm = tape.gather_rows(rm, &idx);
        let gs = tape.gather_rows(rs, &idx);
        let gn = tape.mul(gs, nv);
        let c_rev = tape.add(gm, gn);
        let lm2 = tape.mixture_log_prob(c_rev, rm, rs, rest_lw);
        let lp2 = tape.mixture_log_prob(c_rev, pm, ps, zero_w);
        let rd = tape.sub(lm2, lp2);
        let rev = tape.mean_all(rd);
        Ok(Some(tape.add(fwd, rev)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_domain, SyntheticConfig, TaskDomain, TrajectoryScene};
    use crate::gaussian::{mc_kl_to_mixture, symmetric_kl, DiagGaussian, GaussianMixture};
    use crate::model::ModelConfig;
    use crate::nn::AdamConfig;

    fn domain(n: usize, seed: u64) -> TaskDomain {
        generate_domain(&SyntheticConfig {
            n_train: n,
            n_val: 0,
            n_test: 0,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn batch_of(dom: &TaskDomain) -> TrajectoryBatch {
        let s: Vec<&TrajectoryScene> = dom.train.iter().collect();
        TrajectoryBatch::from_scenes(&s, 8, 12).unwrap()
    }

    fn cfg(d: usize, h: usize) -> ModelConfig {
        ModelConfig {
            latent_dim: d,
            hidden_dim: h,
            ..ModelConfig::default()
        }
    }

    fn pseudo_from(batch: &TrajectoryBatch, rows: &[usize]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|&r| batch.obs.row(r).to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn empty_prior_is_a_contract_error() {
        let model = TrajectoryModel::new(cfg(3, 4)).unwrap();
        let store = model.init_params(0).unwrap();
        let b = batch_of(&domain(1, 0));
        assert!(matches!(model.max_step_loss(&store, &b, None, 0), Err(Error::Contract(_))));
        let empty = Matrix::zeros(0, 14);
        let p = PriorInputs {
            pseudo: &empty,
            weights: &[],
            newest: None,
        };
        assert!(model.max_step_loss(&store, &b, Some(&p), 0).is_err());
    }

    #[test]
    fn kl_is_zero_when_prior_equals_context_posterior() {
        let model = TrajectoryModel::new(cfg(3, 4)).unwrap();
        let store = model.init_params(0).unwrap();
        let s = &domain(1, 1).train[0];
        let single = TrajectoryScene::new(0, vec![0], vec![s.positions[0].clone()]).unwrap();
        let b = TrajectoryBatch::from_scenes(&[&single], 8, 12).unwrap();
        let pseudo = b.obs.clone();
        let p = PriorInputs {
            pseudo: &pseudo,
            weights: &[1.0],
            newest: None,
        };
        let parts = model.max_step_loss(&store, &b, Some(&p), 3).unwrap().parts;
        assert!(parts.kl.abs() < 1e-12, "{}", parts.kl);
    }

    #[test]
    fn divergence_terms_match_value_level_estimators_in_expectation() {
        let model = TrajectoryModel::new(cfg(2, 4)).unwrap();
        let store = model.init_params(7).unwrap();
        let b = batch_of(&domain(2, 2));
        let pseudo = pseudo_from(&b, &[0, 3, 6]);
        let weights = [0.5, 0.3, 0.2];
        let p = PriorInputs {
            pseudo: &pseudo,
            weights: &weights,
            newest: Some(2),
        };
        let (pm, ps) = model.encode_inputs(EncoderKind::Context, &store, &pseudo, None).unwrap();
        let comps: Vec<DiagGaussian> = (0..3)
            .map(|i| DiagGaussian::new(pm.row(i).to_vec(), ps.row(i).to_vec()).unwrap())
            .collect();
        let prior = GaussianMixture::new(comps.clone(), weights.to_vec()).unwrap();
        let rest = GaussianMixture::new(comps[..2].to_vec(), vec![0.5, 0.3]).unwrap();
        let ctx = model.encode_context(&store, &b).unwrap();
        let kl_ref: f64 =
            ctx.iter().map(|q| mc_kl_to_mixture(q, &prior, 20_000, 1).unwrap()).sum::<f64>() / ctx.len() as f64;
        let sym_ref = symmetric_kl(&comps[2], &rest, 50_000, 1).unwrap();
        let (mut kl, mut sym) = (0.0, 0.0);
        let reps = 60;
        for seed in 0..reps {
            let parts = model.max_step_loss(&store, &b, Some(&p), seed).unwrap().parts;
            kl += parts.kl / reps as f64;
            sym += parts.sym / reps as f64;
        }
        assert!((kl - kl_ref).abs() < 0.05 * kl_ref.abs().max(0.1), "{kl} vs {kl_ref}");
        assert!((sym - sym_ref).abs() < 0.05 * sym_ref.abs().max(0.1), "{sym} vs {sym_ref}");
    }

    #[test]
    fn symmetric_term_enters_with_minus_sign() {
        let base = cfg(3, 4);
        let b = batch_of(&domain(2, 5));
        let pseudo = pseudo_from(&b, &[0, 5]);
        let mut pseudo_far = pseudo.clone();
        pseudo_far.row_mut(1).iter_mut().for_each(|v| *v *= 8.0);
        let p = PriorInputs {
            pseudo: &pseudo_far,
            weights: &[0.5, 0.5],
            newest: Some(1),
        };
        let lo = TrajectoryModel::new(ModelConfig { lambda_sym: 0.1, ..base.clone() }).unwrap();
        let hi = TrajectoryModel::new(ModelConfig { lambda_sym: 1.0, ..base }).unwrap();
        let store = lo.init_params(1).unwrap();
        let a = lo.max_step_loss(&store, &b, Some(&p), 9).unwrap().parts;
        let c = hi.max_step_loss(&store, &b, Some(&p), 9).unwrap().parts;
        assert!(a.sym > 0.0);
        assert!(c.total < a.total);
    }

    #[test]
    fn degenerate_config_reduces_to_prediction_plus_reconstruction() {
        let m = TrajectoryModel::new(ModelConfig {
            lambda_kl: 0.0,
            lambda_sym: 0.0,
            ..cfg(3, 4)
        })
        .unwrap();
        let mut store = m.init_params(2).unwrap();
        // Pin both posteriors to the smallest std so sampling is nearly deterministic.
        for name in ["traj_enc.log_std.b", "ctx_enc.log_std.b"] {
            store.value_mut(name).unwrap().fill(-50.0);
        }
        let b = batch_of(&domain(2, 6));
        let parts = m.max_step_loss(&store, &b, None, 0).unwrap().parts;
        assert_eq!((parts.kl, parts.sym), (0.0, 0.0));
        assert!((parts.total - parts.pred - parts.rec).abs() < 1e-12);
        let other = m.max_step_loss(&store, &b, None, 99).unwrap().parts;
        assert!((parts.pred - other.pred).abs() < 1e-2 * parts.pred);
    }

    #[test]
    fn loss_is_translation_invariant() {
        let m = TrajectoryModel::new(cfg(3, 4)).unwrap();
        let store = m.init_params(4).unwrap();
        let dom = domain(2, 7);
        let moved: Vec<TrajectoryScene> = dom.train.iter().map(|s| s.translated([10.0, -3.0])).collect();
        let b1 = batch_of(&dom);
        let b2 = TrajectoryBatch::from_scenes(&moved.iter().collect::<Vec<_>>(), 8, 12).unwrap();
        let pseudo = pseudo_from(&b1, &[1, 2]);
        let p = PriorInputs {
            pseudo: &pseudo,
            weights: &[0.4, 0.6],
            newest: Some(1),
        };
        let x = m.max_step_loss(&store, &b1, Some(&p), 1).unwrap().parts;
        let y = m.max_step_loss(&store, &b2, Some(&p), 1).unwrap().parts;
        for (u, v) in [(x.pred, y.pred), (x.rec, y.rec), (x.kl, y.kl), (x.sym, y.sym)] {
            assert!((u - v).abs() < 1e-9 * (1.0 + u.abs()), "{u} vs {v}");
        }
    }

    #[test]
    fn permuting_agents_leaves_loss_unchanged() {
        let m = TrajectoryModel::new(cfg(3, 4)).unwrap();
        let store = m.init_params(4).unwrap();
        let s = domain(1, 8).train[0].clone();
        let perm = [4usize, 2, 0, 3, 1];
        let shuffled = TrajectoryScene::new(
            0,
            perm.iter().map(|&i| s.agent_ids[i]).collect(),
            perm.iter().map(|&i| s.positions[i].clone()).collect(),
        )
        .unwrap();
        let b1 = TrajectoryBatch::from_scenes(&[&s], 8, 12).unwrap();
        let b2 = TrajectoryBatch::from_scenes(&[&shuffled], 8, 12).unwrap();
        // Per-row noise is not permuted with the agents, so use posterior means.
        let eval = |b: &TrajectoryBatch| {
            let mut tape = Tape::new();
            let obs = tape.constant(b.obs.clone());
            let e = m.encode(EncoderKind::Trajectory, &mut tape, &store, obs, b.pool.as_ref()).unwrap();
            let (pred, rec) = m.pred_rec(&mut tape, &store, b, e.mean, e.features).unwrap();
            (tape.value(pred).scalar(), tape.value(rec).scalar())
        };
        let (p1, r1) = eval(&b1);
        let (p2, r2) = eval(&b2);
        assert!((p1 - p2).abs() < 1e-12 * p1);
        assert!((r1 - r2).abs() < 1e-12 * r1);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = TrajectoryModel::new(cfg(2, 3)).unwrap();
        let mut store = m.init_params(11).unwrap();
        let s = &domain(1, 9).train[0];
        let two = TrajectoryScene::new(0, vec![0, 1], s.positions[..2].to_vec()).unwrap();
        let b = TrajectoryBatch::from_scenes(&[&two], 8, 12).unwrap();
        let mut pseudo = pseudo_from(&b, &[0, 1]);
        pseudo.row_mut(1).iter_mut().for_each(|v| *v += 0.3);
        let p = PriorInputs {
            pseudo: &pseudo,
            weights: &[0.7, 0.3],
            newest: Some(1),
        };
        let seed = 5;
        store.zero_grads();
        m.max_step_loss(&store, &b, Some(&p), seed).unwrap().backprop(&mut store).unwrap();
        let names: Vec<String> = store.names().map(str::to_owned).collect();
        let h = 1e-6;
        let mut checked = 0;
        for name in &names {
            let n = store.value(name).unwrap().len();
            for idx in [0, n / 2, n - 1] {
                let g = store.grad(name).unwrap().as_slice()[idx];
                let orig = store.value(name).unwrap().as_slice()[idx];
                let eval = |v: f64| {
                    let mut st = store.clone();
                    st.value_mut(name).unwrap().as_mut_slice()[idx] = v;
                    m.max_step_loss(&st, &b, Some(&p), seed).unwrap().parts.total
                };
                let fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
                let rel = (fd - g).abs() / (fd.abs().max(g.abs()).max(1e-3));
                assert!(rel < 1e-4, "{name}[{idx}]: analytic {g} vs numeric {fd}");
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn optimizer_halves_prediction_loss() {
        let m = TrajectoryModel::new(ModelConfig {
            lambda_kl: 0.0,
            lambda_sym: 0.0,
            ..ModelConfig::default()
        })
        .unwrap();
        let mut store = m.init_params(21).unwrap();
        let b = batch_of(&domain(10, 21));
        let adam = AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        };
        let first = m.max_step_loss(&store, &b, None, 0).unwrap().parts.pred;
        let mut last = first;
        for step in 0..200 {
            let parts = m.max_step_loss(&store, &b, None, step).unwrap().backprop(&mut store).unwrap();
            store.adam_step(&adam);
            last = parts.pred;
        }
        let after = m.max_step_loss(&store, &b, None, 1000).unwrap().parts.pred;
        assert!(after <= 0.5 * first, "initial {first}, after {after} (last step {last})");
    }
}
