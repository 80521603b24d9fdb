use rand::Rng;

use super::{ModelConfig, TrajectoryBatch};
use crate::data::Point;
use crate::error::{Error, Result};
use crate::gaussian::{gauss_product, DiagGaussian};
use crate::nn::{ff_forward, gru_forward, FeedForward, GruCell, Linear, Matrix, ParamStore, Tape, Var};
use crate::rng::{normal_matrix, rng_for, tags};

pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    /// Latent posterior given the observation.
    Trajectory,
    /// Context posterior given the observation.
    Context,
}

impl EncoderKind {
    pub fn prefix(self) -> &'static str {
        match self {
            EncoderKind::Trajectory => "traj_enc",
            EncoderKind::Context => "ctx_enc",
        }
    }
}

/// Encoder outputs recorded on a tape. All are `A x d` except `features` (`A x 2H`).
#[derive(Clone, Copy, Debug)]
pub struct Encoding {
    pub mean: Var,
    pub log_std: Var,
    pub std: Var,
    /// Own final hidden state concatenated with the pooled neighbor states.
    pub features: Var,
}

#[derive(Clone, Debug)]
struct EncoderNet {
    gru: GruCell,
    mean: Linear,
    log_std: Linear,
}

impl EncoderNet {
    fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_dim;
        Self {
            gru: GruCell::new(format!("{prefix}.gru"), 2, h),
            mean: Linear::new(format!("{prefix}.mean"), 2 * h, cfg.latent_dim),
            log_std: Linear::new(format!("{prefix}.log_std"), 2 * h, cfg.latent_dim),
        }
    }

    fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.gru.register(store, rng)?;
        self.mean.register(store, rng)?;
        self.log_std.register(store, rng)
    }
}

/// Network definition; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct TrajectoryModel {
    cfg: ModelConfig,
    traj: EncoderNet,
    ctx: EncoderNet,
    dec_init: Linear,
    dec_gru: GruCell,
    dec_out: Linear,
    recon: FeedForward,
}

impl TrajectoryModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, h) = (cfg.latent_dim, cfg.hidden_dim);
        Ok(Self {
            traj: EncoderNet::new(EncoderKind::Trajectory.prefix(), &cfg),
            ctx: EncoderNet::new(EncoderKind::Context.prefix(), &cfg),
            dec_init: Linear::new("dec.init", d + 2 * h, h),
            dec_gru: GruCell::new("dec.gru", d + 2, h),
            dec_out: Linear::new("dec.out", h, 2),
            recon: FeedForward::new("rec", &[d, h, cfg.obs_width()]),
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Glorot weights and zero biases, drawn from `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = rng_for(seed, &[tags::INIT]);
        let mut store = ParamStore::new();
        self.traj.register(&mut store, &mut rng)?;
        self.ctx.register(&mut store, &mut rng)?;
        self.dec_init.register(&mut store, &mut rng)?;
        self.dec_gru.register(&mut store, &mut rng)?;
        self.dec_out.register(&mut store, &mut rng)?;
        self.recon.register(&mut store, &mut rng)?;
        Ok(store)
    }

    fn net(&self, kind: EncoderKind) -> &EncoderNet {
        match kind {
            EncoderKind::Trajectory => &self.traj,
            EncoderKind::Context => &self.ctx,
        }
    }

    /// Encodes `obs` (`A x 2(obs_len-1)` displacements). `pool` averages
    /// neighbor hidden states; `None` pools zeros.
    pub fn encode(
        &self,
        kind: EncoderKind,
        tape: &mut Tape,
        store: &ParamStore,
        obs: Var,
        pool: Option<&Matrix>,
    ) -> Result<Encoding> {
        let (rows, width) = tape.value(obs).shape();
        if rows == 0 {
            return Err(Error::Empty("encoder agents"));
        }
        if width != self.cfg.obs_width() {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.obs_width(),
                got: width,
            });
        }
        let net = self.net(kind);
        let steps: Vec<Var> = (0..self.cfg.obs_len - 1).map(|t| tape.slice_cols(obs, 2 * t, 2)).collect();
        let h = gru_forward(&net.gru, store, &steps, None, tape)?.last;
        let pooled = match pool {
            Some(p) => {
                if p.shape() != (rows, rows) {
                    return Err(Error::Shape {
                        op: "encode",
                        detail: format!("pool is {:?}, expected {rows}x{rows}", p.shape()),
                    });
                }
                let pv = tape.constant(p.clone());
                tape.matmul(pv, h)
            }
            None => tape.constant(Matrix::zeros(rows, self.cfg.hidden_dim)),
        };
        let features = tape.concat_cols(&[h, pooled]);
        let mean = net.mean.forward(tape, store, features)?;
        let raw = net.log_std.forward(tape, store, features)?;
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        let std = tape.exp(log_std);
        Ok(Encoding {
            mean,
            log_std,
            std,
            features,
        })
    }

    /// Product of two diagonal Gaussians on the tape: returns `(mean, std)`.
    pub fn fuse(tape: &mut Tape, m1: Var, s1: Var, m2: Var, s2: Var) -> (Var, Var) {
        let v1 = tape.square(s1);
        let v2 = tape.square(s2);
        let vs = tape.add(v1, v2);
        let a = tape.mul(v1, m2);
        let b = tape.mul(v2, m1);
        let num = tape.add(a, b);
        let mean = tape.div(num, vs);
        let vv = tape.mul(v1, v2);
        let var = tape.div(vv, vs);
        (mean, tape.sqrt(var))
    }

    /// Future displacements (`A x 2 pred_len`) from latent `z`, encoder
    /// `features` and the last observed displacement.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, z: Var, features: Var, last_disp: Var) -> Result<Var> {
        let zf = tape.concat_cols(&[z, features]);
        let pre = self.dec_init.forward(tape, store, zf)?;
        let mut h = tape.tanh(pre);
        let mut prev = last_disp;
        let mut out = Vec::with_capacity(self.cfg.pred_len);
        for _ in 0..self.cfg.pred_len {
            let x = tape.concat_cols(&[z, prev]);
            h = self.dec_gru.step(tape, store, x, h)?;
            prev = self.dec_out.forward(tape, store, h)?;
            out.push(prev);
        }
        Ok(tape.concat_cols(&out))
    }

    /// Observed displacements (`A x 2(obs_len-1)`) reconstructed from `z`.
    pub fn reconstruct(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        ff_forward(&self.recon, store, z, tape)
    }

    /// Per-row `(means, stds)` of one encoder, without neighbors unless `pool` is given.
    pub fn encode_inputs(
        &self,
        kind: EncoderKind,
        store: &ParamStore,
        obs: &Matrix,
        pool: Option<&Matrix>,
    ) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::frozen();
        let x = tape.constant(obs.clone());
        let e = self.encode(kind, &mut tape, store, x, pool)?;
        Ok((tape.value(e.mean).clone(), tape.value(e.std).clone()))
    }

    fn encode_batch(&self, kind: EncoderKind, store: &ParamStore, batch: &TrajectoryBatch) -> Result<Vec<DiagGaussian>> {
        let (m, s) = self.encode_inputs(kind, store, &batch.obs, batch.pool.as_ref())?;
        rows_to_gaussians(&m, &s)
    }

    pub fn encode_trajectory(&self, store: &ParamStore, batch: &TrajectoryBatch) -> Result<Vec<DiagGaussian>> {
        self.encode_batch(EncoderKind::Trajectory, store, batch)
    }

    pub fn encode_context(&self, store: &ParamStore, batch: &TrajectoryBatch) -> Result<Vec<DiagGaussian>> {
        self.encode_batch(EncoderKind::Context, store, batch)
    }

    /// Trajectory-encoder features per agent (`A x 2H`), the decoder's agent context.
    pub fn agent_features(&self, store: &ParamStore, batch: &TrajectoryBatch) -> Result<Matrix> {
        let mut tape = Tape::frozen();
        let x = tape.constant(batch.obs.clone());
        let e = self.encode(EncoderKind::Trajectory, &mut tape, store, x, batch.pool.as_ref())?;
        Ok(tape.value(e.features).clone())
    }

    /// Absolute future positions for one agent.
    pub fn decode_future(
        &self,
        store: &ParamStore,
        z: &[f64],
        features: &[f64],
        last_disp: Point,
        last_pos: Point,
    ) -> Result<Vec<Point>> {
        if z.len() != self.cfg.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.latent_dim,
                got: z.len(),
            });
        }
        let mut tape = Tape::frozen();
        let zv = tape.constant(Matrix::row_vector(z.to_vec()));
        let fv = tape.constant(Matrix::row_vector(features.to_vec()));
        let lv = tape.constant(Matrix::row_vector(last_disp.to_vec()));
        let disp = self.decode(&mut tape, store, zv, fv, lv)?;
        let abs = cumulative_positions(tape.value(disp), &Matrix::row_vector(last_pos.to_vec()));
        Ok(abs.row(0).chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    /// Reconstructed observed displacements for one latent sample.
    pub fn reconstruct_past(&self, store: &ParamStore, z: &[f64]) -> Result<Vec<Point>> {
        if z.len() != self.cfg.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.latent_dim,
                got: z.len(),
            });
        }
        let mut tape = Tape::frozen();
        let zv = tape.constant(Matrix::row_vector(z.to_vec()));
        let r = self.reconstruct(&mut tape, store, zv)?;
        Ok(tape.value(r).row(0).chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    /// `k` sampled futures from the fused posterior. Element `s` of the
    /// result is `A x 2 pred_len` absolute positions for sample `s`.
    pub fn predict_samples(&self, store: &ParamStore, batch: &TrajectoryBatch, k: usize, seed: u64) -> Result<Vec<Matrix>> {
        if k == 0 {
            return Err(Error::InvalidValue("sample count must be >= 1".into()));
        }
        let a = batch.num_agents();
        let mut tape = Tape::frozen();
        let obs = tape.constant(batch.obs.clone());
        let ez = self.encode(EncoderKind::Trajectory, &mut tape, store, obs, batch.pool.as_ref())?;
        let ec = self.encode(EncoderKind::Context, &mut tape, store, obs, batch.pool.as_ref())?;
        let (m, s) = Self::fuse(&mut tape, ez.mean, ez.std, ec.mean, ec.std);
        let mut rng = rng_for(seed, &[tags::EVAL]);
        let eps = tape.constant(normal_matrix(&mut rng, a * k, self.cfg.latent_dim));
        let mr = tape.repeat_rows(m, k);
        let sr = tape.repeat_rows(s, k);
        let se = tape.mul(sr, eps);
        let z = tape.add(mr, se);
        let feat = tape.repeat_rows(ez.features, k);
        let ld = tape.constant(batch.last_obs_disp());
        let ldr = tape.repeat_rows(ld, k);
        let disp = self.decode(&mut tape, store, z, feat, ldr)?;
        let dv = tape.value(disp);
        let w = 2 * self.cfg.pred_len;
        let mut out = Vec::with_capacity(k);
        for s in 0..k {
            let mut d = Matrix::zeros(a, w);
            for i in 0..a {
                d.row_mut(i).copy_from_slice(dv.row(i * k + s));
            }
            out.push(cumulative_positions(&d, &batch.last_obs));
        }
        Ok(out)
    }
}

/// Absolute positions from displacement rows and per-row start points.
pub(crate) fn cumulative_positions(disp: &Matrix, start: &Matrix) -> Matrix {
    let mut out = disp.clone();
    for i in 0..out.rows() {
        let (mut x, mut y) = (start[(i, 0)], start[(i, 1)]);
        for c in out.row_mut(i).chunks_mut(2) {
            x += c[0];
            y += c[1];
            c[0] = x;
            c[1] = y;
        }
    }
    out
}

pub(crate) fn rows_to_gaussians(means: &Matrix, stds: &Matrix) -> Result<Vec<DiagGaussian>> {
    (0..means.rows())
        .map(|i| DiagGaussian::new(means.row(i).to_vec(), stds.row(i).to_vec()))
        .collect()
}

/// Fused posterior: the normalized product of the two posteriors.
pub fn fuse_posteriors(z_dist: &DiagGaussian, c_dist: &DiagGaussian) -> Result<DiagGaussian> {
    gauss_product(z_dist, c_dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_domain, SyntheticConfig, TrajectoryScene};

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            latent_dim: 3,
            hidden_dim: 5,
            ..ModelConfig::default()
        }
    }

    fn zero_prefix(store: &mut ParamStore, prefix: &str) {
        let names: Vec<String> = store.names().filter(|n| n.starts_with(prefix)).map(str::to_owned).collect();
        for n in names {
            store.value_mut(&n).unwrap().fill(0.0);
        }
    }

    fn domain() -> crate::data::TaskDomain {
        generate_domain(&SyntheticConfig {
            n_train: 3,
            n_val: 0,
            n_test: 0,
            seed: 4,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_heads_give_standard_normal() {
        let model = TrajectoryModel::new(small_cfg()).unwrap();
        let mut store = model.init_params(1).unwrap();
        zero_prefix(&mut store, "traj_enc.mean");
        zero_prefix(&mut store, "traj_enc.log_std");
        let s = TrajectoryScene::new(0, vec![0], vec![vec![[1.0, 2.0]; 20]]).unwrap();
        let b = TrajectoryBatch::from_scenes(&[&s], 8, 12).unwrap();
        assert!(b.pool.is_none());
        let g = &model.encode_trajectory(&store, &b).unwrap()[0];
        assert_eq!(g, &DiagGaussian::standard(3));
    }

    #[test]
    fn permuting_agents_permutes_outputs() {
        let model = TrajectoryModel::new(small_cfg()).unwrap();
        let store = model.init_params(2).unwrap();
        let s = domain().train[0].clone();
        let perm = [3usize, 0, 4, 1, 2];
        let shuffled = TrajectoryScene::new(
            s.scene_id,
            perm.iter().map(|&i| s.agent_ids[i]).collect(),
            perm.iter().map(|&i| s.positions[i].clone()).collect(),
        )
        .unwrap();
        let b1 = TrajectoryBatch::from_scenes(&[&s], 8, 12).unwrap();
        let b2 = TrajectoryBatch::from_scenes(&[&shuffled], 8, 12).unwrap();
        for kind in [EncoderKind::Trajectory, EncoderKind::Context] {
            let g1 = model.encode_batch(kind, &store, &b1).unwrap();
            let g2 = model.encode_batch(kind, &store, &b2).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                for (x, y) in g1[i].mean().iter().zip(g2[j].mean()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_decoder_repeats_last_position() {
        let model = TrajectoryModel::new(small_cfg()).unwrap();
        let mut store = model.init_params(3).unwrap();
        zero_prefix(&mut store, "dec.");
        let out = model
            .decode_future(&store, &[0.3, -1.0, 2.0], &[0.1; 10], [0.2, 0.1], [4.0, -2.0])
            .unwrap();
        assert_eq!(out.len(), 12);
        assert!(out.iter().all(|p| *p == [4.0, -2.0]));
    }

    #[test]
    fn different_latents_give_different_futures() {
        let model = TrajectoryModel::new(small_cfg()).unwrap();
        let store = model.init_params(3).unwrap();
        let f = [0.1; 10];
        let a = model.decode_future(&store, &[0.3, -1.0, 2.0], &f, [0.2, 0.1], [0.0, 0.0]).unwrap();
        let b = model.decode_future(&store, &[-0.5, 0.4, 0.0], &f, [0.2, 0.1], [0.0, 0.0]).unwrap();
        assert_ne!(a, b);
        assert!(model.decode_future(&store, &[0.0; 2], &f, [0.0; 2], [0.0; 2]).is_err());
    }

    #[test]
    fn fusion_sharpens() {
        let a = DiagGaussian::new(vec![0.0, 1.0], vec![1.0, 0.5]).unwrap();
        let b = DiagGaussian::new(vec![2.0, -1.0], vec![2.0, 0.5]).unwrap();
        let f = fuse_posteriors(&a, &b).unwrap();
        for i in 0..2 {
            assert!(f.std()[i] < a.std()[i].min(b.std()[i]));
        }
        let mut tape = Tape::new();
        let m1 = tape.constant(Matrix::row_vector(vec![0.0, 1.0]));
        let s1 = tape.constant(Matrix::row_vector(vec![1.0, 0.5]));
        let m2 = tape.constant(Matrix::row_vector(vec![2.0, -1.0]));
        let s2 = tape.constant(Matrix::row_vector(vec![2.0, 0.5]));
        let (m, s) = TrajectoryModel::fuse(&mut tape, m1, s1, m2, s2);
        for i in 0..2 {
            assert!((tape.value(m).as_slice()[i] - f.mean()[i]).abs() < 1e-12);
            assert!((tape.value(s).as_slice()[i] - f.std()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn predictions_have_expected_shape() {
        let model = TrajectoryModel::new(small_cfg()).unwrap();
        let store = model.init_params(5).unwrap();
        let dom = domain();
        let scenes: Vec<&TrajectoryScene> = dom.train.iter().collect();
        let b = TrajectoryBatch::from_scenes(&scenes, 8, 12).unwrap();
        let p = model.predict_samples(&store, &b, 4, 0).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|m| m.shape() == (15, 24)));
        assert_ne!(p[0], p[1]);
        assert_eq!(p, model.predict_samples(&store, &b, 4, 0).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn fusion_shrinks_every_std(
            m in proptest::collection::vec(-5.0f64..5.0, 6),
            s in proptest::collection::vec(0.01f64..5.0, 6),
        ) {
            let z = DiagGaussian::new(m[..3].to_vec(), s[..3].to_vec()).unwrap();
            let c = DiagGaussian::new(m[3..].to_vec(), s[3..].to_vec()).unwrap();
            let f = fuse_posteriors(&z, &c).unwrap();
            for j in 0..3 {
                proptest::prop_assert!(f.std()[j] < z.std()[j].min(c.std()[j]));
                let (lo, hi) = (z.mean()[j].min(c.mean()[j]), z.mean()[j].max(c.mean()[j]));
                proptest::prop_assert!(f.mean()[j] >= lo - 1e-12 && f.mean()[j] <= hi + 1e-12);
            }
        }
    }
}
