use crate::data::{window_split, SceneWindow, TrajectoryScene};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Agents of several scenes flattened into row-major model inputs.
///
/// Rows are agents; scene `k` owns rows `scene_offsets[k]..scene_offsets[k + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub scene_ids: Vec<u64>,
    pub scene_offsets: Vec<usize>,
    pub agent_ids: Vec<u64>,
    /// `A x 2(obs_len - 1)`: observed displacements, `(dx, dy)` per step.
    pub obs: Matrix,
    /// `A x 2 pred_len`: future displacements.
    pub fut: Matrix,
    /// `A x 2 pred_len`: future absolute positions.
    pub fut_abs: Matrix,
    /// `A x 2`: last observed absolute position.
    pub last_obs: Matrix,
    /// `A x A` neighbor mean-pooling operator, `None` when no agent has neighbors.
    pub pool: Option<Matrix>,
    pub obs_len: usize,
    pub pred_len: usize,
}

impl TrajectoryBatch {
    pub fn from_windows(windows: &[SceneWindow], obs_len: usize, pred_len: usize) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Empty("batch scenes"));
        }
        let n_agents: usize = windows.iter().map(SceneWindow::num_agents).sum();
        if windows.iter().any(|w| w.num_agents() == 0) {
            return Err(Error::Empty("scene agents"));
        }
        let ow = 2 * (obs_len - 1);
        let fw = 2 * pred_len;
        let mut obs = Matrix::zeros(n_agents, ow);
        let mut fut = Matrix::zeros(n_agents, fw);
        let mut fut_abs = Matrix::zeros(n_agents, fw);
        let mut last_obs = Matrix::zeros(n_agents, 2);
        let mut scene_offsets = vec![0];
        let mut agent_ids = Vec::with_capacity(n_agents);
        let mut row = 0;
        for w in windows {
            for a in 0..w.num_agents() {
                if w.obs_disp[a].len() != obs_len - 1 || w.fut_disp[a].len() != pred_len {
                    return Err(Error::Shape {
                        op: "batch",
                        detail: format!("scene {} window lengths do not match obs/pred", w.scene_id),
                    });
                }
                fill_row(obs.row_mut(row), &w.obs_disp[a]);
                fill_row(fut.row_mut(row), &w.fut_disp[a]);
                fill_row(fut_abs.row_mut(row), &w.fut_abs[a]);
                last_obs.row_mut(row).copy_from_slice(&w.last_obs[a]);
                agent_ids.push(w.agent_ids[a]);
                row += 1;
            }
            scene_offsets.push(row);
        }
        if !(obs.all_finite() && fut.all_finite() && last_obs.all_finite()) {
            return Err(Error::InvalidValue("non-finite coordinate in batch".into()));
        }
        let pool = pooling_matrix(&scene_offsets);
        Ok(Self {
            scene_ids: windows.iter().map(|w| w.scene_id).collect(),
            scene_offsets,
            agent_ids,
            obs,
            fut,
            fut_abs,
            last_obs,
            pool,
            obs_len,
            pred_len,
        })
    }

    pub fn from_scenes(scenes: &[&TrajectoryScene], obs_len: usize, pred_len: usize) -> Result<Self> {
        let windows = scenes
            .iter()
            .map(|s| window_split(s, obs_len, pred_len))
            .collect::<Result<Vec<_>>>()?;
        Self::from_windows(&windows, obs_len, pred_len)
    }

    pub fn num_agents(&self) -> usize {
        self.obs.rows()
    }

    pub fn num_scenes(&self) -> usize {
        self.scene_ids.len()
    }

    /// Last observed displacement per agent (`A x 2`).
    pub fn last_obs_disp(&self) -> Matrix {
        let w = self.obs.cols();
        let mut out = Matrix::zeros(self.num_agents(), 2);
        for i in 0..self.num_agents() {
            out.row_mut(i).copy_from_slice(&self.obs.row(i)[w - 2..]);
        }
        out
    }

    /// Agent rows of scene `k`.
    pub fn scene_rows(&self, k: usize) -> std::ops::Range<usize> {
        self.scene_offsets[k]..self.scene_offsets[k + 1]
    }
}

fn fill_row(dst: &mut [f64], pts: &[[f64; 2]]) {
    for (t, p) in pts.iter().enumerate() {
        dst[2 * t] = p[0];
        dst[2 * t + 1] = p[1];
    }
}

/// Row `a` averages the other agents of `a`'s scene; agents alone in their
/// scene pool to zero.
pub fn pooling_matrix(scene_offsets: &[usize]) -> Option<Matrix> {
    let n = *scene_offsets.last()?;
    let mut any = false;
    let mut p = Matrix::zeros(n, n);
    for w in scene_offsets.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let m = hi - lo;
        if m < 2 {
            continue;
        }
        any = true;
        let v = 1.0 / (m - 1) as f64;
        for a in lo..hi {
            for b in lo..hi {
                if a != b {
                    p[(a, b)] = v;
                }
            }
        }
    }
    any.then_some(p)
}
