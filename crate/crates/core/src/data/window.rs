use serde::{Deserialize, Serialize};

use super::{Point, TrajectoryScene};
use crate::error::{Error, Result};

/// Observed/future split of one scene, in displacement form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneWindow {
    pub scene_id: u64,
    pub agent_ids: Vec<u64>,
    /// First observed absolute position per agent.
    pub first_obs: Vec<Point>,
    /// `obs_len - 1` displacements per agent.
    pub obs_disp: Vec<Vec<Point>>,
    /// Last observed absolute position per agent.
    pub last_obs: Vec<Point>,
    /// `pred_len` displacements per agent, the first relative to `last_obs`.
    pub fut_disp: Vec<Vec<Point>>,
    /// Ground-truth future absolute positions.
    pub fut_abs: Vec<Vec<Point>>,
}

impl SceneWindow {
    pub fn num_agents(&self) -> usize {
        self.agent_ids.len()
    }

    /// Observed absolute positions rebuilt from `first_obs` and the displacements.
    pub fn reconstruct_observed(&self) -> Vec<Vec<Point>> {
        self.first_obs
            .iter()
            .zip(&self.obs_disp)
            .map(|(start, disp)| cumulative(*start, disp, true))
            .collect()
    }

    /// Future absolute positions rebuilt from `last_obs` and the displacements.
    pub fn reconstruct_future(&self) -> Vec<Vec<Point>> {
        self.last_obs
            .iter()
            .zip(&self.fut_disp)
            .map(|(start, disp)| cumulative(*start, disp, false))
            .collect()
    }
}

fn cumulative(start: Point, disp: &[Point], include_start: bool) -> Vec<Point> {
    let mut out = Vec::with_capacity(disp.len() + 1);
    if include_start {
        out.push(start);
    }
    let mut p = start;
    for d in disp {
        p = [p[0] + d[0], p[1] + d[1]];
        out.push(p);
    }
    out
}

fn diffs(track: &[Point]) -> Vec<Point> {
    track.windows(2).map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]]).collect()
}

/// First `obs_len` frames observed, next `pred_len` frames to predict.
pub fn window_split(scene: &TrajectoryScene, obs_len: usize, pred_len: usize) -> Result<SceneWindow> {
    if obs_len < 2 || pred_len < 1 {
        return Err(Error::InvalidValue(format!(
            "obs_len must be >= 2 and pred_len >= 1 (got {obs_len}, {pred_len})"
        )));
    }
    let need = obs_len + pred_len;
    if scene.num_frames() < need {
        return Err(Error::InvalidValue(format!(
            "scene {} has {} frames, needs {need}",
            scene.scene_id,
            scene.num_frames()
        )));
    }
    let mut w = SceneWindow {
        scene_id: scene.scene_id,
        agent_ids: scene.agent_ids.clone(),
        first_obs: Vec::new(),
        obs_disp: Vec::new(),
        last_obs: Vec::new(),
        fut_disp: Vec::new(),
        fut_abs: Vec::new(),
    };
    for track in &scene.positions {
        let obs = &track[..obs_len];
        w.first_obs.push(obs[0]);
        w.obs_disp.push(diffs(obs));
        w.last_obs.push(obs[obs_len - 1]);
        w.fut_disp.push(diffs(&track[obs_len - 1..need]));
        w.fut_abs.push(track[obs_len..need].to_vec());
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moving_scene(frames: usize) -> TrajectoryScene {
        let a: Vec<Point> = (0..frames).map(|t| [0.1 * t as f64, 0.3 * (t as f64).sin()]).collect();
        let b: Vec<Point> = (0..frames).map(|t| [1.0 - 0.2 * t as f64, 2.0 + 0.7 * t as f64]).collect();
        TrajectoryScene::new(3, vec![10, 11], vec![a, b]).unwrap()
    }

    #[test]
    fn lengths_for_twenty_frames() {
        let w = window_split(&moving_scene(20), 8, 12).unwrap();
        assert!(w.obs_disp.iter().all(|d| d.len() == 7));
        assert!(w.fut_disp.iter().all(|d| d.len() == 12));
        assert_eq!(w.last_obs[1], [1.0 - 0.2 * 7.0, 2.0 + 0.7 * 7.0]);
    }

    #[test]
    fn stationary_agent_has_zero_displacements() {
        let s = TrajectoryScene::new(0, vec![0], vec![vec![[3.0, -1.0]; 20]]).unwrap();
        let w = window_split(&s, 8, 12).unwrap();
        assert!(w.obs_disp[0].iter().chain(&w.fut_disp[0]).all(|d| *d == [0.0, 0.0]));
    }

    #[test]
    fn displacements_sum_back_to_positions() {
        let s = moving_scene(25);
        let w = window_split(&s, 8, 12).unwrap();
        let obs = w.reconstruct_observed();
        let fut = w.reconstruct_future();
        for a in 0..2 {
            for (t, p) in obs[a].iter().enumerate() {
                assert!((p[0] - s.positions[a][t][0]).abs() < 1e-12);
                assert!((p[1] - s.positions[a][t][1]).abs() < 1e-12);
            }
            for (t, p) in fut[a].iter().enumerate() {
                assert!((p[0] - s.positions[a][8 + t][0]).abs() < 1e-12);
                assert!((p[1] - s.positions[a][8 + t][1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_few_frames_rejected() {
        assert!(window_split(&moving_scene(19), 8, 12).is_err());
    }
}
