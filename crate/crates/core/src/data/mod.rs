//! Trajectory scenes, task domains, synthetic generation and text I/O.

mod loader;
mod synthetic;
mod window;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loader::{
    load_domain_dir, load_trajectory_file, parse_trajectories, save_domain_dir, scenes_to_text,
    write_trajectory_file,
};
pub use synthetic::{generate_circle_crossing, generate_domain, SyntheticConfig};
pub use window::{window_split, SceneWindow};

/// Frames in the observed part of a window.
pub const DEFAULT_OBS_LEN: usize = 8;
/// Frames in the predicted part of a window.
pub const DEFAULT_PRED_LEN: usize = 12;

pub type Point = [f64; 2];

/// One multi-agent scene: absolute positions in meters, one row per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScene {
    pub scene_id: u64,
    pub agent_ids: Vec<u64>,
    /// `positions[agent][frame]`.
    pub positions: Vec<Vec<Point>>,
}

impl TrajectoryScene {
    pub fn new(scene_id: u64, agent_ids: Vec<u64>, positions: Vec<Vec<Point>>) -> Result<Self> {
        let scene = Self {
            scene_id,
            agent_ids,
            positions,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn num_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn num_frames(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Empty("scene agents"));
        }
        if self.agent_ids.len() != self.positions.len() {
            return Err(Error::DimensionMismatch {
                expected: self.positions.len(),
                got: self.agent_ids.len(),
            });
        }
        let frames = self.num_frames();
        for track in &self.positions {
            if track.len() != frames {
                return Err(Error::InvalidValue(format!(
                    "scene {}: agents have differing frame counts",
                    self.scene_id
                )));
            }
            if track.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!("scene {}: non-finite coordinate", self.scene_id)));
            }
        }
        Ok(())
    }

    /// Same scene with every position shifted by `offset`.
    pub fn translated(&self, offset: Point) -> Self {
        let mut out = self.clone();
        for track in &mut out.positions {
            for p in track {
                p[0] += offset[0];
                p[1] += offset[1];
            }
        }
        out
    }

    /// Minimum pairwise agent distance over all frames (`inf` for one agent).
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for f in 0..self.num_frames() {
            for a in 0..self.num_agents() {
                for b in a + 1..self.num_agents() {
                    let p = self.positions[a][f];
                    let q = self.positions[b][f];
                    best = best.min((p[0] - q[0]).hypot(p[1] - q[1]));
                }
            }
        }
        best
    }
}

/// One continual-learning task: an environment with train/val/test scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDomain {
    pub name: String,
    pub min_distance: Option<f64>,
    pub train: Vec<TrajectoryScene>,
    pub val: Vec<TrajectoryScene>,
    pub test: Vec<TrajectoryScene>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidValue(format!("unknown split `{other}`"))),
        }
    }
}

impl TaskDomain {
    pub fn new(
        name: impl Into<String>,
        min_distance: Option<f64>,
        train: Vec<TrajectoryScene>,
        val: Vec<TrajectoryScene>,
        test: Vec<TrajectoryScene>,
    ) -> Result<Self> {
        let d = Self {
            name: name.into(),
            min_distance,
            train,
            val,
            test,
        };
        d.validate()?;
        Ok(d)
    }

    /// Splits `scenes` in order: the last 20% to test, the 10% before to val.
    pub fn from_scenes(name: impl Into<String>, min_distance: Option<f64>, mut scenes: Vec<TrajectoryScene>) -> Result<Self> {
        let n = scenes.len();
        let n_test = n / 5;
        let n_val = n / 10;
        let test = scenes.split_off(n - n_test);
        let val = scenes.split_off(n - n_test - n_val);
        Self::new(name, min_distance, scenes, val, test)
    }

    pub fn split(&self, split: Split) -> &[TrajectoryScene] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Empty("train split"));
        }
        let mut seen = HashSet::new();
        for s in self.train.iter().chain(&self.val).chain(&self.test) {
            s.validate()?;
            if !seen.insert(s.scene_id) {
                return Err(Error::InvalidValue(format!(
                    "{}: scene {} appears in more than one split",
                    self.name, s.scene_id
                )));
            }
        }
        Ok(())
    }

    /// Number of agents over all training scenes.
    pub fn train_agent_count(&self) -> usize {
        self.train.iter().map(TrajectoryScene::num_agents).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(id: u64) -> TrajectoryScene {
        TrajectoryScene::new(id, vec![0], vec![vec![[0.0, 0.0]; 20]]).unwrap()
    }

    #[test]
    fn overlapping_splits_rejected() {
        assert!(TaskDomain::new("t", None, vec![scene(1)], vec![scene(1)], vec![]).is_err());
        assert!(TaskDomain::new("t", None, vec![], vec![scene(1)], vec![]).is_err());
        assert!(TaskDomain::new("t", None, vec![scene(1)], vec![scene(2)], vec![scene(3)]).is_ok());
    }

    #[test]
    fn ragged_scene_rejected() {
        assert!(TrajectoryScene::new(0, vec![0, 1], vec![vec![[0.0, 0.0]; 20], vec![[0.0, 0.0]; 19]]).is_err());
        assert!(TrajectoryScene::new(0, vec![0], vec![vec![[f64::NAN, 0.0]; 20]]).is_err());
    }

    #[test]
    fn from_scenes_proportions() {
        let scenes = (0..10).map(scene).collect();
        let d = TaskDomain::from_scenes("x", None, scenes).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (7, 1, 2));
        let d = TaskDomain::from_scenes("x", None, vec![scene(0)]).unwrap();
        assert_eq!(d.train.len(), 1);
    }
}
