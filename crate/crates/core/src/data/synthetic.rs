//! Circle-crossing scenes with a hard minimum inter-agent distance.
//!
//! Agents start on a circle and walk to the antipodal point. Inside `2d`
//! they repel each other, and every step is projected so that no pair is
//! ever closer than `d`: a step that would violate the bound is rotated
//! and shortened until it fits, or the agent waits for a frame.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Point, TaskDomain, TrajectoryScene, DEFAULT_OBS_LEN, DEFAULT_PRED_LEN};
use crate::error::{Error, Result};
use crate::rng::{rng_for, tags};

const RADIUS: f64 = 4.0;
const GOAL_TOLERANCE: f64 = 0.2;
const MAX_FRAMES: usize = 60;
const JITTER_FRACTION: f64 = 0.15;
const MAX_ATTEMPTS: u64 = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_agents: usize,
    /// Minimum pairwise distance in meters.
    pub min_distance: f64,
    /// Meters per frame.
    pub speed: f64,
    pub seed: u64,
    pub obs_len: usize,
    pub pred_len: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_val: 150,
            n_test: 250,
            n_agents: 5,
            min_distance: 0.4,
            speed: 0.25,
            seed: 0,
            obs_len: DEFAULT_OBS_LEN,
            pred_len: DEFAULT_PRED_LEN,
        }
    }
}

impl SyntheticConfig {
    pub fn domain_name(&self) -> String {
        format!("synthetic-d{}", self.min_distance)
    }
}

/// `n_scenes` scenes split 70/10/20 into train/val/test.
pub fn generate_circle_crossing(n_scenes: usize, n_agents: usize, d: f64, speed: f64, seed: u64) -> Result<TaskDomain> {
    let n_test = n_scenes / 5;
    let n_val = n_scenes / 10;
    generate_domain(&SyntheticConfig {
        n_train: n_scenes - n_test - n_val,
        n_val,
        n_test,
        n_agents,
        min_distance: d,
        speed,
        seed,
        ..SyntheticConfig::default()
    })
}

/// Generates a domain with explicit split sizes. Scene `i` depends only on
/// `(seed, i)`, so output is independent of evaluation order.
pub fn generate_domain(cfg: &SyntheticConfig) -> Result<TaskDomain> {
    validate(cfg)?;
    let total = cfg.n_train + cfg.n_val + cfg.n_test;
    let scenes = (0..total)
        .map(|i| generate_scene(cfg, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let mut it = scenes.into_iter();
    let train = it.by_ref().take(cfg.n_train).collect();
    let val = it.by_ref().take(cfg.n_val).collect();
    let test = it.collect();
    TaskDomain::new(cfg.domain_name(), Some(cfg.min_distance), train, val, test)
}

fn validate(cfg: &SyntheticConfig) -> Result<()> {
    if cfg.n_agents < 2 {
        return Err(Error::InvalidValue("circle crossing needs at least 2 agents".into()));
    }
    if !(cfg.min_distance > 0.0) || !(cfg.speed > 0.0) {
        return Err(Error::InvalidValue("min_distance and speed must be positive".into()));
    }
    let spacing = 2.0 * RADIUS / cfg.n_agents as f64;
    if cfg.min_distance >= spacing {
        return Err(Error::InvalidValue(format!(
            "min_distance {} is unsatisfiable for {} agents on a {RADIUS} m circle (limit {spacing})",
            cfg.min_distance, cfg.n_agents
        )));
    }
    if cfg.n_train == 0 {
        return Err(Error::Empty("train split"));
    }
    Ok(())
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn generate_scene(cfg: &SyntheticConfig, index: u64) -> Result<TrajectoryScene> {
    let need = cfg.obs_len + cfg.pred_len;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(cfg.seed, &[tags::DATA, index, attempt]);
        if let Some(positions) = simulate(cfg, &mut rng) {
            if positions[0].len() >= need {
                let n = cfg.n_agents as u64;
                let ids = (0..n).map(|a| index * n + a).collect();
                return TrajectoryScene::new(index, ids, positions);
            }
        }
    }
    Err(Error::InvalidValue(format!("scene {index}: could not generate a long enough scene")))
}

fn simulate(cfg: &SyntheticConfig, rng: &mut impl Rng) -> Option<Vec<Vec<Point>>> {
    let n = cfg.n_agents;
    let d = cfg.min_distance;
    let spacing = 2.0 * PI / n as f64;
    let base: f64 = rng.gen_range(0.0..2.0 * PI);
    let mut cur: Vec<Point> = Vec::with_capacity(n);
    let mut goals: Vec<Point> = Vec::with_capacity(n);
    for i in 0..n {
        let jitter = rng.gen_range(-JITTER_FRACTION..JITTER_FRACTION) * spacing;
        let theta = base + i as f64 * spacing + jitter;
        let p = [RADIUS * theta.cos(), RADIUS * theta.sin()];
        cur.push(p);
        goals.push([-p[0], -p[1]]);
    }
    for a in 0..n {
        for b in a + 1..n {
            if dist(cur[a], cur[b]) < d {
                return None;
            }
        }
    }

    let mut tracks: Vec<Vec<Point>> = cur.iter().map(|p| vec![*p]).collect();
    for _ in 1..MAX_FRAMES {
        if (0..n).all(|i| dist(cur[i], goals[i]) <= GOAL_TOLERANCE) {
            break;
        }
        let mut next = cur.clone();
        for i in 0..n {
            let to_goal = [goals[i][0] - cur[i][0], goals[i][1] - cur[i][1]];
            let remaining = to_goal[0].hypot(to_goal[1]);
            if remaining <= GOAL_TOLERANCE {
                continue;
            }
            let mut v = [to_goal[0] / remaining, to_goal[1] / remaining];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let r = dist(cur[i], cur[j]);
                if r < 2.0 * d && r > 0.0 {
                    let push = (2.0 * d - r) / (2.0 * d);
                    v[0] += push * (cur[i][0] - cur[j][0]) / r;
                    v[1] += push * (cur[i][1] - cur[j][1]) / r;
                }
            }
            let norm = v[0].hypot(v[1]);
            if norm < 1e-12 {
                v = [to_goal[0] / remaining, to_goal[1] / remaining];
            } else {
                v = [v[0] / norm, v[1] / norm];
            }
            let step = cfg.speed.min(remaining);
            next[i] = project_step(i, cur[i], v, step, &next, d);
        }
        cur = next;
        for (t, p) in tracks.iter_mut().zip(&cur) {
            t.push(*p);
        }
    }
    Some(tracks)
}

/// First feasible candidate among rotations/shortenings of the desired step,
/// checked against the already-updated positions in `others`. Falls back to
/// staying in place, which is always feasible.
fn project_step(i: usize, from: Point, dir: Point, step: f64, others: &[Point], d: f64) -> Point {
    const ANGLES: [f64; 13] = [
        0.0,
        PI / 12.0,
        -PI / 12.0,
        PI / 6.0,
        -PI / 6.0,
        PI / 4.0,
        -PI / 4.0,
        PI / 3.0,
        -PI / 3.0,
        5.0 * PI / 12.0,
        -5.0 * PI / 12.0,
        PI / 2.0,
        -PI / 2.0,
    ];
    for scale in [1.0, 0.5, 0.25] {
        for a in ANGLES {
            let (s, c) = a.sin_cos();
            let rd = [dir[0] * c - dir[1] * s, dir[0] * s + dir[1] * c];
            let p = [from[0] + rd[0] * step * scale, from[1] + rd[1] * step * scale];
            let ok = others
                .iter()
                .enumerate()
                .all(|(j, q)| j == i || dist(p, *q) >= d);
            if ok {
                return p;
            }
        }
    }
    from
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, d: f64) -> TaskDomain {
        generate_domain(&SyntheticConfig {
            n_train: 12,
            n_val: 2,
            n_test: 3,
            min_distance: d,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn two_agents_respect_min_distance() {
        let dom = generate_circle_crossing(20, 2, 0.5, 0.25, 3).unwrap();
        for s in dom.train.iter().chain(&dom.val).chain(&dom.test) {
            assert!(s.min_pairwise_distance() >= 0.5 - 1e-9);
        }
    }

    #[test]
    fn every_scene_long_enough() {
        let dom = small(1, 0.8);
        assert!(dom.train.iter().all(|s| s.num_frames() >= 20));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(small(5, 0.4), small(5, 0.4));
        assert_ne!(small(5, 0.4).train[0], small(6, 0.4).train[0]);
    }

    #[test]
    fn splits_and_name() {
        let dom = generate_circle_crossing(10, 3, 0.4, 0.25, 0).unwrap();
        assert_eq!((dom.train.len(), dom.val.len(), dom.test.len()), (7, 1, 2));
        assert_eq!(dom.name, "synthetic-d0.4");
    }

    #[test]
    fn unsatisfiable_distance_rejected() {
        assert!(generate_circle_crossing(10, 5, 1.6, 0.25, 0).is_err());
        assert!(generate_circle_crossing(10, 1, 0.2, 0.25, 0).is_err());
        assert!(generate_circle_crossing(10, 5, 0.0, 0.25, 0).is_err());
    }

    #[test]
    fn larger_distance_changes_paths() {
        let a = small(2, 0.2);
        let b = small(2, 0.8);
        assert_ne!(a.train[0].positions, b.train[0].positions);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn generated_scenes_respect_min_distance(seed in 0u64..1000, d in 0.1f64..1.2, agents in 2usize..6) {
            let dom = generate_domain(&SyntheticConfig {
                n_train: 3,
                n_val: 0,
                n_test: 0,
                n_agents: agents,
                min_distance: d,
                seed,
                ..SyntheticConfig::default()
            });
            let Ok(dom) = dom else { return Ok(()) };
            for scene in &dom.train {
                for t in 0..scene.positions[0].len() {
                    for a in 0..agents {
                        for b in a + 1..agents {
                            proptest::prop_assert!(dist(scene.positions[a][t], scene.positions[b][t]) >= d - 1e-9);
                        }
                    }
                }
            }
        }
    }
}
