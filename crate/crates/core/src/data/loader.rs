//! Whitespace-separated `frame_id agent_id x y` trajectory files.
//!
//! Consecutive distinct frame ids are treated as consecutive model frames.
//! Scenes are cut by sliding a window of `obs_len + pred_len` frames with
//! stride one; an agent joins a window only if it is present in every frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Point, Split, TaskDomain, TrajectoryScene, DEFAULT_OBS_LEN, DEFAULT_PRED_LEN};
use crate::error::{Error, Result};

/// Parses file contents into scenes with windows of `window` frames.
pub fn parse_trajectories(text: &str, path: &Path, window: usize) -> Result<Vec<TrajectoryScene>> {
    // agent -> frame -> position
    let mut tracks: BTreeMap<i64, BTreeMap<i64, Point>> = BTreeMap::new();
    let mut frames: Vec<i64> = Vec::new();
    let mut rows = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields `frame_id agent_id x y`, found {}", fields.len())));
        }
        let mut vals = [0.0f64; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("non-numeric field `{f}`")))?;
        }
        let frame = vals[0].round() as i64;
        let agent = vals[1].round() as i64;
        tracks.entry(agent).or_default().insert(frame, [vals[2], vals[3]]);
        frames.push(frame);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            msg: "no trajectory rows".into(),
        });
    }
    frames.sort_unstable();
    frames.dedup();

    let mut scenes = Vec::new();
    if frames.len() < window {
        return Ok(scenes);
    }
    for start in 0..=frames.len() - window {
        let span = &frames[start..start + window];
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        for (&agent, track) in &tracks {
            let pts: Option<Vec<Point>> = span.iter().map(|f| track.get(f).copied()).collect();
            if let Some(pts) = pts {
                ids.push(agent as u64);
                positions.push(pts);
            }
        }
        if !positions.is_empty() {
            scenes.push(TrajectoryScene::new(scenes.len() as u64, ids, positions)?);
        }
    }
    Ok(scenes)
}

/// Loads one file as a task named after the file stem, split 70/10/20 in scene order.
pub fn load_trajectory_file(path: impl AsRef<Path>) -> Result<TaskDomain> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let scenes = parse_trajectories(&text, path, DEFAULT_OBS_LEN + DEFAULT_PRED_LEN)?;
    if scenes.is_empty() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            msg: "no complete windows".into(),
        });
    }
    let name = path
        .file_stem()
        .map_or_else(|| "trajectories".to_owned(), |s| s.to_string_lossy().into_owned());
    TaskDomain::from_scenes(name, None, scenes)
}

/// Text rendering of `scenes`, one frame block per scene so that windows
/// never straddle scenes. Only the first `frames` frames of each scene are written.
pub fn scenes_to_text(scenes: &[TrajectoryScene], frames: usize) -> String {
    let mut out = String::new();
    for (k, s) in scenes.iter().enumerate() {
        let n = frames.min(s.num_frames());
        for t in 0..n {
            let frame = k * frames + t;
            for (a, id) in s.agent_ids.iter().enumerate() {
                let p = s.positions[a][t];
                // `{}` on f64 prints the shortest string that round-trips.
                let _ = writeln!(out, "{frame} {id} {} {}", p[0], p[1]);
            }
        }
    }
    out
}

pub fn write_trajectory_file(scenes: &[TrajectoryScene], frames: usize, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, scenes_to_text(scenes, frames))?;
    Ok(())
}

fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.txt", split.as_str()))
}

/// Writes `train.txt`, `val.txt`, `test.txt` and a `domain.txt` descriptor.
pub fn save_domain_dir(domain: &TaskDomain, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    // The shortest scene bounds the window so every scene survives the round trip.
    let window = [Split::Train, Split::Val, Split::Test]
        .iter()
        .flat_map(|&s| domain.split(s))
        .map(TrajectoryScene::num_frames)
        .min()
        .unwrap_or(DEFAULT_OBS_LEN + DEFAULT_PRED_LEN);
    for split in [Split::Train, Split::Val, Split::Test] {
        write_trajectory_file(domain.split(split), window, split_path(dir, split))?;
    }
    let mut meta = format!("name={}\nframes={window}\n", domain.name);
    if let Some(d) = domain.min_distance {
        let _ = writeln!(meta, "min_distance={d}");
    }
    fs::write(dir.join("domain.txt"), meta)?;
    Ok(())
}

/// Reads a directory written by [`save_domain_dir`].
pub fn load_domain_dir(dir: impl AsRef<Path>) -> Result<TaskDomain> {
    let dir = dir.as_ref();
    let meta_path = dir.join("domain.txt");
    let meta = fs::read_to_string(&meta_path)?;
    let mut name = None;
    let mut min_distance = None;
    let mut window = DEFAULT_OBS_LEN + DEFAULT_PRED_LEN;
    for (i, line) in meta.lines().enumerate() {
        let Some((k, v)) = line.split_once('=') else { continue };
        match k.trim() {
            "name" => name = Some(v.trim().to_owned()),
            "min_distance" => {
                min_distance = Some(v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: meta_path.clone(),
                    line: i + 1,
                    msg: e.to_string(),
                })?)
            }
            "frames" => {
                window = v.trim().parse::<usize>().map_err(|e| Error::Parse {
                    path: meta_path.clone(),
                    line: i + 1,
                    msg: e.to_string(),
                })?
            }
            _ => {}
        }
    }
    let name = name.ok_or_else(|| Error::Malformed {
        path: meta_path.clone(),
        msg: "missing name".into(),
    })?;
    let mut next_id = 0u64;
    let mut load = |split: Split| -> Result<Vec<TrajectoryScene>> {
        let p = split_path(dir, split);
        let text = fs::read_to_string(&p)?;
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let mut scenes = parse_trajectories(&text, &p, window)?;
        for s in &mut scenes {
            s.scene_id = next_id;
            next_id += 1;
        }
        Ok(scenes)
    };
    let train = load(Split::Train)?;
    let val = load(Split::Val)?;
    let test = load(Split::Test)?;
    TaskDomain::new(name, min_distance, train, val, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_domain, window_split, SyntheticConfig};

    fn rows(n: usize) -> String {
        (0..n).map(|t| format!("{} 7 {} {}\n", t * 10, t as f64 * 0.5, 1.0)).collect()
    }

    #[test]
    fn single_agent_window_counts() {
        let p = Path::new("mem");
        assert_eq!(parse_trajectories(&rows(20), p, 20).unwrap().len(), 1);
        let two = parse_trajectories(&rows(21), p, 20).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[1].positions[0][0], [0.5, 1.0]);
        assert_eq!(two[0].agent_ids, vec![7]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_trajectories("a b c\n", Path::new("f.txt"), 20).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_trajectories("0 1 2.0 3.0\n1 1 x 3.0\n", Path::new("f.txt"), 20).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(parse_trajectories("", Path::new("f"), 20).is_err());
        assert!(parse_trajectories("\n# only a comment\n", Path::new("f"), 20).is_err());
    }

    #[test]
    fn agents_with_gaps_are_dropped_from_window() {
        let mut text = rows(20);
        for t in 0..20 {
            if t != 5 {
                text.push_str(&format!("{} 8 0 0\n", t * 10));
            }
        }
        let scenes = parse_trajectories(&text, Path::new("m"), 20).unwrap();
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].agent_ids, vec![7]);
    }

    #[test]
    fn domain_round_trip_preserves_windows() {
        let dom = generate_domain(&SyntheticConfig {
            n_train: 4,
            n_val: 1,
            n_test: 2,
            seed: 9,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_domain_dir(&dom, dir.path()).unwrap();
        let back = load_domain_dir(dir.path()).unwrap();
        assert_eq!(back.name, dom.name);
        assert_eq!(back.min_distance, dom.min_distance);
        for split in [Split::Train, Split::Val, Split::Test] {
            let a = dom.split(split);
            let b = back.split(split);
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                let wx = window_split(x, 8, 12).unwrap();
                let wy = window_split(y, 8, 12).unwrap();
                assert_eq!(wx.obs_disp, wy.obs_disp);
                assert_eq!(wx.fut_abs, wy.fut_abs);
                assert_eq!(wx.agent_ids, wy.agent_ids);
            }
        }
    }
}
