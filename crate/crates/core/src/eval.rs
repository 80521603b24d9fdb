//! Displacement metrics, best-of-k sampling, the continual evaluation
//! matrix, forgetting, and latent export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Point, Split, TaskDomain, TrajectoryScene};
use crate::error::{Error, Result};
use crate::model::{TrajectoryBatch, TrajectoryModel};
use crate::nn::{Matrix, ParamStore};
use crate::rng::derive_seed;

/// Scenes per forward pass during evaluation; bounds tape memory.
pub const EVAL_CHUNK: usize = 16;
/// Samples per agent in the reported best-of-k metric.
pub const DEFAULT_EVAL_SAMPLES: usize = 20;

fn check_shapes(pred: &[Point], gt: &[Point]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::Empty("trajectory frames"));
    }
    Ok(())
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean per-frame Euclidean distance.
pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_shapes(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| dist(*p, *g)).sum::<f64>() / gt.len() as f64)
}

/// Euclidean distance at the last frame.
pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_shapes(pred, gt)?;
    Ok(dist(pred[pred.len() - 1], gt[gt.len() - 1]))
}

fn row_points(row: &[f64]) -> Vec<Point> {
    row.chunks(2).map(|c| [c[0], c[1]]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentScore {
    pub ade: f64,
    pub fde: f64,
    /// Index of the chosen sample.
    pub sample: usize,
}

/// Scores each agent by its minimum-ADE sample among `samples` (first on ties).
pub fn score_samples(samples: &[Matrix], gt: &Matrix) -> Result<Vec<AgentScore>> {
    let first = samples.first().ok_or(Error::Empty("prediction samples"))?;
    if first.shape() != gt.shape() {
        return Err(Error::Shape {
            op: "score_samples",
            detail: format!("prediction {:?} vs ground truth {:?}", first.shape(), gt.shape()),
        });
    }
    (0..gt.rows())
        .map(|i| {
            let g = row_points(gt.row(i));
            let mut best: Option<AgentScore> = None;
            for (s, m) in samples.iter().enumerate() {
                let p = row_points(m.row(i));
                let a = ade(&p, &g)?;
                if best.is_none_or(|b| a < b.ade) {
                    best = Some(AgentScore {
                        ade: a,
                        fde: fde(&p, &g)?,
                        sample: s,
                    });
                }
            }
            Ok(best.expect("at least one sample"))
        })
        .collect()
}

/// Best-of-`k` per agent from the fused posterior, seeded by `seed`.
pub fn best_of_k(
    model: &TrajectoryModel,
    store: &ParamStore,
    batch: &TrajectoryBatch,
    k: usize,
    seed: u64,
) -> Result<Vec<AgentScore>> {
    let samples = model.predict_samples(store, batch, k, seed)?;
    score_samples(&samples, &batch.fut_abs)
}

/// Mean best-of-`k` ADE and FDE over every agent of `scenes`.
pub fn evaluate_scenes(
    model: &TrajectoryModel,
    store: &ParamStore,
    scenes: &[TrajectoryScene],
    k: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if scenes.is_empty() {
        return Err(Error::Empty("evaluation scenes"));
    }
    let cfg = model.config();
    let (mut sa, mut sf, mut n) = (0.0, 0.0, 0usize);
    for (ci, chunk) in scenes.chunks(EVAL_CHUNK).enumerate() {
        let refs: Vec<&TrajectoryScene> = chunk.iter().collect();
        let batch = TrajectoryBatch::from_scenes(&refs, cfg.obs_len, cfg.pred_len)?;
        for s in best_of_k(model, store, &batch, k, derive_seed(seed, &[ci as u64]))? {
            sa += s.ade;
            sf += s.fde;
            n += 1;
        }
    }
    Ok((sa / n as f64, sf / n as f64))
}

/// One line of the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// 1-based index of the last task trained.
    pub after_task: usize,
    /// 1-based index of the evaluated task.
    pub eval_task: usize,
    pub split: Split,
    pub ade: f64,
    pub fde: f64,
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "after_task,eval_task,split,ade,fde,seed";

/// CSV text with reals at 6 decimals.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{}",
            r.after_task, r.eval_task, r.split, r.ade, r.fde, r.seed
        );
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, metrics_csv(rows))?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            msg: format!("expected header `{METRICS_HEADER}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg,
        };
        let field = |j: usize| rec.get(j).ok_or_else(|| bad(format!("missing column {j}")));
        let num = |j: usize| -> Result<f64> { field(j)?.parse::<f64>().map_err(|e| bad(e.to_string())) };
        let int = |j: usize| -> Result<u64> { field(j)?.parse::<u64>().map_err(|e| bad(e.to_string())) };
        rows.push(MetricRow {
            after_task: int(0)? as usize,
            eval_task: int(1)? as usize,
            split: field(2)?.parse().map_err(|e: Error| bad(e.to_string()))?,
            ade: num(3)?,
            fde: num(4)?,
            seed: int(5)?,
        });
    }
    Ok(rows)
}

/// `(after_task, eval_task) -> ade` over the test split.
fn test_matrix(rows: &[MetricRow]) -> BTreeMap<(usize, usize), f64> {
    rows.iter()
        .filter(|r| r.split == Split::Test)
        .map(|r| ((r.after_task, r.eval_task), r.ade))
        .collect()
}

/// Per-task forgetting on the test split: final ADE minus the best ADE
/// seen at any point after the task was learned.
pub fn forgetting_matrix(rows: &[MetricRow]) -> Result<BTreeMap<usize, f64>> {
    let m = test_matrix(rows);
    let last = m.keys().map(|k| k.0).max().ok_or(Error::Empty("metric rows"))?;
    let mut out = BTreeMap::new();
    for t in 1..=last {
        let mut best = f64::INFINITY;
        for s in t..=last {
            let v = m
                .get(&(s, t))
                .ok_or_else(|| Error::InvalidValue(format!("missing metrics for after_task {s}, eval_task {t}")))?;
            best = best.min(*v);
        }
        out.insert(t, m[&(last, t)] - best);
    }
    Ok(out)
}

/// Mean test ADE and FDE over tasks `1..=after_task`, evaluated after `after_task`.
pub fn average_seen(rows: &[MetricRow], after_task: usize) -> Result<(f64, f64)> {
    let sel: Vec<&MetricRow> = rows
        .iter()
        .filter(|r| r.split == Split::Test && r.after_task == after_task && r.eval_task <= after_task)
        .collect();
    if sel.len() != after_task {
        return Err(Error::InvalidValue(format!(
            "expected {after_task} test rows after task {after_task}, found {}",
            sel.len()
        )));
    }
    let n = sel.len() as f64;
    Ok((
        sel.iter().map(|r| r.ade).sum::<f64>() / n,
        sel.iter().map(|r| r.fde).sum::<f64>() / n,
    ))
}

/// Aligned text table of averages over seen tasks, one line per task boundary.
pub fn report_table(rows: &[MetricRow]) -> Result<String> {
    let last = rows.iter().map(|r| r.after_task).max().ok_or(Error::Empty("metric rows"))?;
    let mut out = format!("{:>10} {:>10} {:>10}\n", "after_task", "avg_ade", "avg_fde");
    for t in 1..=last {
        let (a, f) = average_seen(rows, t)?;
        let _ = writeln!(out, "{t:>10} {a:>10.6} {f:>10.6}");
    }
    Ok(out)
}

/// CSV form of [`report_table`].
pub fn report_csv(rows: &[MetricRow]) -> Result<String> {
    let last = rows.iter().map(|r| r.after_task).max().ok_or(Error::Empty("metric rows"))?;
    let mut out = String::from("after_task,avg_ade,avg_fde\n");
    for t in 1..=last {
        let (a, f) = average_seen(rows, t)?;
        let _ = writeln!(out, "{t},{a:.6},{f:.6}");
    }
    Ok(out)
}

/// One exported context-posterior mean.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentRow {
    pub task_id: usize,
    pub agent_id: u64,
    pub mean: Vec<f64>,
}

/// Context-posterior means of every test agent of every task (task ids 1-based).
pub fn collect_latents(model: &TrajectoryModel, store: &ParamStore, tasks: &[TaskDomain]) -> Result<Vec<LatentRow>> {
    let cfg = model.config();
    let mut out = Vec::new();
    for (t, task) in tasks.iter().enumerate() {
        for chunk in task.test.chunks(EVAL_CHUNK) {
            let refs: Vec<&TrajectoryScene> = chunk.iter().collect();
            let batch = TrajectoryBatch::from_scenes(&refs, cfg.obs_len, cfg.pred_len)?;
            for (g, id) in model.encode_context(store, &batch)?.iter().zip(&batch.agent_ids) {
                out.push(LatentRow {
                    task_id: t + 1,
                    agent_id: *id,
                    mean: g.mean().to_vec(),
                });
            }
        }
    }
    Ok(out)
}

pub fn latents_csv(rows: &[LatentRow]) -> String {
    let d = rows.first().map_or(0, |r| r.mean.len());
    let mut out = String::from("task_id,agent_id");
    for j in 1..=d {
        let _ = write!(out, ",c{j}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{}", r.task_id, r.agent_id);
        for v in &r.mean {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes `task_id,agent_id,c1..cd`; returns the number of rows.
pub fn export_latents(
    model: &TrajectoryModel,
    store: &ParamStore,
    tasks: &[TaskDomain],
    path: impl AsRef<Path>,
) -> Result<usize> {
    let rows = collect_latents(model, store, tasks)?;
    fs::write(path, latents_csv(&rows))?;
    Ok(rows.len())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separation {
    /// Mean pairwise distance between per-task centroids.
    pub inter: f64,
    /// Mean distance of a point to its own task centroid, averaged over tasks.
    pub intra: f64,
    pub ratio: f64,
}

pub fn latent_separation(rows: &[LatentRow]) -> Result<Separation> {
    let mut groups: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.task_id).or_default().push(&r.mean);
    }
    if groups.len() < 2 {
        return Err(Error::InvalidValue("separation needs at least two tasks".into()));
    }
    let centroid = |pts: &[&[f64]]| -> Vec<f64> {
        let d = pts[0].len();
        (0..d).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64).collect()
    };
    let l2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let cents: Vec<Vec<f64>> = groups.values().map(|g| centroid(g)).collect();
    let intra = groups
        .values()
        .zip(&cents)
        .map(|(g, c)| g.iter().map(|p| l2(p, c)).sum::<f64>() / g.len() as f64)
        .sum::<f64>()
        / cents.len() as f64;
    let mut inter = 0.0;
    let mut pairs = 0;
    for i in 0..cents.len() {
        for j in i + 1..cents.len() {
            inter += l2(&cents[i], &cents[j]);
            pairs += 1;
        }
    }
    let inter = inter / pairs as f64;
    Ok(Separation {
        inter,
        intra,
        ratio: inter / intra.max(1e-300),
    })
}
