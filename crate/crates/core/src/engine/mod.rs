//! Task-sequential training with alternating prior and model updates.
//!
//! Each task runs `epochs_per_task` epochs. On scheduled epochs the prior
//! queue is updated from the epoch's first batch before any model step; every
//! batch then takes one Adam step on the model objective. At the end of a
//! task the queue is pruned to capacity and all seen tasks are evaluated.

mod checkpoint;
mod config;
mod schedule;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_path, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use config::{parse_kv, parse_override, Mode, TrainConfig};
pub use schedule::{component_schedule, schedule_period};

use crate::data::{window_split, SceneWindow, Split, TaskDomain};
use crate::error::{Error, Result};
use crate::eval::{evaluate_scenes, metrics_csv, MetricRow};
use crate::memory::{
    aggregated_posterior_target, component_posterior, init_offline_components, init_online_component, materialize,
    optimize_component, optimize_weight, MemoryQueue, PriorComponent,
};
use crate::model::{LossParts, TrajectoryBatch, TrajectoryModel};
use crate::nn::{Matrix, ParamStore};
use crate::rng::{derive_seed, rng_for, tags};

/// Mean loss parts of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub task: usize,
    pub epoch: usize,
    pub loss: LossParts,
    pub steps: usize,
    pub prior_updated: bool,
    pub queue_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    /// 1-based task index.
    pub task: usize,
    pub name: String,
    pub epochs: Vec<EpochLog>,
    pub components_added: usize,
    pub queue_len_before_prune: usize,
    pub pruned: usize,
    pub queue_len: usize,
    pub optimizer_steps: usize,
    /// Validation ADE/FDE on this task, when it has a validation split.
    pub val: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub tasks: Vec<TaskReport>,
    pub metrics: Vec<MetricRow>,
    pub pretrain_steps: usize,
    pub optimizer_steps: usize,
}

/// Model parameters, prior queue and counters for one run.
pub struct Trainer {
    cfg: TrainConfig,
    model: TrajectoryModel,
    store: ParamStore,
    queue: MemoryQueue,
    task_names: Vec<String>,
    optimizer_steps: usize,
    pretrain_steps: usize,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

fn windows_of(task: &TaskDomain, split: Split, obs: usize, pred: usize) -> Result<Vec<SceneWindow>> {
    task.split(split).iter().map(|s| window_split(s, obs, pred)).collect()
}

fn batch_of(windows: &[SceneWindow], idx: &[usize], obs: usize, pred: usize) -> Result<TrajectoryBatch> {
    let picked: Vec<SceneWindow> = idx.iter().map(|&i| windows[i].clone()).collect();
    TrajectoryBatch::from_windows(&picked, obs, pred)
}

fn add_parts(acc: &mut LossParts, p: &LossParts) {
    acc.total += p.total;
    acc.pred += p.pred;
    acc.rec += p.rec;
    acc.kl += p.kl;
    acc.sym += p.sym;
}

fn scale_parts(p: &mut LossParts, s: f64) {
    p.total *= s;
    p.pred *= s;
    p.rec *= s;
    p.kl *= s;
    p.sym *= s;
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = TrajectoryModel::new(cfg.model_config())?;
        let store = model.init_params(cfg.seed)?;
        let queue = MemoryQueue::new(cfg.capacity)?;
        Ok(Self {
            cfg,
            model,
            store,
            queue,
            task_names: Vec::new(),
            optimizer_steps: 0,
            pretrain_steps: 0,
            verbose: false,
        })
    }

    /// Restores a run; the checkpoint's config is used as is.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let mut t = Self::new(ck.config)?;
        let names: Vec<String> = t.store.names().map(str::to_owned).collect();
        let ck_names: Vec<&str> = ck.params.names().collect();
        if names.iter().map(String::as_str).ne(ck_names.iter().copied()) {
            return Err(Error::Contract("checkpoint parameters do not match the model".into()));
        }
        for n in &names {
            let (a, b) = (t.store.value(n).unwrap(), ck.params.value(n).unwrap());
            if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
                return Err(Error::Contract(format!("checkpoint parameter {n} has the wrong shape")));
            }
        }
        if ck.queue.capacity() != t.cfg.capacity {
            return Err(Error::Contract("checkpoint queue capacity differs from config".into()));
        }
        t.store = ck.params;
        t.queue = ck.queue;
        t.task_names = ck.task_names;
        t.optimizer_steps = ck.optimizer_steps;
        t.pretrain_steps = ck.pretrain_steps;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            tasks_done: self.task_names.len(),
            task_names: self.task_names.clone(),
            config: self.cfg.clone(),
            params: self.store.clone(),
            queue: self.queue.clone(),
            optimizer_steps: self.optimizer_steps,
            pretrain_steps: self.pretrain_steps,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &TrajectoryModel {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn queue(&self) -> &MemoryQueue {
        &self.queue
    }

    pub fn tasks_done(&self) -> usize {
        self.task_names.len()
    }

    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    /// Model-update steps taken so far, excluding pretraining.
    pub fn optimizer_steps(&self) -> usize {
        self.optimizer_steps
    }

    pub fn pretrain_steps(&self) -> usize {
        self.pretrain_steps
    }

    fn dims(&self) -> (usize, usize) {
        (self.cfg.obs_len, self.cfg.pred_len)
    }

    fn apply_grads(&mut self) {
        if self.cfg.grad_clip > 0.0 {
            self.store.clip_grad_norm(self.cfg.grad_clip);
        }
        self.store.adam_step(&self.cfg.adam());
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        if self.store.all_finite() {
            Ok(())
        } else {
            Err(Error::InvalidValue(format!("non-finite parameters after {what}")))
        }
    }

    /// Prior-free warm-up of the encoders and decoders on `task`, after which
    /// the context encoder starts from the trajectory encoder's weights.
    pub fn pretrain(&mut self, task: &TaskDomain) -> Result<usize> {
        let (obs, pred) = self.dims();
        let windows = windows_of(task, Split::Train, obs, pred)?;
        if windows.is_empty() {
            return Err(Error::Empty("training scenes"));
        }
        let mut steps = 0;
        for epoch in 1..=self.cfg.pretrain_epochs {
            let mut order: Vec<usize> = (0..windows.len()).collect();
            order.shuffle(&mut rng_for(self.cfg.seed, &[tags::PRETRAIN, tags::SHUFFLE, epoch as u64]));
            for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
                let batch = batch_of(&windows, idx, obs, pred)?;
                let seed = derive_seed(self.cfg.seed, &[tags::PRETRAIN, epoch as u64, b as u64]);
                self.store.zero_grads();
                self.model.pretrain_loss(&self.store, &batch, seed)?.backprop(&mut self.store)?;
                self.apply_grads();
                steps += 1;
            }
            self.check_finite(&format!("pretraining epoch {epoch}"))?;
        }
        if self.cfg.pretrain_epochs > 0 {
            self.store.copy_prefix("traj_enc.", "ctx_enc.")?;
        }
        self.pretrain_steps += steps;
        Ok(steps)
    }

    /// Mixing weight for a component joining `reference`.
    fn join_weight(&self, reference: &crate::gaussian::GaussianMixture, c: &PriorComponent, target: &crate::gaussian::GaussianMixture, seed: u64) -> Result<f64> {
        if self.cfg.disable_weight_opt {
            let n = self.queue.len() as f64;
            return Ok(n / (n + 1.0));
        }
        let post = component_posterior(c, &self.model, &self.store)?;
        Ok(optimize_weight(reference, &post, target, seed)?.alpha)
    }

    /// Adds (online) or initializes and refines (offline) components from `batch`.
    /// Returns the number of components added.
    fn update_prior(&mut self, batch: &TrajectoryBatch, all_obs: &Matrix, task: usize, epoch: usize) -> Result<usize> {
        let seed = derive_seed(self.cfg.seed, &[tags::COMPONENT, task as u64, epoch as u64]);
        let wseed = derive_seed(self.cfg.seed, &[tags::WEIGHT, task as u64, epoch as u64]);
        let posts = self.model.encode_context(&self.store, batch)?;
        let (steps, lr) = (self.cfg.component_steps, self.cfg.component_lr);
        match self.cfg.mode {
            Mode::Online => {
                let target = aggregated_posterior_target(&self.queue, &posts, &self.model, &self.store)?;
                let mut c = init_online_component(batch, &target, &self.model, &self.store, task, epoch, seed)?;
                let alpha = if self.queue.is_empty() {
                    1.0
                } else {
                    let reference = materialize(&self.queue, &self.model, &self.store)?;
                    c = optimize_component(&c, &target, &reference, &self.model, &self.store, steps, lr, seed)?;
                    self.join_weight(&reference, &c, &target, wseed)?
                };
                self.queue.push(c, alpha)?;
                Ok(1)
            }
            Mode::Offline if epoch == 1 => {
                let k = self.cfg.offline_k.min(all_obs.rows());
                let kseed = derive_seed(self.cfg.seed, &[tags::KMEANS, task as u64]);
                let comps = init_offline_components(all_obs, k, &self.model, &self.store, task, kseed)?;
                for (i, mut c) in comps.into_iter().enumerate() {
                    c.creation_epoch = epoch;
                    let alpha = if self.queue.is_empty() {
                        1.0
                    } else {
                        let target = aggregated_posterior_target(&self.queue, &posts, &self.model, &self.store)?;
                        let reference = materialize(&self.queue, &self.model, &self.store)?;
                        let s = derive_seed(seed, &[i as u64]);
                        c = optimize_component(&c, &target, &reference, &self.model, &self.store, steps, lr, s)?;
                        self.join_weight(&reference, &c, &target, derive_seed(wseed, &[i as u64]))?
                    };
                    self.queue.push(c, alpha)?;
                }
                Ok(k)
            }
            Mode::Offline => {
                let own: Vec<usize> = (0..self.queue.len())
                    .filter(|&i| self.queue.components()[i].task_id == task)
                    .collect();
                for &i in &own {
                    let (c, w) = self.queue.remove(i)?;
                    let (c, w) = if self.queue.is_empty() {
                        (c, w)
                    } else {
                        let target = aggregated_posterior_target(&self.queue, &posts, &self.model, &self.store)?;
                        let reference = materialize(&self.queue, &self.model, &self.store)?;
                        let s = derive_seed(seed, &[i as u64]);
                        let c = optimize_component(&c, &target, &reference, &self.model, &self.store, steps, lr, s)?;
                        let alpha = self.join_weight(&reference, &c, &target, derive_seed(wseed, &[i as u64]))?;
                        (c, 1.0 - alpha)
                    };
                    self.queue.insert(i, c, w)?;
                }
                if let Some(&last) = own.last() {
                    self.queue.set_newest(Some(last))?;
                }
                Ok(0)
            }
        }
    }

    /// Trains on the next task and prunes the queue to capacity.
    pub fn train_task(&mut self, task_data: &TaskDomain) -> Result<TaskReport> {
        task_data.validate()?;
        let task = self.task_names.len() + 1;
        let (obs, pred) = self.dims();
        let windows = windows_of(task_data, Split::Train, obs, pred)?;
        if windows.is_empty() {
            return Err(Error::Empty("training scenes"));
        }
        let uses_queue = self.cfg.uses_queue();
        let all_obs = if uses_queue && self.cfg.mode == Mode::Offline {
            TrajectoryBatch::from_windows(&windows, obs, pred)?.obs
        } else {
            Matrix::zeros(0, 0)
        };
        if uses_queue {
            self.queue.begin_task(task_data.train_agent_count());
        }
        let l = self.cfg.epochs_per_task;
        let mut report = TaskReport {
            task,
            name: task_data.name.clone(),
            epochs: Vec::with_capacity(l),
            components_added: 0,
            queue_len_before_prune: 0,
            pruned: 0,
            queue_len: 0,
            optimizer_steps: 0,
            val: None,
        };
        for epoch in 1..=l {
            let mut order: Vec<usize> = (0..windows.len()).collect();
            order.shuffle(&mut rng_for(self.cfg.seed, &[tags::SHUFFLE, task as u64, epoch as u64]));
            let fires = uses_queue && (epoch == 1 || component_schedule(epoch, l, self.cfg.capacity));
            let mut sum = LossParts::default();
            let mut steps = 0;
            for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
                let batch = batch_of(&windows, idx, obs, pred)?;
                if fires && b == 0 {
                    report.components_added += self.update_prior(&batch, &all_obs, task, epoch)?;
                }
                let seed = derive_seed(self.cfg.seed, &[tags::LOSS, task as u64, epoch as u64, b as u64]);
                self.store.zero_grads();
                let parts = if uses_queue {
                    let pseudo = self.queue.input_matrix()?;
                    let prior = self.queue.prior_inputs(&pseudo);
                    self.model
                        .max_step_loss(&self.store, &batch, Some(&prior), seed)?
                        .backprop(&mut self.store)?
                } else {
                    self.model.max_step_loss(&self.store, &batch, None, seed)?.backprop(&mut self.store)?
                };
                self.apply_grads();
                add_parts(&mut sum, &parts);
                steps += 1;
            }
            self.check_finite(&format!("task {task} epoch {epoch}"))?;
            scale_parts(&mut sum, 1.0 / steps as f64);
            let log = EpochLog {
                task,
                epoch,
                loss: sum,
                steps,
                prior_updated: fires,
                queue_len: self.queue.len(),
            };
            if self.verbose {
                eprintln!(
                    "task {task} epoch {epoch}/{l}: loss {:.4} pred {:.4} rec {:.4} kl {:.4} sym {:.4} queue {}",
                    sum.total, sum.pred, sum.rec, sum.kl, sum.sym, log.queue_len
                );
            }
            report.optimizer_steps += steps;
            report.epochs.push(log);
        }
        self.optimizer_steps += report.optimizer_steps;
        report.queue_len_before_prune = self.queue.len();
        if uses_queue {
            report.pruned = self.queue.prune(&self.model, &self.store)?.len();
        }
        report.queue_len = self.queue.len();
        if !task_data.val.is_empty() {
            let seed = derive_seed(self.cfg.seed, &[tags::EVAL, task as u64, 0]);
            report.val = Some(evaluate_scenes(&self.model, &self.store, &task_data.val, self.cfg.eval_samples, seed)?);
        }
        self.task_names.push(task_data.name.clone());
        Ok(report)
    }

    /// Test metrics on every task in `tasks` after the tasks trained so far.
    pub fn evaluate(&self, tasks: &[TaskDomain]) -> Result<Vec<MetricRow>> {
        let after = self.tasks_done();
        tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let seed = derive_seed(self.cfg.seed, &[tags::EVAL, after as u64, i as u64 + 1]);
                let (ade, fde) = evaluate_scenes(&self.model, &self.store, &t.test, self.cfg.eval_samples, seed)?;
                Ok(MetricRow {
                    after_task: after,
                    eval_task: i + 1,
                    split: Split::Test,
                    ade,
                    fde,
                    seed: self.cfg.seed,
                })
            })
            .collect()
    }

    /// Pretrains on the first task, then trains and evaluates each task in
    /// order. Writes the manifest, checkpoints and metrics when `out_dir` is set.
    pub fn run(&mut self, tasks: &[TaskDomain]) -> Result<SequenceReport> {
        if tasks.is_empty() {
            return Err(Error::Empty("task sequence"));
        }
        let out = (!self.cfg.out_dir.as_os_str().is_empty()).then(|| self.cfg.out_dir.clone());
        if let Some(dir) = &out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("manifest.txt"), manifest(&self.cfg, tasks))?;
        }
        let wrap = |i: usize, e: Error| Error::Task {
            task: i + 1,
            name: tasks[i].name.clone(),
            source: Box::new(e),
        };
        let start = self.tasks_done();
        if start == 0 && self.cfg.pretrain_epochs > 0 {
            self.pretrain(&tasks[0]).map_err(|e| wrap(0, e))?;
        }
        let mut report = SequenceReport {
            tasks: Vec::new(),
            metrics: Vec::new(),
            pretrain_steps: 0,
            optimizer_steps: 0,
        };
        for i in start..tasks.len() {
            let r = self.train_task(&tasks[i]).map_err(|e| wrap(i, e))?;
            report.tasks.push(r);
            report.metrics.extend(self.evaluate(&tasks[..=i]).map_err(|e| wrap(i, e))?);
            if let Some(dir) = &out {
                save_checkpoint(&self.checkpoint(), checkpoint_path(dir, i + 1, self.cfg.seed))?;
                fs::write(dir.join("metrics.csv"), metrics_csv(&report.metrics))?;
                fs::write(dir.join("train_log.csv"), train_log_csv(&report.tasks))?;
            }
        }
        report.pretrain_steps = self.pretrain_steps;
        report.optimizer_steps = self.optimizer_steps;
        Ok(report)
    }
}

/// Fresh trainer over `tasks`; see [`Trainer::run`].
pub fn run_sequence(tasks: &[TaskDomain], cfg: &TrainConfig) -> Result<(SequenceReport, Trainer)> {
    let mut t = Trainer::new(cfg.clone())?;
    let r = t.run(tasks)?;
    Ok((r, t))
}

/// Resolved configuration plus the task order, as `key=value` text.
pub fn manifest(cfg: &TrainConfig, tasks: &[TaskDomain]) -> String {
    let mut s = String::from("# resolved configuration\n");
    s.push_str(&cfg.to_kv_text());
    s.push_str("# task order\n");
    for (i, t) in tasks.iter().enumerate() {
        let _ = writeln!(s, "# task {}: {} ({} train scenes)", i + 1, t.name, t.train.len());
    }
    s
}

pub const TRAIN_LOG_HEADER: &str = "task,epoch,steps,total,pred,rec,kl,sym,prior_updated,queue_len";

/// Per-epoch loss log.
pub fn train_log_csv(reports: &[TaskReport]) -> String {
    let mut s = format!("{TRAIN_LOG_HEADER}\n");
    for e in reports.iter().flat_map(|r| &r.epochs) {
        let p = &e.loss;
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            e.task, e.epoch, e.steps, p.total, p.pred, p.rec, p.kl, p.sym, e.prior_updated, e.queue_len
        );
    }
    s
}

/// Loads task directories in the order given by `cfg.tasks`.
pub fn load_tasks(cfg: &TrainConfig) -> Result<Vec<TaskDomain>> {
    if cfg.tasks.is_empty() {
        return Err(Error::Config("no tasks configured (set tasks=dir1,dir2,...)".into()));
    }
    cfg.tasks.iter().map(|p| crate::data::load_domain_dir(p as &Path)).collect()
}
