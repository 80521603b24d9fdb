//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::DEFAULT_CAPACITY;
use crate::model::ModelConfig;
use crate::nn::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// One component per schedule firing, chosen from the current batch.
    Online,
    /// Clustered components at task start, refined on schedule firings.
    Offline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Online => "online",
            Mode::Offline => "offline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub mode: Mode,
    /// Maximum number of prior components kept at task boundaries.
    pub capacity: usize,
    pub seed: u64,
    pub disable_sym_kl: bool,
    pub disable_weight_opt: bool,
    pub disable_intervention: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
    pub pretrain_epochs: usize,
    pub offline_k: usize,
    pub eval_samples: usize,
    pub component_steps: usize,
    pub component_lr: f64,
    pub obs_len: usize,
    pub pred_len: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub lambda_pred: f64,
    pub lambda_rec: f64,
    pub lambda_kl: f64,
    pub lambda_sym: f64,
    /// Task directories in training order.
    pub tasks: Vec<PathBuf>,
    /// Where metrics, checkpoints and the manifest go; empty disables output.
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let a = AdamConfig::default();
        Self {
            epochs_per_task: 50,
            batch_size: 32,
            mode: Mode::Online,
            capacity: DEFAULT_CAPACITY,
            seed: 0,
            disable_sym_kl: false,
            disable_weight_opt: false,
            disable_intervention: false,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            adam_eps: a.eps,
            grad_clip: 10.0,
            pretrain_epochs: 20,
            offline_k: 5,
            eval_samples: 20,
            component_steps: crate::memory::COMPONENT_STEPS,
            component_lr: crate::memory::COMPONENT_LR,
            obs_len: m.obs_len,
            pred_len: m.pred_len,
            latent_dim: m.latent_dim,
            hidden_dim: m.hidden_dim,
            lambda_pred: m.lambda_pred,
            lambda_rec: m.lambda_rec,
            lambda_kl: m.lambda_kl,
            lambda_sym: m.lambda_sym,
            tasks: Vec::new(),
            out_dir: PathBuf::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("expected key=value, found `{t}`"),
        })?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// Splits a `--set key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_owned(), v.trim().to_owned()))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 28] = [
        "epochs_per_task",
        "batch_size",
        "mode",
        "capacity",
        "seed",
        "disable_sym_kl",
        "disable_weight_opt",
        "disable_intervention",
        "lr",
        "beta1",
        "beta2",
        "adam_eps",
        "grad_clip",
        "pretrain_epochs",
        "offline_k",
        "eval_samples",
        "component_steps",
        "component_lr",
        "obs_len",
        "pred_len",
        "latent_dim",
        "hidden_dim",
        "lambda_pred",
        "lambda_rec",
        "lambda_kl",
        "lambda_sym",
        "tasks",
        "out_dir",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs_per_task" => self.epochs_per_task = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "mode" => {
                self.mode = match value {
                    "online" => Mode::Online,
                    "offline" => Mode::Offline,
                    other => return Err(Error::Config(format!("mode: expected online or offline, got `{other}`"))),
                }
            }
            "capacity" => self.capacity = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "disable_sym_kl" => self.disable_sym_kl = parse(key, value)?,
            "disable_weight_opt" => self.disable_weight_opt = parse(key, value)?,
            "disable_intervention" => self.disable_intervention = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "offline_k" => self.offline_k = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "component_steps" => self.component_steps = parse(key, value)?,
            "component_lr" => self.component_lr = parse(key, value)?,
            "obs_len" => self.obs_len = parse(key, value)?,
            "pred_len" => self.pred_len = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "lambda_pred" => self.lambda_pred = parse(key, value)?,
            "lambda_rec" => self.lambda_rec = parse(key, value)?,
            "lambda_kl" => self.lambda_kl = parse(key, value)?,
            "lambda_sym" => self.lambda_sym = parse(key, value)?,
            "tasks" => {
                self.tasks = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_kv_text(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_kv(text, path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_kv_text(&std::fs::read_to_string(path)?, path)
    }

    /// Every key with its resolved value, in [`Self::KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let tasks: Vec<String> = self.tasks.iter().map(|p| p.display().to_string()).collect();
        vec![
            ("epochs_per_task", self.epochs_per_task.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("mode", self.mode.as_str().to_owned()),
            ("capacity", self.capacity.to_string()),
            ("seed", self.seed.to_string()),
            ("disable_sym_kl", self.disable_sym_kl.to_string()),
            ("disable_weight_opt", self.disable_weight_opt.to_string()),
            ("disable_intervention", self.disable_intervention.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("offline_k", self.offline_k.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("component_steps", self.component_steps.to_string()),
            ("component_lr", self.component_lr.to_string()),
            ("obs_len", self.obs_len.to_string()),
            ("pred_len", self.pred_len.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("lambda_pred", self.lambda_pred.to_string()),
            ("lambda_rec", self.lambda_rec.to_string()),
            ("lambda_kl", self.lambda_kl.to_string()),
            ("lambda_sym", self.lambda_sym.to_string()),
            ("tasks", tasks.join(",")),
            ("out_dir", self.out_dir.display().to_string()),
        ]
    }

    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_task < 1 {
            return Err(Error::Config("epochs_per_task must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.capacity < 1 {
            return Err(Error::Config("capacity must be >= 1".into()));
        }
        if self.eval_samples < 1 || self.offline_k < 1 {
            return Err(Error::Config("eval_samples and offline_k must be >= 1".into()));
        }
        for (k, v) in [
            ("lr", self.lr),
            ("component_lr", self.component_lr),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        self.model_config().validate()
    }

    /// Model settings with the ablation switches applied to the loss weights.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig {
            obs_len: self.obs_len,
            pred_len: self.pred_len,
            latent_dim: self.latent_dim,
            hidden_dim: self.hidden_dim,
            lambda_pred: self.lambda_pred,
            lambda_rec: self.lambda_rec,
            lambda_kl: self.lambda_kl,
            lambda_sym: self.lambda_sym,
        };
        if self.disable_sym_kl {
            m.lambda_sym = 0.0;
        }
        if self.disable_intervention {
            m.lambda_kl = 0.0;
            m.lambda_sym = 0.0;
        }
        m
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Whether the prior queue is maintained at all.
    pub fn uses_queue(&self) -> bool {
        !self.disable_intervention
    }
}
