//! Command-line driver: data generation, training, evaluation and exports.
//!
//! Every subcommand reads an optional flat `key=value` file (`--config`)
//! followed by repeated `--set key=value` overrides. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::data::{generate_domain, load_domain_dir, save_domain_dir, SyntheticConfig, TaskDomain};
use crate::engine::{load_checkpoint, load_tasks, parse_kv, parse_override, Trainer, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{
    average_seen, collect_latents, forgetting_matrix, latent_separation, latents_csv, metrics_csv, read_metrics_csv,
    report_table, MetricRow,
};

#[derive(Debug, Parser)]
#[command(name = "continual-traj", version, about = "Continual multi-agent trajectory prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Settings {
    /// Flat key=value configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic circle-crossing task directories.
    GenData(Settings),
    /// Train on a task sequence; writes metrics, checkpoints and a manifest.
    Train(Settings),
    /// Re-evaluate a checkpoint on the given tasks.
    Eval(Settings),
    /// Write context-posterior means of every test agent as CSV.
    ExportLatents(Settings),
    /// Summarize metrics files as averages over seen tasks.
    Report(Settings),
}

/// Key/value pairs from `--config` then `--set`, in application order.
fn collect_pairs(s: &Settings) -> Result<Vec<(String, String)>> {
    let mut pairs = match &s.config {
        Some(p) => parse_kv(&fs::read_to_string(p)?, p)?,
        None => Vec::new(),
    };
    for o in &s.set {
        pairs.push(parse_override(o)?);
    }
    Ok(pairs)
}

fn path_list(v: &str) -> Vec<PathBuf> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key}: cannot parse `{v}`: {e}")))
}

fn unknown(key: &str, cmd: &str) -> Error {
    Error::Config(format!("unknown key `{key}` for {cmd}"))
}

/// Settings of `gen-data`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenDataConfig {
    pub synthetic: SyntheticConfig,
    /// One domain per distance; empty means the single `min_distance`.
    pub distances: Vec<f64>,
    pub out_dir: PathBuf,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticConfig::default(),
            distances: Vec::new(),
            out_dir: PathBuf::from("data"),
        }
    }
}

impl GenDataConfig {
    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        let s = &mut self.synthetic;
        match k {
            "n_train" => s.n_train = parse_num(k, v)?,
            "n_val" => s.n_val = parse_num(k, v)?,
            "n_test" => s.n_test = parse_num(k, v)?,
            "n_agents" => s.n_agents = parse_num(k, v)?,
            "min_distance" => s.min_distance = parse_num(k, v)?,
            "speed" => s.speed = parse_num(k, v)?,
            "seed" => s.seed = parse_num(k, v)?,
            "obs_len" => s.obs_len = parse_num(k, v)?,
            "pred_len" => s.pred_len = parse_num(k, v)?,
            "distances" => {
                self.distances = v
                    .split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(|x| parse_num(k, x))
                    .collect::<Result<_>>()?
            }
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(unknown(k, "gen-data")),
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        let s = &self.synthetic;
        let d: Vec<String> = self.distances.iter().map(f64::to_string).collect();
        format!(
            "n_train={}\nn_val={}\nn_test={}\nn_agents={}\nmin_distance={}\nspeed={}\nseed={}\nobs_len={}\npred_len={}\ndistances={}\nout_dir={}\n",
            s.n_train, s.n_val, s.n_test, s.n_agents, s.min_distance, s.speed, s.seed, s.obs_len, s.pred_len,
            d.join(","),
            self.out_dir.display()
        )
    }

    /// One config per domain; domain `i` uses seed `seed + i`.
    pub fn domain_configs(&self) -> Vec<SyntheticConfig> {
        if self.distances.is_empty() {
            return vec![self.synthetic.clone()];
        }
        self.distances
            .iter()
            .enumerate()
            .map(|(i, &d)| SyntheticConfig {
                min_distance: d,
                seed: self.synthetic.seed.wrapping_add(i as u64),
                ..self.synthetic.clone()
            })
            .collect()
    }
}

/// Settings shared by `eval` and `export-latents`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointJob {
    pub checkpoint: PathBuf,
    pub tasks: Vec<PathBuf>,
    pub eval_samples: Option<usize>,
    pub out: PathBuf,
}

impl CheckpointJob {
    fn set(&mut self, k: &str, v: &str, cmd: &str) -> Result<()> {
        match k {
            "checkpoint" => self.checkpoint = PathBuf::from(v),
            "tasks" => self.tasks = path_list(v),
            "eval_samples" if cmd == "eval" => self.eval_samples = Some(parse_num(k, v)?),
            "out" => self.out = PathBuf::from(v),
            _ => return Err(unknown(k, cmd)),
        }
        Ok(())
    }

    fn from_pairs(pairs: &[(String, String)], cmd: &str, default_out: &str) -> Result<Self> {
        let mut job = Self {
            out: PathBuf::from(default_out),
            ..Self::default()
        };
        for (k, v) in pairs {
            job.set(k, v, cmd)?;
        }
        if job.checkpoint.as_os_str().is_empty() {
            return Err(Error::Config(format!("{cmd} needs checkpoint=PATH")));
        }
        Ok(job)
    }

    /// Restores the trainer; tasks default to the checkpoint's training list.
    fn load(&self) -> Result<(Trainer, Vec<TaskDomain>)> {
        let mut ck = load_checkpoint(&self.checkpoint)?;
        if let Some(k) = self.eval_samples {
            ck.config.eval_samples = k;
        }
        let dirs = if self.tasks.is_empty() {
            ck.config.tasks.clone()
        } else {
            self.tasks.clone()
        };
        if dirs.is_empty() {
            return Err(Error::Config("no tasks given (set tasks=dir1,dir2,...)".into()));
        }
        let tasks = dirs.iter().map(load_domain_dir).collect::<Result<Vec<_>>>()?;
        Ok((Trainer::from_checkpoint(ck)?, tasks))
    }
}

fn gen_data(pairs: &[(String, String)], out: &mut dyn Write) -> Result<()> {
    let mut cfg = GenDataConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v)?;
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("manifest.txt"), cfg.to_kv_text())?;
    for sc in cfg.domain_configs() {
        let dom = generate_domain(&sc)?;
        let dir = cfg.out_dir.join(&dom.name);
        save_domain_dir(&dom, &dir)?;
        writeln!(
            out,
            "{}: {} train / {} val / {} test scenes -> {}",
            dom.name,
            dom.train.len(),
            dom.val.len(),
            dom.test.len(),
            dir.display()
        )?;
    }
    Ok(())
}

fn train(pairs: &[(String, String)], out: &mut dyn Write) -> Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.apply(pairs)?;
    if cfg.out_dir.as_os_str().is_empty() {
        cfg.out_dir = PathBuf::from("out");
    }
    cfg.validate()?;
    let tasks = load_tasks(&cfg)?;
    let mut trainer = Trainer::new(cfg)?;
    trainer.verbose = true;
    let report = trainer.run(&tasks)?;
    for r in &report.tasks {
        let val = r.val.map_or_else(|| "n/a".to_owned(), |(a, f)| format!("{a:.4}/{f:.4}"));
        writeln!(
            out,
            "task {} {}: val ADE/FDE {val}, queue {} (pruned {})",
            r.task, r.name, r.queue_len, r.pruned
        )?;
    }
    write!(out, "{}", report_table(&report.metrics)?)?;
    writeln!(out, "outputs in {}", trainer.config().out_dir.display())?;
    Ok(())
}

fn eval(pairs: &[(String, String)], out: &mut dyn Write) -> Result<()> {
    let job = CheckpointJob::from_pairs(pairs, "eval", "eval_metrics.csv")?;
    let (trainer, tasks) = job.load()?;
    let rows = trainer.evaluate(&tasks)?;
    fs::write(&job.out, metrics_csv(&rows))?;
    for r in &rows {
        writeln!(out, "task {} ({}): ADE {:.4} FDE {:.4}", r.eval_task, tasks[r.eval_task - 1].name, r.ade, r.fde)?;
    }
    writeln!(out, "metrics written to {}", job.out.display())?;
    Ok(())
}

fn export(pairs: &[(String, String)], out: &mut dyn Write) -> Result<()> {
    let job = CheckpointJob::from_pairs(pairs, "export-latents", "latents.csv")?;
    let (trainer, tasks) = job.load()?;
    let rows = collect_latents(trainer.model(), trainer.store(), &tasks)?;
    fs::write(&job.out, latents_csv(&rows))?;
    writeln!(out, "{} latent rows written to {}", rows.len(), job.out.display())?;
    if tasks.len() >= 2 {
        let s = latent_separation(&rows)?;
        writeln!(out, "separation: inter {:.4} intra {:.4} ratio {:.4}", s.inter, s.intra, s.ratio)?;
    }
    Ok(())
}

/// Text and CSV summaries of metrics grouped by seed, plus the across-seed mean.
pub fn summarize(rows: &[MetricRow]) -> Result<(String, String)> {
    let mut by_seed: BTreeMap<u64, Vec<MetricRow>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r.clone());
    }
    if by_seed.is_empty() {
        return Err(Error::Empty("metric rows"));
    }
    let mut text = String::new();
    let mut csv = String::from("seed,after_task,avg_ade,avg_fde\n");
    let mut sums: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for (seed, rs) in &by_seed {
        let _ = writeln!(text, "seed {seed}: average over seen tasks");
        text.push_str(&report_table(rs)?);
        let last = rs.iter().map(|r| r.after_task).max().unwrap_or(0);
        for t in 1..=last {
            let (a, f) = average_seen(rs, t)?;
            let _ = writeln!(csv, "{seed},{t},{a:.6},{f:.6}");
            let e = sums.entry(t).or_insert((0.0, 0.0, 0));
            *e = (e.0 + a, e.1 + f, e.2 + 1);
        }
        let forgetting = forgetting_matrix(rs)?;
        let cells: Vec<String> = forgetting.iter().map(|(t, v)| format!("T{t}={v:.4}")).collect();
        let _ = writeln!(text, "forgetting: {}", cells.join(" "));
    }
    if by_seed.len() > 1 {
        let _ = writeln!(text, "mean over {} seeds", by_seed.len());
        let _ = writeln!(text, "{:>10} {:>10} {:>10}", "after_task", "avg_ade", "avg_fde");
        for (t, (a, f, n)) in &sums {
            let (a, f) = (a / *n as f64, f / *n as f64);
            let _ = writeln!(text, "{t:>10} {a:>10.6} {f:>10.6}");
            let _ = writeln!(csv, "mean,{t},{a:.6},{f:.6}");
        }
    }
    Ok((text, csv))
}

fn report(pairs: &[(String, String)], out: &mut dyn Write) -> Result<()> {
    let mut files = Vec::new();
    let mut out_path: Option<PathBuf> = None;
    for (k, v) in pairs {
        match k.as_str() {
            "metrics" => files.extend(path_list(v)),
            "out" => out_path = Some(PathBuf::from(v)),
            _ => return Err(unknown(k, "report")),
        }
    }
    if files.is_empty() {
        return Err(Error::Config("report needs metrics=file1.csv,file2.csv,...".into()));
    }
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_metrics_csv(f)?);
    }
    let (text, csv) = summarize(&rows)?;
    write!(out, "{text}\n{csv}")?;
    if let Some(p) = out_path {
        fs::write(&p, &csv)?;
    }
    Ok(())
}

type Handler = fn(&[(String, String)], &mut dyn Write) -> Result<()>;

/// Runs a parsed command, writing human-readable output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let (settings, f): (&Settings, Handler) = match &cli.command {
        Command::GenData(s) => (s, gen_data),
        Command::Train(s) => (s, train),
        Command::Eval(s) => (s, eval),
        Command::ExportLatents(s) => (s, export),
        Command::Report(s) => (s, report),
    };
    f(&collect_pairs(settings)?, out)
}

/// Parses `args` (including the program name) and runs; returns the exit code.
/// Usage errors exit 2; runtime failures print one diagnostic line and exit 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}
