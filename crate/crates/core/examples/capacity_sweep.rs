//! Queue capacity sweep: the queue never exceeds its capacity at a task
//! boundary, and each capacity gets its own metrics file.
//!
//! Run: `cargo run --release --example capacity_sweep [out_dir]`

use continual_traj::data::{generate_domain, SyntheticConfig};
use continual_traj::engine::{run_sequence, schedule_period, TrainConfig};
use continual_traj::eval::{average_seen, metrics_csv};

fn main() -> continual_traj::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let tasks = [0.2, 0.4, 0.6]
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            generate_domain(&SyntheticConfig {
                n_train: 40,
                n_val: 0,
                n_test: 15,
                min_distance: d,
                seed: i as u64,
                ..SyntheticConfig::default()
            })
        })
        .collect::<continual_traj::Result<Vec<_>>>()?;
    for capacity in [15, 30, 45, 60] {
        let cfg = TrainConfig {
            capacity,
            epochs_per_task: 6,
            pretrain_epochs: 2,
            ..TrainConfig::default()
        };
        let (report, _) = run_sequence(&tasks, &cfg)?;
        let lens: Vec<usize> = report.tasks.iter().map(|r| r.queue_len).collect();
        let (ade, _) = average_seen(&report.metrics, tasks.len())?;
        println!(
            "capacity {capacity:>2}: period {}, queue length at boundaries {lens:?}, avg ADE {ade:.4}",
            schedule_period(cfg.epochs_per_task, capacity)
        );
        assert!(lens.iter().all(|&l| l <= capacity));
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("metrics_capacity{capacity}.csv")), metrics_csv(&report.metrics))?;
        }
    }
    Ok(())
}
