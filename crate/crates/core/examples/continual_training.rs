//! Continual training across four synthetic domains, then accuracy on every
//! seen task and per-task forgetting.
//!
//! Run: `cargo run --release --example continual_training [full]`
//! The default is a reduced scale that finishes in about a minute; `full`
//! uses 1000 training scenes per domain and 50 epochs per task.

use continual_traj::data::{generate_domain, SyntheticConfig};
use continual_traj::engine::{run_sequence, TrainConfig};
use continual_traj::eval::{forgetting_matrix, report_table};

fn main() -> continual_traj::Result<()> {
    let full = std::env::args().any(|a| a == "full");
    let (n_train, epochs) = if full { (1000, 50) } else { (80, 8) };
    let tasks = [0.2, 0.4, 0.6, 0.8]
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            generate_domain(&SyntheticConfig {
                n_train,
                n_val: n_train / 7,
                n_test: n_train / 4,
                min_distance: d,
                seed: i as u64,
                ..SyntheticConfig::default()
            })
        })
        .collect::<continual_traj::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        epochs_per_task: epochs,
        pretrain_epochs: if full { 20 } else { 3 },
        ..TrainConfig::default()
    };
    let (report, trainer) = run_sequence(&tasks, &cfg)?;
    for r in &report.tasks {
        let last = r.epochs.last().unwrap();
        println!(
            "{}: final epoch loss {:.4} (pred {:.4}, kl {:.4}), {} components added, queue {}",
            r.name, last.loss.total, last.loss.pred, last.loss.kl, r.components_added, r.queue_len
        );
    }
    print!("{}", report_table(&report.metrics)?);
    for (t, f) in forgetting_matrix(&report.metrics)? {
        println!("forgetting on task {t}: {f:.4}");
    }
    println!("{} optimizer steps, queue length {}", trainer.optimizer_steps(), trainer.queue().len());
    Ok(())
}
