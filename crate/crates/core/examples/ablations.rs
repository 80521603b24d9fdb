//! The full method against its ablations: no weight search, no symmetric
//! term, and no prior at all.
//!
//! Run: `cargo run --release --example ablations`

use continual_traj::data::{generate_domain, SyntheticConfig};
use continual_traj::engine::{run_sequence, TrainConfig};
use continual_traj::eval::{average_seen, forgetting_matrix};

fn main() -> continual_traj::Result<()> {
    let tasks = [0.2, 0.4, 0.6, 0.8]
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            generate_domain(&SyntheticConfig {
                n_train: 60,
                n_val: 0,
                n_test: 20,
                min_distance: d,
                seed: i as u64,
                ..SyntheticConfig::default()
            })
        })
        .collect::<continual_traj::Result<Vec<_>>>()?;
    let base = TrainConfig {
        epochs_per_task: 6,
        pretrain_epochs: 3,
        ..TrainConfig::default()
    };
    let variants = [
        ("full", base.clone()),
        ("no weight search", TrainConfig { disable_weight_opt: true, ..base.clone() }),
        ("no symmetric term", TrainConfig { disable_sym_kl: true, ..base.clone() }),
        ("no prior", TrainConfig { disable_intervention: true, ..base.clone() }),
    ];
    println!("{:<18} {:>8} {:>8} {:>12}", "variant", "avg ADE", "avg FDE", "forget T1");
    for (name, cfg) in variants {
        let (report, _) = run_sequence(&tasks, &cfg)?;
        let (ade, fde) = average_seen(&report.metrics, tasks.len())?;
        let f1 = forgetting_matrix(&report.metrics)?[&1];
        println!("{name:<18} {ade:>8.4} {fde:>8.4} {f1:>12.4}");
    }
    Ok(())
}
