//! A 2-D latent space after three tasks: export the context-posterior means
//! of every test agent and compare task separation with and without the prior.
//!
//! Run: `cargo run --release --example latent_export [out.csv]`

use continual_traj::data::{generate_domain, SyntheticConfig};
use continual_traj::engine::{run_sequence, TrainConfig};
use continual_traj::eval::{collect_latents, latent_separation, latents_csv};

fn main() -> continual_traj::Result<()> {
    let out = std::env::args().nth(1);
    let tasks = [0.2, 0.5, 0.8]
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            generate_domain(&SyntheticConfig {
                n_train: 60,
                n_val: 0,
                n_test: 30,
                min_distance: d,
                seed: 10 + i as u64,
                ..SyntheticConfig::default()
            })
        })
        .collect::<continual_traj::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        latent_dim: 2,
        epochs_per_task: 6,
        pretrain_epochs: 3,
        ..TrainConfig::default()
    };
    for (name, cfg) in [
        ("with prior", cfg.clone()),
        ("without prior", TrainConfig { disable_intervention: true, ..cfg }),
    ] {
        let (_, trainer) = run_sequence(&tasks, &cfg)?;
        let rows = collect_latents(trainer.model(), trainer.store(), &tasks)?;
        let s = latent_separation(&rows)?;
        println!(
            "{name:<14} inter-centroid {:.4}, intra-task {:.4}, ratio {:.4}",
            s.inter, s.intra, s.ratio
        );
        if let (Some(path), "with prior") = (&out, name) {
            std::fs::write(path, latents_csv(&rows))?;
            println!("  {} rows written to {path}", rows.len());
        }
    }
    Ok(())
}
