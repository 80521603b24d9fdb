//! End-to-end flows through the public library API.

use continual_traj::data::{generate_domain, load_domain_dir, save_domain_dir, SyntheticConfig, TaskDomain};
use continual_traj::engine::{checkpoint_path, load_checkpoint, run_sequence, Mode, TrainConfig, Trainer};
use continual_traj::eval::{metrics_csv, read_metrics_csv};

fn tasks() -> Vec<TaskDomain> {
    [0.3, 0.7]
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            generate_domain(&SyntheticConfig {
                n_train: 12,
                n_val: 3,
                n_test: 4,
                n_agents: 3,
                min_distance: d,
                seed: i as u64,
                ..SyntheticConfig::default()
            })
            .unwrap()
        })
        .collect()
}

fn small_config(out: &std::path::Path) -> TrainConfig {
    TrainConfig {
        epochs_per_task: 4,
        batch_size: 4,
        capacity: 3,
        seed: 9,
        pretrain_epochs: 1,
        eval_samples: 3,
        component_steps: 2,
        latent_dim: 3,
        hidden_dim: 6,
        out_dir: out.to_path_buf(),
        ..TrainConfig::default()
    }
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let tasks = tasks();
    for mode in [Mode::Online, Mode::Offline] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            mode,
            ..small_config(dir.path())
        };
        let (whole, trainer) = run_sequence(&tasks, &cfg).unwrap();

        let ck = load_checkpoint(checkpoint_path(dir.path(), 1, cfg.seed)).unwrap();
        assert_eq!(ck.tasks_done, 1);
        let mut resumed = Trainer::from_checkpoint(ck).unwrap();
        let tail = resumed.run(&tasks).unwrap();

        let expected: Vec<_> = whole.metrics.iter().filter(|r| r.after_task == 2).cloned().collect();
        assert_eq!(metrics_csv(&tail.metrics), metrics_csv(&expected), "{mode:?}");
        assert_eq!(resumed.store().fingerprint(), trainer.store().fingerprint());
        assert_eq!(resumed.queue(), trainer.queue());
    }
}

#[test]
fn tasks_written_to_disk_train_identically() {
    let tasks = tasks();
    let dir = tempfile::tempdir().unwrap();
    let loaded: Vec<TaskDomain> = tasks
        .iter()
        .map(|t| {
            let p = dir.path().join(&t.name);
            save_domain_dir(t, &p).unwrap();
            load_domain_dir(&p).unwrap()
        })
        .collect();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let (a, _) = run_sequence(&tasks, &small_config(&out_a)).unwrap();
    let (b, _) = run_sequence(&loaded, &small_config(&out_b)).unwrap();
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    let on_disk = read_metrics_csv(out_a.join("metrics.csv")).unwrap();
    assert_eq!(metrics_csv(&on_disk), metrics_csv(&a.metrics));
}
