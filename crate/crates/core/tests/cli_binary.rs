//! The installed binary: exit codes and a generate, train, report round trip.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_continual-traj"))
}

#[test]
fn exit_codes() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().args(["train", "--bogus"]).output().unwrap().status.code(), Some(2));
    let bad = bin().args(["train", "--set", "epochs_per_task=zero"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error"));
}

#[test]
fn generate_train_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let status = bin()
        .args(["gen-data", "--set", "n_train=6", "--set", "n_val=1", "--set", "n_test=2", "--set", "n_agents=3"])
        .args(["--set", "distances=0.3,0.6", "--set"])
        .arg(format!("out_dir={}", data.display()))
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));

    let tasks = format!("tasks={},{}", data.join("synthetic-d0.3").display(), data.join("synthetic-d0.6").display());
    let out = bin()
        .arg("train")
        .args(["--set", &tasks, "--set", &format!("out_dir={}", run.display())])
        .args(["--set", "epochs_per_task=2", "--set", "batch_size=3", "--set", "pretrain_epochs=1"])
        .args(["--set", "latent_dim=3", "--set", "hidden_dim=6", "--set", "eval_samples=2"])
        .args(["--set", "component_steps=1", "--set", "capacity=2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoint_task2_seed0.json").exists());

    let rep = bin()
        .args(["report", "--set"])
        .arg(format!("metrics={}", run.join("metrics.csv").display()))
        .output()
        .unwrap();
    assert!(rep.status.success());
    assert!(String::from_utf8_lossy(&rep.stdout).contains("avg_ade"));
}
