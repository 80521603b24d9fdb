//! Reverse-mode gradients of the full training objective checked against
//! central finite differences on a two-agent scene.
//!
//! Run: `cargo run --release --example autodiff_gradcheck`

use continual_traj::data::{generate_domain, SyntheticConfig, TrajectoryScene};
use continual_traj::model::{ModelConfig, PriorInputs, TrajectoryBatch, TrajectoryModel};
use continual_traj::nn::gradcheck::{check_param_gradients, sample_coordinates};
use continual_traj::nn::Matrix;

fn main() -> continual_traj::Result<()> {
    let model = TrajectoryModel::new(ModelConfig {
        latent_dim: 4,
        hidden_dim: 8,
        ..ModelConfig::default()
    })?;
    let mut store = model.init_params(1)?;
    let scene = &generate_domain(&SyntheticConfig {
        n_train: 1,
        n_val: 0,
        n_test: 0,
        seed: 2,
        ..SyntheticConfig::default()
    })?
    .train[0];
    let pair = TrajectoryScene::new(0, vec![0, 1], scene.positions[..2].to_vec())?;
    let batch = TrajectoryBatch::from_scenes(&[&pair], 8, 12)?;

    // A two-component prior built from the observed rows, one of them shifted.
    let mut pseudo = Matrix::from_rows(&[batch.obs.row(0).to_vec(), batch.obs.row(1).to_vec()]);
    pseudo.row_mut(1).iter_mut().for_each(|v| *v += 0.2);
    let prior = PriorInputs {
        pseudo: &pseudo,
        weights: &[0.6, 0.4],
        newest: Some(1),
    };

    store.zero_grads();
    let parts = model.max_step_loss(&store, &batch, Some(&prior), 9)?.backprop(&mut store)?;
    println!("loss parts: {parts:?}");

    for prefix in ["traj_enc.", "ctx_enc.", "dec.", "rec.", ""] {
        let coords = sample_coordinates(&store, prefix, 50, 4);
        let report = check_param_gradients(&store, &coords, |st| {
            Ok(model.max_step_loss(st, &batch, Some(&prior), 9)?.parts.total)
        })?;
        let label = if prefix.is_empty() { "all parameters" } else { prefix };
        println!(
            "{label:<16} {:>3} coordinates, max relative error {:.2e} at {}",
            report.checked, report.max_rel_error, report.worst
        );
    }
    Ok(())
}
