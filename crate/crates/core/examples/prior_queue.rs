//! Growing the mixture prior by hand: pick the batch trajectory whose context
//! posterior best matches the aggregated posterior, refine its pseudo input,
//! search its mixing weight, prune to capacity and save the queue.
//!
//! Run: `cargo run --release --example prior_queue`

use continual_traj::data::{generate_domain, SyntheticConfig, TrajectoryScene};
use continual_traj::memory::{
    aggregated_posterior_target, component_posterior, init_online_component, load_queue, materialize,
    optimize_component, optimize_weight, save_queue, MemoryQueue,
};
use continual_traj::model::{ModelConfig, TrajectoryBatch, TrajectoryModel};

fn main() -> continual_traj::Result<()> {
    let model = TrajectoryModel::new(ModelConfig {
        latent_dim: 4,
        hidden_dim: 16,
        ..ModelConfig::default()
    })?;
    let store = model.init_params(0)?;
    let dom = generate_domain(&SyntheticConfig {
        n_train: 40,
        n_val: 0,
        n_test: 0,
        ..SyntheticConfig::default()
    })?;

    let mut queue = MemoryQueue::new(3)?;
    queue.begin_task(dom.train_agent_count());
    for (round, chunk) in dom.train.chunks(8).enumerate() {
        let scenes: Vec<&TrajectoryScene> = chunk.iter().collect();
        let batch = TrajectoryBatch::from_scenes(&scenes, 8, 12)?;
        let posts = model.encode_context(&store, &batch)?;
        let target = aggregated_posterior_target(&queue, &posts, &model, &store)?;
        let seed = round as u64;
        let mut c = init_online_component(&batch, &target, &model, &store, 1, round + 1, seed)?;
        let alpha = if queue.is_empty() {
            1.0
        } else {
            let reference = materialize(&queue, &model, &store)?;
            c = optimize_component(&c, &target, &reference, &model, &store, 10, 1e-2, seed)?;
            optimize_weight(&reference, &component_posterior(&c, &model, &store)?, &target, seed)?.alpha
        };
        queue.push(c, alpha)?;
        println!("round {}: alpha {alpha:.2}, weights {:.3?}", round + 1, queue.weights());
    }

    let removed = queue.prune(&model, &store)?;
    println!("pruned {} components, {} remain: weights {:.3?}", removed.len(), queue.len(), queue.weights());

    let path = std::env::temp_dir().join("prior_queue.json");
    save_queue(&queue, &path)?;
    let back = load_queue(&path)?;
    assert_eq!(back, queue);
    println!("queue saved to and reloaded from {}", path.display());
    Ok(())
}
