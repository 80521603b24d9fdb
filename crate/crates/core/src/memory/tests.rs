use proptest::prelude::*;

use super::*;
use crate::data::{generate_domain, SyntheticConfig, TrajectoryScene};
use crate::model::ModelConfig;
use crate::nn::ParamStore;

fn model(d: usize) -> (TrajectoryModel, ParamStore) {
    let m = TrajectoryModel::new(ModelConfig {
        latent_dim: d,
        hidden_dim: 4,
        ..ModelConfig::default()
    })
    .unwrap();
    let s = m.init_params(3).unwrap();
    (m, s)
}

fn batch(n: usize, seed: u64) -> TrajectoryBatch {
    let dom = generate_domain(&SyntheticConfig {
        n_train: n,
        n_val: 0,
        n_test: 0,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let s: Vec<&TrajectoryScene> = dom.train.iter().collect();
    TrajectoryBatch::from_scenes(&s, 8, 12).unwrap()
}

fn comp(row: &[f64], task: usize) -> PriorComponent {
    PriorComponent {
        pseudo: row.to_vec(),
        noise: vec![0.0; row.len()],
        task_id: task,
        creation_epoch: 0,
    }
}

fn g1(m: f64, s: f64) -> DiagGaussian {
    DiagGaussian::new(vec![m], vec![s]).unwrap()
}

#[test]
fn materialize_basics() {
    let (m, s) = model(2);
    let b = batch(1, 0);
    let mut q = MemoryQueue::new(5).unwrap();
    assert!(materialize(&q, &m, &s).is_err());
    q.push(comp(b.obs.row(0), 1), 0.5).unwrap();
    let mix = materialize(&q, &m, &s).unwrap();
    assert_eq!((mix.len(), mix.weights()), (1, &[1.0][..]));
    q.push(comp(b.obs.row(0), 1), 0.5).unwrap();
    let mix = materialize(&q, &m, &s).unwrap();
    assert_eq!(mix.components()[0], mix.components()[1]);
    let x = [0.3, -0.2];
    assert!((mix.log_prob(&x).unwrap() - mix.components()[0].log_prob(&x).unwrap()).abs() < 1e-12);
    let s2 = m.init_params(99).unwrap();
    let mix2 = materialize(&q, &m, &s2).unwrap();
    assert_ne!(mix.components()[0].mean(), mix2.components()[0].mean());
}

#[test]
fn target_weight_arithmetic() {
    let (m, s) = model(2);
    let b = batch(1, 1);
    let posts = m.encode_context(&s, &b).unwrap();
    let mut q = MemoryQueue::new(5).unwrap();
    q.begin_task(10);
    let t = aggregated_posterior_target(&q, &posts, &m, &s).unwrap();
    assert_eq!(t.len(), posts.len());
    assert!(t.weights().iter().all(|w| (w - 0.2).abs() < 1e-12));

    q.push(comp(b.obs.row(0), 1), 1.0).unwrap();
    q.push(comp(b.obs.row(1), 1), 0.75).unwrap();
    q.begin_task(10);
    let t = aggregated_posterior_target(&q, &[], &m, &s).unwrap();
    assert_eq!(t, materialize(&q, &m, &s).unwrap());
    let t = aggregated_posterior_target(&q, &posts, &m, &s).unwrap();
    let queue_part: f64 = t.weights()[..2].iter().sum();
    assert!((queue_part - 0.5).abs() < 1e-12);
    assert!((t.weights()[0] - 0.375).abs() < 1e-12);
    assert!(t.weights()[2..].iter().all(|w| (w - 0.1).abs() < 1e-12));
}

#[test]
fn online_selection_single_agent_and_brute_force() {
    let (m, s) = model(2);
    let one = {
        let sc = &batch(1, 2);
        let row = sc.obs.row(2).to_vec();
        let scene = TrajectoryScene::new(0, vec![0], vec![vec![[0.0, 0.0]; 20]]).unwrap();
        let mut b = TrajectoryBatch::from_scenes(&[&scene], 8, 12).unwrap();
        b.obs.row_mut(0).copy_from_slice(&row);
        b
    };
    let target = GaussianMixture::single(DiagGaussian::standard(2));
    let c = init_online_component(&one, &target, &m, &s, 1, 1, 0).unwrap();
    assert_eq!(c.pseudo, one.obs.row(0));
    assert!(c.noise.iter().all(|e| e.abs() < 0.1) && c.noise.iter().any(|e| *e != 0.0));

    let b = batch(1, 3);
    let posts = m.encode_context(&s, &b).unwrap();
    let target = GaussianMixture::new(
        vec![DiagGaussian::standard(2), DiagGaussian::isotropic(vec![1.0, -1.0], 0.5).unwrap()],
        vec![0.3, 0.7],
    )
    .unwrap();
    let (best, _) = select_online_candidate(&posts, &target, 17).unwrap();
    let brute: Vec<f64> = posts.iter().map(|p| mc_kl_to_mixture(p, &target, TRAIN_MC_SAMPLES, 17).unwrap()).collect();
    let key = |k: f64| (k.max(0.0), k.abs());
    assert!(brute.iter().all(|k| key(brute[best]) <= key(*k)));

    // A posterior that equals the single-component target has zero KL.
    let exact = GaussianMixture::single(posts[3].clone());
    assert_eq!(select_online_candidate(&posts, &exact, 5).unwrap().0, 3);
}

#[test]
fn offline_initialization_counts() {
    let (m, s) = model(2);
    let b = batch(2, 4);
    let comps = init_offline_components(&b.obs, 3, &m, &s, 2, 0).unwrap();
    assert_eq!(comps.len(), 3);
    assert!(comps.iter().all(|c| c.task_id == 2));
    let all = init_offline_components(&b.obs, 10, &m, &s, 1, 0).unwrap();
    let mut rows: Vec<Vec<f64>> = all.iter().map(|c| c.pseudo.clone()).collect();
    rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rows.dedup();
    assert_eq!(rows.len(), 10);
    assert!(init_offline_components(&b.obs, 11, &m, &s, 1, 0).is_err());
}

#[test]
fn zero_steps_leave_component_unchanged() {
    let (m, s) = model(1);
    let c = comp(batch(1, 5).obs.row(0), 1);
    let t = GaussianMixture::single(g1(3.0, 1.0));
    let r = GaussianMixture::single(g1(0.0, 1.0));
    assert_eq!(optimize_component(&c, &t, &r, &m, &s, 0, COMPONENT_LR, 0).unwrap(), c);
}

#[test]
fn component_mean_moves_toward_target() {
    let (m, s) = model(1);
    let mut c = comp(batch(1, 6).obs.row(0), 1);
    let t = GaussianMixture::single(g1(3.0, 1.0));
    let r = GaussianMixture::single(g1(0.0, 1.0));
    let mut prev = component_posterior(&c, &m, &s).unwrap().mean()[0];
    let start = prev;
    for round in 0..20 {
        c = optimize_component(&c, &t, &r, &m, &s, 1, 0.05, round).unwrap();
        let now = component_posterior(&c, &m, &s).unwrap().mean()[0];
        assert!(now > prev, "round {round}: {now} <= {prev}");
        prev = now;
    }
    assert!(prev - start > 0.1);
}

#[test]
fn equal_target_and_reference_only_grow_entropy() {
    let (m, s) = model(1);
    let c = comp(batch(1, 7).obs.row(1), 1);
    let mix = GaussianMixture::new(vec![g1(0.0, 1.0), g1(2.0, 0.5)], vec![0.5, 0.5]).unwrap();
    let before = component_posterior(&c, &m, &s).unwrap();
    let after_c = optimize_component(&c, &mix, &mix, &m, &s, 10, COMPONENT_LR, 1).unwrap();
    let after = component_posterior(&after_c, &m, &s).unwrap();
    assert!(after.std()[0] > before.std()[0]);
}

#[test]
fn weight_search_examples() {
    let q = GaussianMixture::new(vec![g1(0.0, 1.0), g1(1.0, 0.5)], vec![0.6, 0.4]).unwrap();
    let new = g1(20.0, 1.0);
    assert_eq!(optimize_weight(&q, &new, &q, 0).unwrap().alpha, 1.0);
    assert_eq!(optimize_weight(&q, &new, &GaussianMixture::single(new.clone()), 0).unwrap().alpha, 0.0);

    let q1 = GaussianMixture::single(g1(-3.0, 1.0));
    let half = GaussianMixture::new(vec![g1(-3.0, 1.0), g1(3.0, 1.0)], vec![0.5, 0.5]).unwrap();
    let a = optimize_weight(&q1, &g1(3.0, 1.0), &half, 2).unwrap().alpha;
    assert!((a - 0.5).abs() <= 0.05, "{a}");
}

#[test]
fn queue_push_remove_keep_probability_vector() {
    let row = vec![0.1; 14];
    let mut q = MemoryQueue::new(3).unwrap();
    q.push(comp(&row, 1), 0.3).unwrap();
    q.push(comp(&row, 1), 0.25).unwrap();
    q.push(comp(&row, 2), 0.5).unwrap();
    assert_eq!(q.newest(), Some(2));
    let sum: f64 = q.weights().iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
    assert!((q.weights()[0] - 0.125).abs() < 1e-12);
    q.remove(0).unwrap();
    assert_eq!(q.newest(), Some(1));
    assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(q.push(comp(&[0.0; 3], 1), 0.5).is_err());
    assert!(q.push(comp(&row, 0), 0.5).is_err());
}

#[test]
fn prune_example_removes_the_redundant_neighbor() {
    let comps = vec![g1(0.0, 1.0), g1(0.01, 1.0), g1(5.0, 1.0)];
    assert_eq!(prune_gaussians(&comps, 2), vec![1]);
    assert!(prune_gaussians(&comps, 3).is_empty());
}

#[test]
fn queue_prune_respects_capacity() {
    let (m, s) = model(2);
    let b = batch(2, 8);
    let mut q = MemoryQueue::new(4).unwrap();
    for i in 0..9 {
        q.push(comp(b.obs.row(i), 1), 0.8).unwrap();
    }
    let removed = q.prune(&m, &s).unwrap();
    assert_eq!((q.len(), removed.len()), (4, 5));
    assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    q.validate().unwrap();
}

#[test]
fn save_load_round_trip_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.json");
    let mut q = MemoryQueue::new(7).unwrap();
    q.begin_task(12);
    let mut rng = rng_for(0, &[]);
    for i in 0..3 {
        let row: Vec<f64> = (0..14).map(|j| (i * 14 + j) as f64 * 0.013 + 1e-17).collect();
        q.push(PriorComponent::from_trajectory(row, 1, i, &mut rng), 0.6).unwrap();
    }
    save_queue(&q, &path).unwrap();
    assert_eq!(load_queue(&path).unwrap(), q);

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_queue(&path), Err(Error::Malformed { .. })));

    let w0 = q.weights()[0];
    let at = text.find("\"weights\"").unwrap();
    let bad = format!("{}{}", &text[..at], text[at..].replacen(&format!("{w0}"), &format!("-{w0}"), 1));
    assert_ne!(bad, text);
    std::fs::write(&path, bad).unwrap();
    assert!(load_queue(&path).is_err());

    std::fs::write(&path, text.replace("\"schema_version\": 1", "\"schema_version\": 2")).unwrap();
    assert!(matches!(load_queue(&path), Err(Error::SchemaVersion { found: 2, .. })));
}

fn arb_components() -> impl Strategy<Value = Vec<DiagGaussian>> {
    prop::collection::vec(
        (prop::collection::vec(-3.0f64..3.0, 2), prop::collection::vec(0.1f64..2.0, 2)),
        1..=8,
    )
    .prop_map(|v| v.into_iter().map(|(m, s)| DiagGaussian::new(m, s).unwrap()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn prune_matches_brute_force(comps in arb_components(), cap in 1usize..8) {
        let fast = prune_gaussians(&comps, cap);
        prop_assert_eq!(&fast, &prune_order_brute_force(&comps, cap));
        prop_assert_eq!(comps.len() - fast.len(), comps.len().min(cap));
    }

    #[test]
    fn weight_search_picks_grid_minimum(m0 in -3.0f64..3.0, m1 in -3.0f64..3.0, s in 0.3f64..2.0, w in 0.05f64..0.95) {
        let q = GaussianMixture::single(g1(m0, 1.0));
        let new = g1(m1, s);
        let target = GaussianMixture::new(vec![g1(m0, 1.0), g1(m1, s)], vec![w, 1.0 - w]).unwrap();
        let r = optimize_weight(&q, &new, &target, 3).unwrap();
        let grid = WeightSearch::grid();
        let i = grid.iter().position(|&a| a == r.alpha).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.alpha));
        prop_assert!(r.objective.iter().all(|o| r.objective[i] <= *o));
    }
}
