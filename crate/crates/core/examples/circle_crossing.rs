//! Synthetic circle-crossing domains: agents start on a circle, walk to the
//! antipode and keep a domain-specific minimum distance.
//!
//! Run: `cargo run --release --example circle_crossing [out_dir]`
//! With `out_dir`, the domains are written as loadable task directories.

use continual_traj::data::{generate_domain, save_domain_dir, window_split, SyntheticConfig};

fn main() -> continual_traj::Result<()> {
    let out = std::env::args().nth(1);
    for (i, d) in [0.2, 0.4, 0.6, 0.8].into_iter().enumerate() {
        let cfg = SyntheticConfig {
            n_train: 100,
            n_val: 15,
            n_test: 25,
            min_distance: d,
            seed: i as u64,
            ..SyntheticConfig::default()
        };
        let dom = generate_domain(&cfg)?;
        let closest = dom
            .train
            .iter()
            .map(|s| s.min_pairwise_distance())
            .fold(f64::INFINITY, f64::min);
        let w = window_split(&dom.train[0], cfg.obs_len, cfg.pred_len)?;
        let step: f64 = w.fut_disp[0].iter().map(|p| p[0].hypot(p[1])).sum::<f64>() / cfg.pred_len as f64;
        println!(
            "{}: {} / {} / {} scenes, closest approach {closest:.3} m, mean step {step:.3} m",
            dom.name,
            dom.train.len(),
            dom.val.len(),
            dom.test.len()
        );
        if let Some(dir) = &out {
            let path = std::path::Path::new(dir).join(&dom.name);
            save_domain_dir(&dom, &path)?;
            println!("  written to {}", path.display());
        }
    }
    Ok(())
}
