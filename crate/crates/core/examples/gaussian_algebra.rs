//! Diagonal Gaussians and mixtures: products, closed-form and Monte-Carlo
//! divergences, and the symmetric divergence used as a regularizer.
//!
//! Run: `cargo run --release --example gaussian_algebra`

use continual_traj::gaussian::{mc_kl_to_mixture, symmetric_kl, DiagGaussian, GaussianMixture};

fn main() -> continual_traj::Result<()> {
    let a = DiagGaussian::new(vec![0.0, 1.0], vec![1.0, 0.5])?;
    let b = DiagGaussian::new(vec![2.0, -1.0], vec![2.0, 0.5])?;

    // Product of experts: precision-weighted mean, harmonic variance.
    let p = a.product(&b)?;
    println!("product mean {:?} std {:?}", p.mean(), p.std());

    println!("KL(a || b) = {:.6}", a.kl(&b)?);
    println!("KL(b || a) = {:.6}", b.kl(&a)?);
    println!("entropy(a) = {:.6}", a.entropy());

    let mix = GaussianMixture::new(vec![a.clone(), b.clone()], vec![0.3, 0.7])?;
    println!("mixture log density at origin = {:.6}", mix.log_prob(&[0.0, 0.0])?);

    // With a one-component mixture the Monte-Carlo estimate approaches the closed form.
    let single = GaussianMixture::single(b.clone());
    for n in [64, 1024, 16384] {
        println!("MC KL(a || b) with {n:>5} samples = {:.4}", mc_kl_to_mixture(&a, &single, n, 7)?);
    }

    let q = DiagGaussian::new(vec![4.0, 4.0], vec![0.5, 0.5])?;
    println!("symmetric KL(q, mixture) = {:.4}", symmetric_kl(&q, &mix, 4096, 3)?);
    println!("moment distance^2(a, b) = {:.4}", a.moment_distance_sq(&b));
    Ok(())
}
