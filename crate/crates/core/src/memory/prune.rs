//! Redundancy pruning over materialized components.

use crate::gaussian::DiagGaussian;

fn remove_one(components: &[DiagGaussian], alive: &[usize]) -> usize {
    let s = |a: usize, b: usize| components[a].moment_distance_sq(&components[b]);
    let mut best = (f64::INFINITY, 0, 0);
    for (x, &a) in alive.iter().enumerate() {
        for &b in &alive[x + 1..] {
            let d = s(a, b);
            if d < best.0 {
                best = (d, a, b);
            }
        }
    }
    let (_, a, b) = best;
    let sum_to_rest = |i: usize| -> f64 { alive.iter().filter(|&&r| r != a && r != b).map(|&r| s(i, r)).sum() };
    if sum_to_rest(b) < sum_to_rest(a) {
        b
    } else {
        a
    }
}

/// Indices removed, in removal order, to bring `components` down to `capacity`.
///
/// Each round finds the closest pair under the squared distance between
/// concatenated (mean, std) vectors (first pair in index order on ties) and
/// removes the member with the smaller summed distance to the other
/// survivors, the pair's first member on ties.
pub fn prune_gaussians(components: &[DiagGaussian], capacity: usize) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..components.len()).collect();
    let mut removed = Vec::new();
    while alive.len() > capacity.max(1) {
        let r = remove_one(components, &alive);
        alive.retain(|&i| i != r);
        removed.push(r);
    }
    removed
}

/// Reference pruner: materializes every pair with its score and sorts.
pub fn prune_order_brute_force(components: &[DiagGaussian], capacity: usize) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..components.len()).collect();
    let mut removed = Vec::new();
    let dist = |a: &DiagGaussian, b: &DiagGaussian| -> f64 {
        let va: Vec<f64> = a.mean().iter().chain(a.std()).copied().collect();
        let vb: Vec<f64> = b.mean().iter().chain(b.std()).copied().collect();
        va.iter().zip(&vb).map(|(x, y)| (x - y).powi(2)).sum()
    };
    while alive.len() > capacity.max(1) {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for &a in &alive {
            for &b in &alive {
                if a < b {
                    pairs.push((dist(&components[a], &components[b]), a, b));
                }
            }
        }
        pairs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (_, a, b) = pairs[0];
        let rest: Vec<usize> = alive.iter().copied().filter(|&r| r != a && r != b).collect();
        let sa: f64 = rest.iter().map(|&r| dist(&components[a], &components[r])).sum();
        let sb: f64 = rest.iter().map(|&r| dist(&components[b], &components[r])).sum();
        let victim = if sb < sa { b } else { a };
        alive.retain(|&i| i != victim);
        removed.push(victim);
    }
    removed
}
