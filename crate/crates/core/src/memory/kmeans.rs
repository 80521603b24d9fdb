//! Seeded k-means with k-means++ seeding and medoid extraction.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{rng_for, tags};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Per cluster, the member nearest its center.
    pub medoids: Vec<usize>,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist_sq(p, c)))
        .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b })
}

pub fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::InvalidValue(format!("k-means needs 1 <= k <= {n}, got {k}")));
    }
    let mut rng = rng_for(seed, &[tags::KMEANS]);
    let mut centers = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist_sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[pick].clone());
        for (dv, p) in d2.iter_mut().zip(points) {
            *dv = dv.min(dist_sq(p, &centers[centers.len() - 1]));
        }
    }

    let mut assignment = vec![0; n];
    for _ in 0..iterations {
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(p, &centers).0;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignment.iter().zip(points) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut changed = false;
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&x, &y| {
                        let dx = dist_sq(&points[x], &centers[assignment[x]]);
                        let dy = dist_sq(&points[y], &centers[assignment[y]]);
                        dx.partial_cmp(&dy).unwrap().then(y.cmp(&x))
                    })
                    .unwrap();
                centers[c] = points[far].clone();
                assignment[far] = c;
                changed = true;
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            if new != centers[c] {
                changed = true;
            }
            centers[c] = new;
        }
        if !changed {
            break;
        }
    }
    for (a, p) in assignment.iter_mut().zip(points) {
        *a = nearest(p, &centers).0;
    }
    let mut medoids = Vec::with_capacity(k);
    for (c, center) in centers.iter().enumerate() {
        let members = (0..n).filter(|&i| assignment[i] == c);
        let best = members
            .map(|i| (i, dist_sq(&points[i], center)))
            .fold(None, |b: Option<(usize, f64)>, x| match b {
                Some(b) if b.1 <= x.1 => Some(b),
                _ => Some(x),
            });
        let m = match best {
            Some((i, _)) => i,
            None => (0..n)
                .filter(|i| !medoids.contains(i))
                .min_by(|&x, &y| dist_sq(&points[x], center).partial_cmp(&dist_sq(&points[y], center)).unwrap())
                .unwrap_or(0),
        };
        medoids.push(m);
    }
    Ok(KMeansResult {
        centers,
        assignment,
        medoids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_separated_clusters() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(vec![0.1 * i as f64, 0.0]);
            pts.push(vec![100.0 + 0.1 * i as f64, 0.0]);
        }
        let r = kmeans(&pts, 2, 50, 3).unwrap();
        let mut sides: Vec<bool> = r.medoids.iter().map(|&m| pts[m][0] > 50.0).collect();
        sides.sort();
        assert_eq!(sides, vec![false, true]);
    }

    #[test]
    fn k_equal_n_gives_every_point() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 3.0, (i * i) as f64]).collect();
        let r = kmeans(&pts, 6, 50, 1).unwrap();
        let mut m = r.medoids.clone();
        m.sort();
        assert_eq!(m, (0..6).collect::<Vec<_>>());
        assert!(kmeans(&pts, 7, 50, 1).is_err());
    }

    #[test]
    fn k_one_is_overall_medoid() {
        let pts: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![2.1], vec![10.0]];
        let r = kmeans(&pts, 1, 50, 0).unwrap();
        // Mean is 3.275; the nearest point is 2.1.
        assert_eq!(r.medoids, vec![2]);
    }
}
