//! Seeded 1-D k-means for quantizer initialization.

use crate::error::{Error, Result};
use crate::rng::Rng;

const MAX_ITERS: usize = 100;
const TOL: f64 = 1e-8;

/// 1-D k-means with k-means++ seeding, at most 100 Lloyd iterations and a
/// 1e-8 movement tolerance. Centers come back in ascending order and the
/// result is deterministic given `seed`.
///
/// Errors when the input is empty or has fewer distinct values than `k`.
pub fn kmeans_centers(values: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::KMeans("empty input".into()));
    }
    if k == 0 {
        return Err(Error::KMeans("k must be positive".into()));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::KMeans(format!(
            "{} distinct values cannot form {k} clusters",
            distinct.len()
        )));
    }
    if distinct.len() == k {
        return Ok(distinct);
    }

    // k-means++ on the sorted data
    let mut rng = Rng::new(seed);
    let mut centers = Vec::with_capacity(k);
    centers.push(sorted[rng.below(sorted.len())]);
    let mut d2: Vec<f64> = sorted.iter().map(|&v| (v - centers[0]) * (v - centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // all mass already covered; pick any value distinct from the centers
            *distinct
                .iter()
                .find(|v| !centers.contains(v))
                .expect("distinct count > k was checked")
        } else {
            let mut target = rng.uniform() * total;
            let mut chosen = sorted[sorted.len() - 1];
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = sorted[i];
                    break;
                }
                target -= w;
            }
            chosen
        };
        centers.push(next);
        for (i, &v) in sorted.iter().enumerate() {
            d2[i] = d2[i].min((v - next) * (v - next));
        }
    }
    centers.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Lloyd iterations; in 1-D with sorted data each cluster is a contiguous
    // run split at center midpoints.
    for _ in 0..MAX_ITERS {
        let mut sums = vec![0.0f64; k];
        let mut counts = vec![0usize; k];
        // nearest-center index is monotone over the sorted values
        let mut ci = 0usize;
        for &v in &sorted {
            while ci + 1 < k && (v - centers[ci]).abs() > (v - centers[ci + 1]).abs() {
                ci += 1;
            }
            sums[ci] += v;
            counts[ci] += 1;
        }
        let mut moved = 0.0f64;
        for i in 0..k {
            if counts[i] == 0 {
                continue; // keep empty cluster's center in place
            }
            let nc = sums[i] / counts[i] as f64;
            moved = moved.max((nc - centers[i]).abs());
            centers[i] = nc;
        }
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if moved < TOL {
            break;
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfectly_separated_two_clusters() {
        let c = kmeans_centers(&[-1.0, -1.0, 1.0, 1.0], 2, 1).unwrap();
        assert_eq!(c, vec![-1.0, 1.0]);
    }

    #[test]
    fn k_equals_distinct_returns_values() {
        let c = kmeans_centers(&[3.0, 1.0, 2.0, 1.0, 3.0], 3, 1).unwrap();
        assert_eq!(c, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn six_point_example_means() {
        // clusters {-1,-1,-0.9} and {0.9,1,1} -> centers -0.9667, 0.9667
        let c = kmeans_centers(&[-1.0, -1.0, -0.9, 0.9, 1.0, 1.0], 2, 42).unwrap();
        assert!((c[0] + 0.9667).abs() < 1e-3, "{c:?}");
        assert!((c[1] - 0.9667).abs() < 1e-3, "{c:?}");
    }

    #[test]
    fn empty_and_degenerate_inputs_error() {
        assert!(kmeans_centers(&[], 2, 1).is_err());
        assert!(kmeans_centers(&[5.0; 10], 2, 1).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = crate::rng::Rng::new(77);
        let vals = rng.fill_normal(500);
        let a = kmeans_centers(&vals, 7, 9).unwrap();
        let b = kmeans_centers(&vals, 7, 9).unwrap();
        assert_eq!(a, b);
    }
}
