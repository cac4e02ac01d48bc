//! Quantizer properties: soft/ideal convergence on a dense grid, gradient
//! checks for the soft quantizer, an exhaustive dynamic-programming 1-D
//! k-means oracle, and pack/unpack round trips.

use limuse::gradcheck::{max_rel_err, FD_TOL};
use limuse::quant::{
    ideal_quantize, init_quantizer, kmeans_centers, pack_codes, soft_quantize, unpack_codes,
    QuantLevelSet, QuantizerParams, TemperatureSchedule,
};
use limuse::rng::Rng;
use limuse::tensor::Tensor;
use proptest::prelude::*;

fn paper_params() -> QuantizerParams {
    QuantizerParams::uniform(QuantLevelSet::for_bits(3).unwrap())
}

#[test]
fn sup_gap_under_1e3_once_temperature_reaches_1000() {
    let q = paper_params();
    let alpha = Tensor::scalar(q.alpha);
    let beta = Tensor::scalar(q.beta);
    // 10,001-point grid on [-5, 5]. The excluded neighborhoods around the
    // bias points are 1e-3 of the grid range (radius 0.01): the sigmoid gap
    // at distance d from a bias is 1/(1+e^(T d)), so a sub-1e-3 gap at
    // T = 1000 needs d > ln(999)/1000 ~ 0.0069.
    let radius = 1e-3 * 10.0;
    let xs: Vec<f64> = (0..=10_000)
        .map(|i| -5.0 + i as f64 * (10.0 / 10_000.0))
        .filter(|x| q.biases.iter().all(|b| (x - b).abs() > radius))
        .collect();
    let xt = Tensor::from_vec(xs.clone(), &[xs.len()]).unwrap();
    let soft = soft_quantize(&xt, &alpha, &beta, &q.levels, &q.biases, 1000.0).unwrap();
    let sup = xs
        .iter()
        .zip(soft.data())
        .map(|(&x, &s)| (ideal_quantize(x, &q) - s).abs())
        .fold(0.0, f64::max);
    assert!(sup < 1e-3, "sup gap {sup}");
    // and the property keeps holding as T grows
    let soft_hi = soft_quantize(&xt, &alpha, &beta, &q.levels, &q.biases, 5000.0).unwrap();
    let sup_hi = xs
        .iter()
        .zip(soft_hi.data())
        .map(|(&x, &s)| (ideal_quantize(x, &q) - s).abs())
        .fold(0.0, f64::max);
    assert!(sup_hi <= sup);
}

#[test]
fn soft_quantize_gradients_match_fd() {
    let q = paper_params();
    for temperature in [5.0, 20.0, 50.0] {
        let mut rng = Rng::new(17);
        let x = (rng.fill_uniform(24, -4.0, 4.0), vec![24]);
        let a = (vec![0.8], vec![1]);
        let b = (vec![1.2], vec![1]);
        let levels = q.levels.clone();
        let biases = q.biases.clone();
        let err = max_rel_err(&[x, a, b], |xs| {
            let y = soft_quantize(&xs[0], &xs[1], &xs[2], &levels, &biases, temperature)?;
            limuse::gradcheck::project(&y, 3)
        })
        .unwrap();
        assert!(err < FD_TOL, "soft_quantize T={temperature}: FD err {err}");
    }
}

#[test]
fn temperature_schedule_is_linear_in_epochs() {
    let sched = TemperatureSchedule::new(5.0);
    assert_eq!(sched.at_epoch(1), 5.0);
    assert_eq!(sched.at_epoch(4), 20.0);
}

// ── Exhaustive 1-D k-means oracle ────────────────────────────────────

/// Optimal 1-D k-means by dynamic programming over sorted values
/// (clusters of an optimal solution are contiguous runs).
fn kmeans_oracle(values: &[f64], k: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let mut prefix = vec![0.0f64; n + 1];
    let mut prefix2 = vec![0.0f64; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + v[i];
        prefix2[i + 1] = prefix2[i] + v[i] * v[i];
    }
    // cost of clustering v[i..j] around its mean
    let cost = |i: usize, j: usize| -> f64 {
        let s = prefix[j] - prefix[i];
        let s2 = prefix2[j] - prefix2[i];
        s2 - s * s / (j - i) as f64
    };
    let inf = f64::INFINITY;
    let mut dp = vec![vec![inf; n + 1]; k + 1];
    let mut cut = vec![vec![0usize; n + 1]; k + 1];
    dp[0][0] = 0.0;
    for c in 1..=k {
        for j in c..=n {
            for i in (c - 1)..j {
                let val = dp[c - 1][i] + cost(i, j);
                if val < dp[c][j] {
                    dp[c][j] = val;
                    cut[c][j] = i;
                }
            }
        }
    }
    // walk back cuts and emit means
    let mut bounds = vec![n];
    let mut j = n;
    for c in (1..=k).rev() {
        j = cut[c][j];
        bounds.push(j);
    }
    bounds.reverse();
    let mut centers = Vec::with_capacity(k);
    for w in bounds.windows(2) {
        let (i, j) = (w[0], w[1]);
        centers.push((prefix[j] - prefix[i]) / (j - i) as f64);
    }
    centers
}

#[test]
fn kmeans_matches_dp_oracle_on_small_inputs() {
    // unambiguous instances: centers must match the DP optimum
    let cases: Vec<(Vec<f64>, usize)> = vec![
        (vec![-1.0, -1.0, -0.9, 0.9, 1.0, 1.0], 2),
        (vec![0.0, 0.1, 0.2, 5.0, 5.1, 9.0, 9.3], 3),
    ];
    for (vals, k) in cases {
        let got = kmeans_centers(&vals, k, 11).unwrap();
        let want = kmeans_oracle(&vals, k);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-3, "centers {got:?} vs oracle {want:?}");
        }
    }
    // tied instance ({-2..2}, k=2, two mirror optima): cost must match
    let vals = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let got = kmeans_centers(&vals, 2, 11).unwrap();
    let want = kmeans_oracle(&vals, 2);
    let cost = |centers: &[f64]| -> f64 {
        vals.iter()
            .map(|&v| centers.iter().map(|&c| (v - c) * (v - c)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
    };
    assert!((cost(&got) - cost(&want)).abs() < 1e-9, "{got:?} vs {want:?}");
}

#[test]
fn kmeans_near_optimal_on_random_clustered_data() {
    // Lloyd's is a local method; require it to land within a whisker of the
    // DP optimum's cost on clearly clustered data.
    let mut rng = Rng::new(2024);
    for trial in 0..5 {
        let mut vals = Vec::new();
        for c in 0..4 {
            let center = c as f64 * 2.0;
            for _ in 0..30 {
                vals.push(center + 0.1 * rng.normal());
            }
        }
        let got = kmeans_centers(&vals, 4, trial).unwrap();
        let want = kmeans_oracle(&vals, 4);
        let cost = |centers: &[f64]| -> f64 {
            vals.iter()
                .map(|&v| {
                    centers.iter().map(|&c| (v - c) * (v - c)).fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
        };
        let (cg, cw) = (cost(&got), cost(&want));
        assert!(cg <= cw * 1.001 + 1e-9, "trial {trial}: cost {cg} vs optimal {cw}");
    }
}

#[test]
fn init_quantizer_biases_are_oracle_midpoints() {
    let mut rng = Rng::new(31);
    let mut w = Vec::new();
    for c in -3..=3 {
        for _ in 0..40 {
            w.push(c as f64 * 0.3 + 0.02 * rng.normal());
        }
    }
    let levels = QuantLevelSet::for_bits(3).unwrap();
    let q = init_quantizer(&w, &levels, 3).unwrap();
    let oracle = kmeans_oracle(&w, 7);
    for (b, win) in q.biases.iter().zip(oracle.windows(2)) {
        let mid = 0.5 * (win[0] + win[1]);
        assert!((b - mid).abs() < 5e-3, "bias {b} vs oracle midpoint {mid}");
    }
    // alpha spans the center range over the gamma span
    let expect_alpha = (oracle[6] - oracle[0]) / 6.0;
    assert!((q.alpha - expect_alpha).abs() < 5e-3);
}

// ── Packing properties ───────────────────────────────────────────────

proptest! {
    #[test]
    fn pack_unpack_identity(
        codes in proptest::collection::vec(0u16..7, 0..200),
        extra_bits in 3u32..9,
    ) {
        let packed = pack_codes(&codes, extra_bits).unwrap();
        prop_assert_eq!(packed.len(), (codes.len() * extra_bits as usize).div_ceil(8));
        let unpacked = unpack_codes(&packed, extra_bits, codes.len()).unwrap();
        prop_assert_eq!(unpacked, codes);
    }
}

#[test]
fn packed_density_is_three_bytes_per_eight_codes() {
    let codes = vec![5u16; 800];
    let packed = pack_codes(&codes, 3).unwrap();
    assert_eq!(packed.len(), 300);
}
