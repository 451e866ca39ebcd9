//! Trustworthiness, continuity and CE90.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::ChartModel;
use crate::dataset::Dataset;
use crate::geometry::Vec3;
use crate::pso::{localize_dataset, BiasVector};
use crate::{Error, Result};

fn sq_dist<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices `j ≠ i` ordered by distance to `i`, ties broken by index.
fn neighbour_order<const D: usize>(pts: &[[f64; D]], i: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pts.len()).filter(|&j| j != i).collect();
    let d: Vec<f64> = pts.iter().map(|p| sq_dist(&pts[i], p)).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    idx
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 points, got {n}"
        )));
    }
    if k < 1 || 2 * k >= n - 1 {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1 <= k < (N-1)/2 for N = {n}"
        )));
    }
    Ok(())
}

/// Penalises chart neighbours that are not true neighbours:
/// `1 − 2/(N k (2N − 3k − 1)) Σ_i Σ_{j ∈ U_k(i)} (r(i, j) − k)` with `r` the
/// rank in the true space and `U_k(i)` the chart k-NN outside the true k-NN.
pub fn trustworthiness<const A: usize, const B: usize>(
    true_pts: &[[f64; A]],
    chart_pts: &[[f64; B]],
    k: usize,
) -> Result<f64> {
    let n = true_pts.len();
    if chart_pts.len() != n {
        return Err(Error::Shape(format!(
            "{n} true points vs {} chart points",
            chart_pts.len()
        )));
    }
    check_k(n, k)?;
    let penalty: u64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rank = vec![0usize; n];
            for (r, j) in neighbour_order(true_pts, i).into_iter().enumerate() {
                rank[j] = r + 1;
            }
            neighbour_order(chart_pts, i)
                .into_iter()
                .take(k)
                .filter(|&j| rank[j] > k)
                .map(|j| (rank[j] - k) as u64)
                .sum::<u64>()
        })
        .sum();
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty as f64)
}

/// Trustworthiness with the roles of the two spaces swapped.
pub fn continuity<const A: usize, const B: usize>(
    true_pts: &[[f64; A]],
    chart_pts: &[[f64; B]],
    k: usize,
) -> Result<f64> {
    trustworthiness(chart_pts, true_pts, k)
}

/// 90th percentile with linear interpolation between order statistics.
pub fn ce90(errors: &[f64]) -> Result<f64> {
    percentile(errors, 0.9)
}

pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(
            "percentile of a list containing NaN".into(),
        ));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// `max(1, ⌊0.05 N⌋)`.
pub fn default_k(n: usize) -> usize {
    (n / 20).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub k_neighbors: usize,
    pub ct: f64,
    pub tw: f64,
    pub ce90: f64,
    pub mean_err: f64,
    pub per_step_errors: Vec<f64>,
}

/// Scores position estimates against ground truth using planar errors.
pub fn evaluate_positions(
    estimates: &[Vec3],
    truth: &[Vec3],
    k: Option<usize>,
) -> Result<EvalReport> {
    if estimates.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} ground-truth positions",
            estimates.len(),
            truth.len()
        )));
    }
    let n = truth.len();
    let k = k.unwrap_or_else(|| default_k(n));
    let est: Vec<[f64; 2]> = estimates.iter().map(|p| [p.x, p.y]).collect();
    let gt: Vec<[f64; 2]> = truth.iter().map(|p| [p.x, p.y]).collect();
    let errors: Vec<f64> = est
        .iter()
        .zip(&gt)
        .map(|(a, b)| sq_dist(a, b).sqrt())
        .collect();
    Ok(EvalReport {
        n,
        k_neighbors: k,
        ct: continuity(&gt, &est, k)?,
        tw: trustworthiness(&gt, &est, k)?,
        ce90: ce90(&errors)?,
        mean_err: errors.iter().sum::<f64>() / n as f64,
        per_step_errors: errors,
    })
}

/// Localises every step of a test dataset and scores it.
pub fn evaluate(
    model: &ChartModel<f32>,
    bias: &BiasVector,
    dataset: &Dataset,
    k: Option<usize>,
) -> Result<EvalReport> {
    let truth = dataset
        .ground_truth_positions()
        .ok_or_else(|| Error::Missing("evaluation needs ground-truth positions".into()))?;
    evaluate_positions(&localize_dataset(model, dataset, bias)?, &truth, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Domain};
    use proptest::prelude::*;
    use rand::Rng;

    /// Quadratic reference with explicit full rank matrices.
    fn brute_tw(x: &[[f64; 2]], y: &[[f64; 2]], k: usize) -> f64 {
        let n = x.len();
        let rank_of = |pts: &[[f64; 2]], i: usize, j: usize| -> usize {
            let dij = sq_dist(&pts[i], &pts[j]);
            1 + (0..n)
                .filter(|&l| l != i && l != j)
                .filter(|&l| {
                    let dl = sq_dist(&pts[i], &pts[l]);
                    dl < dij || (dl == dij && l < j)
                })
                .count()
        };
        let mut sum = 0u64;
        for i in 0..n {
            for j in 0..n {
                if j != i && rank_of(y, i, j) <= k && rank_of(x, i, j) > k {
                    sum += (rank_of(x, i, j) - k) as u64;
                }
            }
        }
        let (nf, kf) = (n as f64, k as f64);
        1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * sum as f64
    }

    fn random_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = rng::stream(seed, Domain::Diagnostic, 0);
        (0..n)
            .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
            .collect()
    }

    #[test]
    fn identity_and_similarity_score_one() {
        let x = random_points(40, 1);
        assert_eq!(trustworthiness(&x, &x, 3).unwrap(), 1.0);
        assert_eq!(continuity(&x, &x, 3).unwrap(), 1.0);
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let y: Vec<[f64; 2]> = x
            .iter()
            .map(|p| {
                [
                    2.0 * (c * p[0] - s * p[1]) + 5.0,
                    2.0 * (s * p[0] + c * p[1]) - 1.0,
                ]
            })
            .collect();
        assert_eq!(trustworthiness(&x, &y, 3).unwrap(), 1.0);
    }

    #[test]
    fn matches_brute_force() {
        for (seed, n, k) in [(2, 20, 3), (3, 30, 5), (4, 12, 2), (5, 25, 1)] {
            let x = random_points(n, seed);
            let y = random_points(n, seed + 100);
            assert_eq!(trustworthiness(&x, &y, k).unwrap(), brute_tw(&x, &y, k));
            assert_eq!(continuity(&x, &y, k).unwrap(), brute_tw(&y, &x, k));
            assert_eq!(
                continuity(&x, &y, k).unwrap(),
                trustworthiness(&y, &x, k).unwrap()
            );
        }
    }

    #[test]
    fn k_range_is_enforced() {
        let x = random_points(10, 1);
        assert!(trustworthiness(&x, &x, 0).is_err());
        assert!(trustworthiness(&x, &x, 5).is_err());
        assert!(trustworthiness(&x, &x, 4).is_ok());
        assert!(trustworthiness(&x[..3], &x[..3], 1).is_err());
    }

    #[test]
    fn ce90_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((ce90(&v).unwrap() - 9.1).abs() < 1e-12);
        assert_eq!(ce90(&[2.5; 7]).unwrap(), 2.5);
        assert!(ce90(&[]).is_err());
        let mut small: Vec<f64> = (0..99).map(|i| i as f64 * 0.01).collect();
        let before = ce90(&small).unwrap();
        small.push(1e6);
        let after = ce90(&small).unwrap();
        assert!(after - before <= 0.01 + 1e-12);
    }

    #[test]
    fn evaluate_examples() {
        let truth: Vec<Vec3> = random_points(50, 9)
            .iter()
            .map(|p| Vec3::new(p[0], p[1], 1.5))
            .collect();
        let perfect = evaluate_positions(&truth, &truth, None).unwrap();
        assert_eq!(
            (perfect.ce90, perfect.ct, perfect.tw, perfect.k_neighbors),
            (0.0, 1.0, 1.0, 2)
        );
        let shifted: Vec<Vec3> = truth
            .iter()
            .map(|p| *p + Vec3::new(3.0, 4.0, 0.0))
            .collect();
        let r = evaluate_positions(&shifted, &truth, None).unwrap();
        assert!((r.ce90 - 5.0).abs() < 1e-9 && r.ct == 1.0 && r.tw == 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn ce90_is_monotone(v in prop::collection::vec(0.0f64..100.0, 1..40), bump in prop::collection::vec(0.0f64..5.0, 40)) {
            let larger: Vec<f64> = v.iter().zip(&bump).map(|(a, b)| a + b).collect();
            prop_assert!(ce90(&larger).unwrap() >= ce90(&v).unwrap());
        }

        #[test]
        fn tw_in_unit_interval(seed in 0u64..1000) {
            let x = random_points(24, seed);
            let y = random_points(24, seed + 1);
            let tw = trustworthiness(&x, &y, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&tw));
        }
    }
}
