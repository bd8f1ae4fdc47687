//! Evaluation metrics: RMSE at poke points, signed-error histograms,
//! studentized residuals, Q-Q points against the standard normal, and
//! variance-ranked data-discard curves.
//!
//! All functions are pure; statistics accumulate in f64.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Root mean squared error between predictions and labels.
pub fn rmse(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::EmptyBatch);
    }
    let n = predictions.len() as f64;
    let sq: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &z)| (p - z) * (p - z))
        .sum();
    Ok((sq / n).sqrt())
}

/// Mean of `prediction - label`; positive means over-estimation.
pub fn mean_signed_error(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::EmptyBatch);
    }
    let n = predictions.len() as f64;
    Ok(predictions.iter().zip(labels).map(|(&p, &z)| p - z).sum::<f64>() / n)
}

/// A histogram over half-open bins `[lo, hi)` whose edges are integer
/// multiples of the bin width, so zero is always an edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    /// Lower edge of the first bin.
    pub first_edge: f64,
    /// Raw counts per consecutive bin; log scaling is a rendering concern.
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn edges(&self, bin: usize) -> (f64, f64) {
        (
            self.first_edge + bin as f64 * self.bin_width,
            self.first_edge + (bin + 1) as f64 * self.bin_width,
        )
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bins signed errors symmetrically about zero. A value exactly on an edge
/// belongs to the bin opening at that edge.
pub fn error_histogram(errors: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0) {
        return Err(Error::invalid("histogram", "bin_width must be positive"));
    }
    if errors.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let bin_of = |e: f64| (e / bin_width).floor() as i64;
    let lo = errors.iter().copied().map(bin_of).min().unwrap();
    let hi = errors.iter().copied().map(bin_of).max().unwrap();
    let mut counts = alloc::vec![0u64; (hi - lo + 1) as usize];
    for &e in errors {
        counts[(bin_of(e) - lo) as usize] += 1;
    }
    Ok(Histogram {
        bin_width,
        first_edge: lo as f64 * bin_width,
        counts,
    })
}

/// Residual divided by the predicted standard deviation.
pub fn studentize(z_hat: f64, z: f64, v_hat: f64) -> Result<f64> {
    if !(v_hat > 0.0) {
        return Err(Error::NonPositiveVariance { value: v_hat });
    }
    Ok((z_hat - z) / v_hat.sqrt())
}

/// Inverse CDF of the standard normal via a two-region rational
/// approximation (central polynomial ratio plus log-tail expansion);
/// absolute error is below 1.5e-7 over (0, 1), verified against a
/// quadrature-plus-bisection oracle in tests.
pub fn norm_inv_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "norm_inv_cdf domain is (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Sorted studentized residuals paired with standard-normal quantiles at
/// plotting positions `(i - 0.5) / n`.
pub fn qq_points(residuals: &[f64]) -> Result<Vec<(f64, f64)>> {
    if residuals.len() < 2 {
        return Err(Error::invalid("qq", "need at least 2 residuals"));
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &r)| (norm_inv_cdf((i as f64 + 0.5) / n), r))
        .collect())
}

/// RMSE of the retained samples as the highest-predicted-variance fraction
/// is discarded. `steps` controls the grid: retained fractions run from
/// 1.0 down to `1/steps`. Ties in the variance ranking keep input order.
pub fn discard_curve(
    errors: &[f64],
    variances: &[f64],
    steps: usize,
) -> Result<Vec<(f64, f64)>> {
    let n = errors.len();
    if n == 0 || n != variances.len() {
        return Err(Error::EmptyBatch);
    }
    if steps == 0 || n < steps {
        return Err(Error::invalid(
            "discard_curve",
            "need at least one sample per percentile step",
        ));
    }
    // Rank by variance descending, stable in input order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        variances[b]
            .partial_cmp(&variances[a])
            .expect("finite variances")
    });
    let mut curve = Vec::with_capacity(steps);
    for s in 0..steps {
        let fraction = (steps - s) as f64 / steps as f64;
        let keep = ((fraction * n as f64).round() as usize).clamp(1, n);
        let kept = &order[n - keep..];
        let sq: f64 = kept.iter().map(|&i| errors[i] * errors[i]).sum();
        curve.push((fraction, (sq / keep as f64).sqrt()));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_hand_values() {
        let preds = [3.0, 4.0];
        let labels = [0.0, 0.0];
        assert!((rmse(&preds, &labels).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        // Permutation invariant.
        assert_eq!(
            rmse(&[3.0, 4.0], &[0.0, 1.0]).unwrap(),
            rmse(&[4.0, 3.0], &[1.0, 0.0]).unwrap()
        );
    }

    #[test]
    fn rmse_bounds_mean_signed_error() {
        let preds = [1.0, -3.0, 2.5, 0.1];
        let labels = [0.5, 1.0, -2.0, 0.0];
        let r = rmse(&preds, &labels).unwrap();
        let m = mean_signed_error(&preds, &labels).unwrap();
        assert!(r >= m.abs());
    }

    #[test]
    fn histogram_examples() {
        let h = error_histogram(&[-1.0, 1.0], 2.0).unwrap();
        assert_eq!(h.counts, [1, 1]);
        assert_eq!(h.edges(0), (-2.0, 0.0));
        assert_eq!(h.edges(1), (0.0, 2.0));
        assert_eq!(h.total(), 2);

        // A value exactly on an edge opens the right bin.
        let h = error_histogram(&[2.0], 2.0).unwrap();
        assert_eq!(h.edges(0), (2.0, 4.0));

        let errs: Vec<f64> = (0..100).map(|i| (i as f64 - 50.0) * 0.3).collect();
        let h = error_histogram(&errs, 5.0).unwrap();
        assert_eq!(h.total(), 100);
    }

    #[test]
    fn studentize_examples() {
        assert_eq!(studentize(0.0, 3.0, 9.0).unwrap(), -1.0);
        assert_eq!(studentize(5.0, 5.0, 2.0).unwrap(), 0.0);
        // Scale invariance: scaling residual and sqrt(v) by c cancels.
        let a = studentize(4.0, 1.0, 2.0).unwrap();
        let c = 7.5;
        let b = studentize(c * 4.0, c * 1.0, c * c * 2.0).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(studentize(1.0, 0.0, 0.0).is_err());
    }

    /// Quadrature oracle: standard normal CDF by Simpson integration, then
    /// bisection to invert. Independent of the rational approximation.
    fn inv_cdf_oracle(p: f64) -> f64 {
        let pdf = |x: f64| (-x * x / 2.0).exp() / (2.0 * core::f64::consts::PI).sqrt();
        let cdf = |x: f64| {
            // Simpson over [-12, x].
            let a = -12.0;
            let n = 4000;
            let h = (x - a) / n as f64;
            let mut s = pdf(a) + pdf(x);
            for i in 1..n {
                let xi = a + i as f64 * h;
                s += pdf(xi) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let (mut lo, mut hi) = (-12.0, 12.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn inverse_cdf_matches_quadrature_oracle() {
        for &p in &[
            1e-6, 1e-4, 0.01, 0.02425, 0.1, 1.0 / 6.0, 0.25, 0.5, 0.75, 5.0 / 6.0, 0.9, 0.99,
            0.9999, 1.0 - 1e-6,
        ] {
            let got = norm_inv_cdf(p);
            let want = inv_cdf_oracle(p);
            assert!(
                (got - want).abs() < 1.5e-7,
                "p={p}: got {got}, oracle {want}"
            );
        }
        assert_eq!(norm_inv_cdf(0.5), 0.0);
    }

    #[test]
    fn qq_three_point_quantiles() {
        // Plotting positions {1/6, 1/2, 5/6} -> {-0.9674, 0, +0.9674}.
        let pts = qq_points(&[0.3, -0.1, 0.9]).unwrap();
        assert!((pts[0].0 + 0.967_421_566_101_7).abs() < 1e-6);
        assert!(pts[1].0.abs() < 1e-12);
        assert!((pts[2].0 - 0.967_421_566_101_7).abs() < 1e-6);
        // Empirical side is the sorted residuals.
        assert_eq!(pts[0].1, -0.1);
        assert_eq!(pts[2].1, 0.9);
    }

    #[test]
    fn qq_identity_when_residuals_are_normal_quantiles() {
        let n = 25;
        let residuals: Vec<f64> = (0..n)
            .map(|i| norm_inv_cdf((i as f64 + 0.5) / n as f64))
            .collect();
        let pts = qq_points(&residuals).unwrap();
        for (t, e) in pts {
            assert!((t - e).abs() < 1e-6, "{t} vs {e}");
        }
    }

    #[test]
    fn qq_output_is_sorted_both_ways() {
        let pts = qq_points(&[2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
        for w in pts.windows(2) {
            assert!(w[0].0 <= w[1].0);
            assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn discard_curve_hand_example() {
        // errors [1,2,10], variances ranked like magnitudes.
        let errors = [1.0, 2.0, 10.0];
        let variances = [1.0, 4.0, 100.0];
        let curve = discard_curve(&errors, &variances, 3).unwrap();
        assert_eq!(curve[0].0, 1.0);
        assert!((curve[0].1 - 35.0f64.sqrt()).abs() < 1e-12);
        assert!((curve[1].0 - 2.0 / 3.0).abs() < 1e-12);
        assert!((curve[1].1 - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn discard_curve_constant_variance_is_flat() {
        let errors = [3.0, -1.0, 2.0, 0.5, -2.5];
        let variances = [1.0; 5];
        let curve = discard_curve(&errors, &variances, 5).unwrap();
        // Stable tie-break drops from the front of the input order.
        let full = curve[0].1;
        assert_eq!(curve[0].0, 1.0);
        assert!((full - rmse(&errors, &[0.0; 5]).unwrap()).abs() < 1e-12);
        for (f, r) in &curve {
            let keep = ((f * 5.0).round() as usize).max(1);
            let kept = &errors[5 - keep..];
            let want = (kept.iter().map(|e| e * e).sum::<f64>() / keep as f64).sqrt();
            assert!((r - want).abs() < 1e-12);
        }
    }

    #[test]
    fn discard_curve_anticorrelated_is_nondecreasing() {
        // Largest variance on the smallest error: removing data only
        // concentrates the big errors.
        let errors = [1.0, 2.0, 4.0, 8.0];
        let variances = [8.0, 4.0, 2.0, 1.0];
        let curve = discard_curve(&errors, &variances, 4).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn discard_curve_perfect_ranking_is_nonincreasing() {
        let errors: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let variances: Vec<f64> = errors.iter().map(|e| e * e).collect();
        let curve = discard_curve(&errors, &variances, 10).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn synthetic_studentized_residuals_are_unit_normal() {
        use rand::Rng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::stream(77, crate::rng::StreamId::Poke);
        let n = 10_000;
        let mut studentized = Vec::with_capacity(n);
        for _ in 0..n {
            let v: f64 = rng.random_range(0.5..50.0);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let residual = noise * v.sqrt();
            studentized.push(studentize(residual, 0.0, v).unwrap());
        }
        let mean = studentized.iter().sum::<f64>() / n as f64;
        let std = (studentized.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((0.9..=1.1).contains(&std), "std {std}");
    }
}
