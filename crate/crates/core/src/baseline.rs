//! Classical sensor-readout baselines: raw lookup with nearest-valid
//! fallback, Gaussian-filtered lookup with invalid-pixel renormalization,
//! and empirical constant bias correction.

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::sim::INVALID_DEPTH_MM;

fn pixel_ok(v: f32) -> bool {
    v != INVALID_DEPTH_MM
}

/// Nearest valid pixel by Euclidean distance; ties resolve to the first in
/// row-major order.
fn nearest_valid(depth: &[f32], height: usize, width: usize, row: usize, col: usize) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for y in 0..height {
        for x in 0..width {
            let v = depth[y * width + x];
            if !pixel_ok(v) {
                continue;
            }
            let dy = y as f64 - row as f64;
            let dx = x as f64 - col as f64;
            let d2 = dy * dy + dx * dx;
            if best.map_or(true, |(bd2, _)| d2 < bd2) {
                best = Some((d2, v as f64));
            }
        }
    }
    best.map(|(_, v)| v).ok_or(Error::AllPixelsInvalid)
}

/// Sensor value at the poke point. Invalid pixels fall back to the nearest
/// valid reading; a fully invalid map is an error.
pub fn raw_sensor_predict(
    depth: &[f32],
    height: usize,
    width: usize,
    row: usize,
    col: usize,
) -> Result<f64> {
    if row >= height || col >= width {
        return Err(Error::PixelOutOfBounds {
            row,
            col,
            height,
            width,
        });
    }
    let v = depth[row * width + col];
    if pixel_ok(v) {
        Ok(v as f64)
    } else {
        nearest_valid(depth, height, width, row, col)
    }
}

/// Gaussian-filtered sensor value at the poke point. The kernel is
/// truncated at three sigma; invalid pixels are excluded and the remaining
/// weights renormalized. An all-invalid window falls back to the nearest
/// valid pixel anywhere in the map.
pub fn gaussian_filter_predict(
    depth: &[f32],
    height: usize,
    width: usize,
    row: usize,
    col: usize,
    sigma: f64,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("gaussian_filter", "sigma must be positive"));
    }
    if row >= height || col >= width {
        return Err(Error::PixelOutOfBounds {
            row,
            col,
            height,
            width,
        });
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let mut weight_sum = 0.0f64;
    let mut value_sum = 0.0f64;
    for dy in -radius..=radius {
        let y = row as i64 + dy;
        if y < 0 || y >= height as i64 {
            continue;
        }
        for dx in -radius..=radius {
            let x = col as i64 + dx;
            if x < 0 || x >= width as i64 {
                continue;
            }
            let v = depth[y as usize * width + x as usize];
            if !pixel_ok(v) {
                continue;
            }
            let w = (-((dy * dy + dx * dx) as f64) * inv_two_sigma2).exp();
            weight_sum += w;
            value_sum += w * v as f64;
        }
    }
    if weight_sum > 0.0 {
        Ok(value_sum / weight_sum)
    } else {
        nearest_valid(depth, height, width, row, col)
    }
}

/// Spec'd default filter width and the sweep used when a calibration split
/// is available.
pub const DEFAULT_FILTER_SIGMA: f64 = 13.0;
pub const FILTER_SIGMA_SWEEP: [f64; 4] = [5.0, 9.0, 13.0, 17.0];

/// Constant offset estimated as `mean(prediction - label)` on a
/// calibration split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasEstimate {
    pub offset_mm: f64,
    pub sample_count: usize,
}

pub fn estimate_bias(predictions: &[f64], labels: &[f64]) -> Result<BiasEstimate> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::EmptyBatch);
    }
    let n = predictions.len() as f64;
    let offset = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &z)| p - z)
        .sum::<f64>()
        / n;
    Ok(BiasEstimate {
        offset_mm: offset,
        sample_count: predictions.len(),
    })
}

/// Subtracts the estimated constant from a prediction.
pub fn apply_bias(prediction: f64, bias: &BiasEstimate) -> f64 {
    prediction - bias.offset_mm
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use crate::rng::derive;
    use crate::sim::{generate_scene, sample_poke, SimulatorConfig};
    use alloc::vec;

    #[test]
    fn raw_lookup_and_fallback() {
        let d = vec![600.0f32; 9];
        assert_eq!(raw_sensor_predict(&d, 3, 3, 1, 1).unwrap(), 600.0);
        let mut d = vec![INVALID_DEPTH_MM; 9];
        d[5] = 610.0; // (1,2), distance 1 from (1,1)
        d[0] = 590.0; // (0,0), distance sqrt(2)
        assert_eq!(raw_sensor_predict(&d, 3, 3, 1, 1).unwrap(), 610.0);
        assert!(matches!(
            raw_sensor_predict(&d, 3, 3, 3, 0),
            Err(Error::PixelOutOfBounds { .. })
        ));
        let all_bad = vec![INVALID_DEPTH_MM; 9];
        assert!(matches!(
            raw_sensor_predict(&all_bad, 3, 3, 0, 0),
            Err(Error::AllPixelsInvalid)
        ));
    }

    #[test]
    fn filter_is_identity_on_constant_maps() {
        let d = vec![500.0f32; 15 * 15];
        for &(r, c) in &[(0usize, 0usize), (7, 7), (14, 3)] {
            let v = gaussian_filter_predict(&d, 15, 15, r, c, 13.0).unwrap();
            assert!((v - 500.0).abs() < 1e-9, "at ({r},{c}): {v}");
        }
    }

    #[test]
    fn filter_shrinks_a_lone_gross_error() {
        let mut d = vec![600.0f32; 21 * 21];
        d[10 * 21 + 10] = 3000.0;
        let raw_err = (raw_sensor_predict(&d, 21, 21, 10, 10).unwrap() - 600.0).abs();
        let gf_err = (gaussian_filter_predict(&d, 21, 21, 10, 10, 3.0).unwrap() - 600.0).abs();
        assert!(gf_err < raw_err);
        assert!(gf_err < 100.0, "filtered error {gf_err}");
    }

    #[test]
    fn tiny_sigma_reproduces_the_raw_pixel() {
        let mut d = vec![600.0f32; 49];
        d[3 * 7 + 3] = 643.5;
        let v = gaussian_filter_predict(&d, 7, 7, 3, 3, 0.1).unwrap();
        assert!((v - 643.5).abs() < 1e-3, "{v}");
    }

    #[test]
    fn filter_skips_invalid_and_falls_back_when_empty() {
        let mut d = vec![INVALID_DEPTH_MM; 25];
        d[0] = 580.0;
        // Window around (4,4) with sigma 0.5 has radius 2 and excludes
        // (0,0): renormalization has nothing, so fall back to nearest.
        let v = gaussian_filter_predict(&d, 5, 5, 4, 4, 0.5).unwrap();
        assert_eq!(v, 580.0);

        d[4 * 5 + 3] = 620.0;
        let v = gaussian_filter_predict(&d, 5, 5, 4, 4, 0.5).unwrap();
        assert_eq!(v, 620.0, "only valid in-window pixel should win");
    }

    #[test]
    fn filter_is_linear_on_fully_valid_maps() {
        let mut a = vec![0.0f32; 81];
        let mut b = vec![0.0f32; 81];
        for i in 0..81 {
            a[i] = 500.0 + (i as f32 * 7.3) % 40.0;
            b[i] = 550.0 + (i as f32 * 3.1) % 25.0;
        }
        let combo: Vec<f32> = a.iter().zip(&b).map(|(&x, &y)| 2.0 * x + 0.5 * y).collect();
        for &(r, c) in &[(4usize, 4usize), (0, 8), (8, 0)] {
            let fa = gaussian_filter_predict(&a, 9, 9, r, c, 2.0).unwrap();
            let fb = gaussian_filter_predict(&b, 9, 9, r, c, 2.0).unwrap();
            let fc = gaussian_filter_predict(&combo, 9, 9, r, c, 2.0).unwrap();
            let want = 2.0 * fa + 0.5 * fb;
            assert!((fc - want).abs() / want.abs() < 1e-4);
        }
    }

    #[test]
    fn filter_output_bounded_by_window_extremes() {
        let mut d = vec![0.0f32; 121];
        for (i, v) in d.iter_mut().enumerate() {
            *v = 400.0 + ((i * 31) % 97) as f32;
        }
        let (r, c, sigma) = (5usize, 5usize, 1.5f64);
        let radius = (3.0 * sigma).ceil() as i64;
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let y = r as i64 + dy;
                let x = c as i64 + dx;
                if (0..11).contains(&y) && (0..11).contains(&x) {
                    let v = d[y as usize * 11 + x as usize];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        let v = gaussian_filter_predict(&d, 11, 11, r, c, sigma).unwrap();
        assert!(v >= lo as f64 && v <= hi as f64);
    }

    #[test]
    fn bias_estimate_hand_example() {
        let b = estimate_bias(&[10.0, 12.0, 14.0], &[9.0, 11.0, 13.0]).unwrap();
        assert_eq!(b.offset_mm, 1.0);
        assert_eq!(b.sample_count, 3);
        let corrected: Vec<f64> = [10.0, 12.0, 14.0]
            .iter()
            .map(|&p| apply_bias(p, &b))
            .collect();
        let me: f64 = corrected
            .iter()
            .zip(&[9.0, 11.0, 13.0])
            .map(|(&p, &z)| p - z)
            .sum::<f64>()
            / 3.0;
        assert!(me.abs() < 1e-12);
    }

    #[test]
    fn bias_correction_zeroes_mean_error_on_calibration_split() {
        // On any data, corrected mean signed error over the calibration
        // split is zero up to float rounding.
        let preds: Vec<f64> = (0..500).map(|i| 600.0 + (i % 37) as f64 * 1.7).collect();
        let labels: Vec<f64> = (0..500).map(|i| 612.0 + (i % 23) as f64 * 2.3).collect();
        let b = estimate_bias(&preds, &labels).unwrap();
        let mean: f64 = preds
            .iter()
            .zip(&labels)
            .map(|(&p, &z)| apply_bias(p, &b) - z)
            .sum::<f64>()
            / 500.0;
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn noise_free_sim_bias_recovers_negative_compliance() {
        // With a noise-free sensor and noise-free labels, prediction is
        // D[g] = Z[g] and the label is Z[g] + 15, so the estimated bias is
        // exactly -15 and corrected predictions equal the labels.
        let mut cfg = SimulatorConfig::consumer();
        for m in &mut cfg.materials {
            m.gaussian_noise_std_mm = 0.0;
            m.gross_error_prob = 0.0;
        }
        cfg.invalid_pixel_prob = 0.0;
        cfg.labels.sigma_success_mm = 0.0;
        cfg.labels.sigma_fail_mm = 1e-6;
        cfg.labels.outlier_prob = 0.0;

        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for s in 0..10u64 {
            let scene = generate_scene(&cfg, s).unwrap();
            for k in 0..20 {
                let p = sample_poke(&scene, &cfg, derive(77 + s, k), false);
                if !p.success {
                    continue;
                }
                preds.push(
                    raw_sensor_predict(&p.depth, p.height, p.width, p.row, p.col).unwrap(),
                );
                labels.push(p.z_mm as f64);
            }
        }
        let b = estimate_bias(&preds, &labels).unwrap();
        assert!((b.offset_mm + 15.0).abs() < 1e-4, "bias {}", b.offset_mm);
        for (&p, &z) in preds.iter().zip(&labels) {
            assert!((apply_bias(p, &b) - z).abs() < 1e-3);
        }

        // Raw RMSE against the tooltip equals the compliance offset.
        let rmse = crate::metrics::rmse(&preds, &labels).unwrap();
        assert!((rmse - 15.0).abs() < 1e-4, "raw rmse {rmse}");
    }
}
