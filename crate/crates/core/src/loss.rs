//! Training objectives.
//!
//! All losses are assembled from graph ops over per-sample scalar nodes,
//! so they are differentiable end to end. Supervision is a single pixel
//! per sample: callers gather `(z_hat, v_hat)` at the poke point and pass
//! the scalars here.
//!
//! * `depth_loss`: squared error weighted per grasp outcome class, each
//!   class normalized by its own count.
//! * `gaussian_nll`: Gaussian negative log likelihood; gradients flow
//!   into both the depth and the variance estimates.
//! * `moments_loss`: regresses the variance map onto the squared
//!   residuals, with a stop gradient on the depth estimate so only the
//!   variance path is updated.
//! * `combined_loss`: depth loss plus `lambda_v` times the moments loss.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::scalar::Scalar;

/// Objective selection for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Weighted depth loss only; the variance head is untrained.
    Plain,
    /// Depth loss plus weighted moments loss.
    #[default]
    Moments,
    /// Gaussian log-likelihood alone, unweighted by grasp outcome.
    LogLik,
}

impl LossMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(LossMode::Plain),
            "moments" => Some(LossMode::Moments),
            "loglik" => Some(LossMode::LogLik),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Plain => "plain",
            LossMode::Moments => "moments",
            LossMode::LogLik => "loglik",
        }
    }
}

/// Scalar weights of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of samples from successful grasps.
    pub lambda_plus: f64,
    /// Weight of samples from failed grasps (noisier labels).
    pub lambda_minus: f64,
    /// Weight of the variance (moments) term in the combined objective.
    pub lambda_v: f64,
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_plus: 1.0,
            lambda_minus: 0.25,
            lambda_v: 1.0,
            mode: LossMode::Moments,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_plus < 0.0 || self.lambda_minus < 0.0 || self.lambda_v < 0.0 {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        if self.lambda_plus + self.lambda_minus <= 0.0 {
            return Err(Error::config("lambda_plus + lambda_minus must be positive"));
        }
        Ok(())
    }
}

/// One pixel of supervision: grasp point, binary outcome, measured tooltip
/// depth in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PokeLabel {
    pub row: usize,
    pub col: usize,
    pub success: bool,
    pub z_mm: f64,
}

/// Squared error of one depth estimate against its label.
pub fn residual<S: Scalar>(g: &mut Graph<S>, z_hat: TensorId, z_mm: S) -> Result<TensorId> {
    let label = g.scalar(z_mm);
    let diff = g.sub(z_hat, label)?;
    Ok(g.square(diff))
}

fn weighted_sum<S: Scalar>(
    g: &mut Graph<S>,
    terms: &[(TensorId, f64)],
) -> Result<Option<TensorId>> {
    let mut acc: Option<TensorId> = None;
    for &(id, weight) in terms {
        let scaled = g.scale(id, S::from_f64_lossy(weight));
        acc = Some(match acc {
            Some(a) => g.add(a, scaled)?,
            None => scaled,
        });
    }
    Ok(acc)
}

/// Class-weighted depth objective over a batch.
///
/// Successful samples are averaged with weight `lambda_plus`, failed ones
/// with `lambda_minus`, each normalized by its own class count. A class
/// with no samples contributes nothing (its normalizer would be zero).
pub fn depth_loss<S: Scalar>(
    g: &mut Graph<S>,
    z_hats: &[TensorId],
    labels: &[PokeLabel],
    lambda_plus: f64,
    lambda_minus: f64,
) -> Result<TensorId> {
    if z_hats.is_empty() || z_hats.len() != labels.len() {
        return Err(Error::EmptyBatch);
    }
    let n_pos = labels.iter().filter(|l| l.success).count();
    let n_neg = labels.len() - n_pos;
    let mut terms = Vec::with_capacity(labels.len());
    for (&z_hat, label) in z_hats.iter().zip(labels) {
        let v = residual(g, z_hat, S::from_f64_lossy(label.z_mm))?;
        let weight = if label.success {
            lambda_plus / n_pos as f64
        } else {
            lambda_minus / n_neg as f64
        };
        terms.push((v, weight));
    }
    weighted_sum(g, &terms)?.ok_or(Error::EmptyBatch)
}

/// Gaussian negative log likelihood, averaged over the batch:
/// `(1/N) sum_i [ (1/(2 v_i)) (z_i - z_hat_i)^2 + (1/2) log v_i ]`.
///
/// Differentiable with respect to both estimates; no stop gradient, so the
/// objective can trade residual against predicted variance.
pub fn gaussian_nll<S: Scalar>(
    g: &mut Graph<S>,
    preds: &[(TensorId, TensorId)],
    z_mm: &[f64],
) -> Result<TensorId> {
    if preds.is_empty() || preds.len() != z_mm.len() {
        return Err(Error::EmptyBatch);
    }
    let half = 0.5 / preds.len() as f64;
    let mut terms = Vec::with_capacity(preds.len() * 2);
    for (&(z_hat, v_hat), &z) in preds.iter().zip(z_mm) {
        // 1/(2v) = 0.5 * exp(-log v); log also validates positivity.
        let logv = g.log(v_hat)?;
        let neg_logv = g.scale(logv, -S::one());
        let inv_v = g.exp(neg_logv);
        let r2 = residual(g, z_hat, S::from_f64_lossy(z))?;
        let fit = g.mul(inv_v, r2)?;
        terms.push((fit, half));
        terms.push((logv, half));
    }
    weighted_sum(g, &terms)?.ok_or(Error::EmptyBatch)
}

/// Moments objective, averaged over the batch:
/// `(1/N) sum_i ((sg(z_hat_i) - z_i)^2 - v_hat_i)^2`.
///
/// The stop gradient is applied here, so the depth estimation head
/// receives exactly zero gradient from this term.
pub fn moments_loss<S: Scalar>(
    g: &mut Graph<S>,
    preds: &[(TensorId, TensorId)],
    z_mm: &[f64],
) -> Result<TensorId> {
    if preds.is_empty() || preds.len() != z_mm.len() {
        return Err(Error::EmptyBatch);
    }
    let inv_n = 1.0 / preds.len() as f64;
    let mut terms = Vec::with_capacity(preds.len());
    for (&(z_hat, v_hat), &z) in preds.iter().zip(z_mm) {
        let frozen = g.stop_gradient(z_hat);
        let r2 = residual(g, frozen, S::from_f64_lossy(z))?;
        let gap = g.sub(r2, v_hat)?;
        terms.push((g.square(gap), inv_n));
    }
    weighted_sum(g, &terms)?.ok_or(Error::EmptyBatch)
}

/// Combined objective `J = depth + lambda_v * moments`.
pub fn combined_loss<S: Scalar>(
    g: &mut Graph<S>,
    depth_term: TensorId,
    moments_term: TensorId,
    lambda_v: f64,
) -> Result<TensorId> {
    let scaled = g.scale(moments_term, S::from_f64_lossy(lambda_v));
    g.add(depth_term, scaled)
}
