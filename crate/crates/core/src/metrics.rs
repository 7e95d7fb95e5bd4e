//! Evaluation metrics: relative error, ROC-AUC and PSNR.

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor3};

/// `‖estimate − truth‖_F / ‖truth‖_F`.
pub fn relative_error(estimate: &Tensor3, truth: &Tensor3) -> Result<f64> {
    estimate.check_same_shape(truth)?;
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(estimate.sub(truth)?.norm() / denom)
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
///
/// Computed from midranks (Mann–Whitney U) in `O(n log n)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (1-based) midranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        let pos_in_tie = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += midrank * pos_in_tie as f64;
        start = end;
    }
    let (p, n) = (positives as f64, negatives as f64);
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok((u / (p * n)).clamp(0.0, 1.0))
}

/// Mean squared error over all entries.
pub fn mse(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() || estimate.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} values",
            estimate.len(),
            reference.len()
        )));
    }
    Ok(estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / estimate.len() as f64)
}

/// `10·log₁₀(peak² / MSE)` in decibels; `+∞` when the images are identical.
pub fn psnr(estimate: &Matrix, reference: &Matrix, peak: f64) -> Result<f64> {
    if estimate.shape() != reference.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            estimate.shape(),
            reference.shape()
        )));
    }
    psnr_from_mse(mse(estimate.as_slice(), reference.as_slice())?, peak)
}

/// PSNR over every entry of a tensor (all channels of a color image, say).
pub fn psnr_tensor(estimate: &Tensor3, reference: &Tensor3, peak: f64) -> Result<f64> {
    estimate.check_same_shape(reference)?;
    psnr_from_mse(mse(estimate.as_slice(), reference.as_slice())?, peak)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Peak used for float data: the dynamic range of the reference.
pub fn dynamic_range(reference: &[f64]) -> f64 {
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Named metric values. Insertion order is preserved for stable CSV output;
/// the parameters that produced them live in the run manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub values: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.values.push((name.into(), value));
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}
