//! Gaussian-kernel (Nadaraya-Watson) regression over the support set.

use crate::error::Result;
use crate::linalg::sq_dist;

/// `exp(-|a - b|^2 / lambda)`.
pub fn kernel_weight(a: &[f64], b: &[f64], lambda: f64) -> f64 {
    (-sq_dist(a, b) / lambda).exp()
}

/// Normalised kernel weights of `query` against each support code.
///
/// Distances are shifted by their minimum before exponentiating; the shift
/// cancels in the normalisation and keeps the largest weight at 1.
pub fn normalized_weights(query: &[f64], support: &[Vec<f64>], lambda: f64) -> Vec<f64> {
    let d: Vec<f64> = support.iter().map(|s| sq_dist(query, s)).collect();
    let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d.iter().map(|di| (-(di - dmin) / lambda).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|wi| wi / z).collect()
}

pub fn weighted_average(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Weighted mean of integer counts, accumulated as offsets from the smallest
/// count so that equal counts reproduce that count exactly.
pub fn weighted_count(weights: &[f64], counts: &[usize]) -> f64 {
    let base = counts.iter().copied().min().unwrap_or(0);
    base as f64
        + weights
            .iter()
            .zip(counts)
            .map(|(w, &c)| w * (c - base) as f64)
            .sum::<f64>()
}

/// Kernel-weighted mean of support label counts for a query code.
pub fn label_count_from_codes(query: &[f64], support: &[Vec<f64>], counts: &[usize], lambda: f64) -> f64 {
    weighted_count(&normalized_weights(query, support, lambda), counts)
}

pub(crate) fn codes<'a, I>(mlp: &super::mlp::Mlp, feats: I) -> Result<Vec<Vec<f64>>>
where
    I: IntoIterator<Item = &'a [f64; super::features::N_FEATURES]>,
{
    feats.into_iter().map(|f| mlp.forward(f)).collect()
}
