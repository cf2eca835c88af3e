//! Evaluation metrics: rank AUC, exact Hausdorff distance, score histograms.

mod auc;
mod distance;
mod histogram;
mod report;

pub use auc::{auc, imagewise_auc, mean_std, pixelwise_auc, ImagewiseAuc, ScoredPixelSet};
pub use distance::{distance_transform, hausdorff, squared_distance_transform};
pub use histogram::{export_score_histograms, gap_statistic, HistogramBin, ScoreHistogram};
pub use report::{evaluate, ImageEvaluation, ImageMetrics, MetricsReport};

use crate::error::{Error, Result};

/// Quantile `q ∈ [0, 1]` with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidData("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!("quantile must be in [0, 1], got {q}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}
