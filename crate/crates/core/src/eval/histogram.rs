use std::io::Write;
use std::path::Path;

use super::quantile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub healthy: usize,
    pub anomalous: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    pub bins: Vec<HistogramBin>,
    /// `(median(anomalous) − median(healthy)) / pooled IQR`.
    pub gap: f64,
}

/// Median difference in units of the mean within-class interquartile range.
pub fn gap_statistic(healthy: &[f64], anomalous: &[f64]) -> Result<f64> {
    if healthy.is_empty() || anomalous.is_empty() {
        return Err(Error::InvalidData("gap statistic needs scores for both classes".into()));
    }
    let iqr = |v: &[f64]| -> Result<f64> { Ok(quantile(v, 0.75)? - quantile(v, 0.25)?) };
    let pooled = 0.5 * (iqr(healthy)? + iqr(anomalous)?);
    let diff = quantile(anomalous, 0.5)? - quantile(healthy, 0.5)?;
    Ok(diff / pooled.max(1e-12))
}

/// Equal-width histogram of both classes over their shared range.
pub fn export_score_histograms(healthy: &[f64], anomalous: &[f64], bins: usize) -> Result<ScoreHistogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let gap = gap_statistic(healthy, anomalous)?;
    let all = healthy.iter().chain(anomalous);
    if let Some(s) = all.clone().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("histogram score {s}")));
    }
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let bin_of = |s: f64| (((s - lo) / width) as usize).min(bins - 1);
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            left: lo + i as f64 * width,
            right: if i + 1 == bins { hi.max(lo + width) } else { lo + (i + 1) as f64 * width },
            healthy: 0,
            anomalous: 0,
        })
        .collect();
    healthy.iter().for_each(|s| out[bin_of(*s)].healthy += 1);
    anomalous.iter().for_each(|s| out[bin_of(*s)].anomalous += 1);
    Ok(ScoreHistogram { bins: out, gap })
}

impl ScoreHistogram {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_left", "bin_right", "healthy_count", "anomalous_count"])?;
        for b in &self.bins {
            out.write_record([b.left.to_string(), b.right.to_string(), b.healthy.to_string(), b.anomalous.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_supports_never_share_a_bin() {
        let h: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let a: Vec<f64> = (0..30).map(|i| 5.0 + i as f64 / 30.0).collect();
        let hist = export_score_histograms(&h, &a, 20).unwrap();
        assert!(hist.bins.iter().all(|b| b.healthy == 0 || b.anomalous == 0));
        assert_eq!(hist.bins.iter().map(|b| b.healthy).sum::<usize>(), 50);
        assert_eq!(hist.bins.iter().map(|b| b.anomalous).sum::<usize>(), 30);
    }

    #[test]
    fn gap_grows_with_separation() {
        let base: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let overlapping: Vec<f64> = base.iter().map(|v| v + 0.5).collect();
        let separated: Vec<f64> = base.iter().map(|v| v + 3.0).collect();
        let g_overlap = gap_statistic(&base, &overlapping).unwrap();
        let g_sep = gap_statistic(&base, &separated).unwrap();
        assert!((g_overlap - 0.5 / 0.495).abs() < 1e-9, "{g_overlap}");
        assert!(g_sep > g_overlap);
        assert!(gap_statistic(&[], &base).is_err());
    }

    #[test]
    fn constant_scores_fill_one_bin() {
        let hist = export_score_histograms(&[2.0, 2.0], &[2.0], 4).unwrap();
        assert_eq!(hist.bins[0].healthy + hist.bins[0].anomalous, 3);
    }
}
