use crate::error::{Error, Result};

/// Scores and binary labels of the valid positions of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPixelSet {
    pub image_id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredPixelSet {
    pub fn new(image_id: impl Into<String>, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() || scores.is_empty() {
            return Err(Error::InvalidData(format!(
                "scored set needs equal, non-zero lengths (scores {}, labels {})",
                scores.len(),
                labels.len()
            )));
        }
        Ok(Self { image_id: image_id.into(), scores, labels })
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.iter().any(|l| *l) && self.labels.iter().any(|l| !*l)
    }
}

/// Rank-statistic AUC: probability that a random positive outscores a random
/// negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidData(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("AUC score {s}")));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidData(format!("AUC needs both classes, got {pos} positive and {neg} negative")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, so tied groups stay integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j average to (i + j + 1) / 2
        let positives = idx[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum2 += positives * (i + j + 1) as u128;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    // 2U = 2·ranksum − p(p + 1)
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

pub fn pixelwise_auc(sets: &[ScoredPixelSet]) -> Result<f64> {
    let scores: Vec<f64> = sets.iter().flat_map(|s| s.scores.iter().copied()).collect();
    let labels: Vec<bool> = sets.iter().flat_map(|s| s.labels.iter().copied()).collect();
    auc(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagewiseAuc {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Per input set; `None` for single-class images.
    pub per_image: Vec<Option<f64>>,
    pub skipped: usize,
}

pub fn imagewise_auc(sets: &[ScoredPixelSet]) -> Result<ImagewiseAuc> {
    let per_image: Vec<Option<f64>> = sets
        .iter()
        .map(|s| if s.has_both_classes() { auc(&s.scores, &s.labels).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = per_image.iter().flatten().copied().collect();
    if values.is_empty() {
        return Err(Error::InvalidData("no image has both positive and negative positions".into()));
    }
    let (mean, std) = mean_std(&values);
    Ok(ImagewiseAuc { mean, std, skipped: sets.len() - values.len(), per_image })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_count(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        num / pairs
    }

    #[test]
    fn basic_cases() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc(&[1.0, 2.0, 3.0], &[false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[7.0; 5], &[false, true, true, false, true]).unwrap(), 0.5);
        assert!(auc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(auc(&[f64::NAN, 2.0], &[true, false]).is_err());
    }

    #[test]
    fn matches_pair_counting_with_ties() {
        let scores = [3.0, 1.0, 3.0, 2.0, 2.0, 5.0, 1.0, 3.0];
        let labels = [true, false, false, true, false, true, true, false];
        assert_eq!(auc(&scores, &labels).unwrap(), pair_count(&scores, &labels));
    }

    #[test]
    fn imagewise_mean_and_std() {
        let a = ScoredPixelSet::new("a", vec![0.0, 1.0], vec![false, true]).unwrap();
        let b = ScoredPixelSet::new("b", vec![1.0, 1.0], vec![false, true]).unwrap();
        let c = ScoredPixelSet::new("c", vec![1.0, 2.0], vec![false, false]).unwrap();
        let r = imagewise_auc(&[a.clone(), b, c.clone()]).unwrap();
        assert_eq!((r.mean, r.std, r.skipped), (0.75, 0.25, 1));
        assert_eq!(r.per_image[2], None);
        assert!(imagewise_auc(&[c]).is_err());
        assert_eq!(pixelwise_auc(&[a.clone()]).unwrap(), auc(&a.scores, &a.labels).unwrap());
    }
}
