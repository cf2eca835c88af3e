use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::seed;

/// Image indices of a subject-disjoint split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Shuffles subjects and assigns `round(frac · subjects)` of them (at least
/// one, leaving at least one) to training. All images of a subject end up
/// on the same side.
pub fn split_dataset(images: &[LabeledImage], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidConfig(format!("train fraction must be in [0, 1], got {train_fraction}")));
    }
    let subjects: BTreeSet<&str> = images.iter().map(|i| i.subject_id.as_str()).collect();
    if subjects.len() < 2 {
        return Err(Error::InvalidData(format!("need at least 2 subjects to split, got {}", subjects.len())));
    }
    let mut subjects: Vec<&str> = subjects.into_iter().collect();
    subjects.shuffle(&mut seed::rng(seed, "split", 0));
    let n_train = ((train_fraction * subjects.len() as f64).round() as usize).clamp(1, subjects.len() - 1);
    let train_subjects: BTreeSet<&str> = subjects[..n_train].iter().copied().collect();
    let (train, val) = (0..images.len()).partition(|&i| train_subjects.contains(images[i].subject_id.as_str()));
    Ok(Split { train, val })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::make_synthetic_dataset;

    #[test]
    fn subjects_never_straddle() {
        let imgs = make_synthetic_dataset(10, 0, 0, 128, 0).unwrap();
        let s = split_dataset(&imgs, 0.8, 1).unwrap();
        assert_eq!(s.train.len() + s.val.len(), 10);
        assert_eq!(s.train.len(), 8);
        for &t in &s.train {
            assert!(s.val.iter().all(|&v| imgs[v].subject_id != imgs[t].subject_id));
        }
        assert_eq!(s, split_dataset(&imgs, 0.8, 1).unwrap());
        assert_eq!(split_dataset(&imgs, 1.0, 1).unwrap().val.len(), 2);
        assert!(split_dataset(&imgs[..2], 0.5, 1).is_err());
    }
}
