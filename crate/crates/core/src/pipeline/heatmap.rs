//! Sliding-window scoring and percentile thresholding.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_image, LabeledImage};
use crate::records::RecordFile;
use crate::ae::AeModel;
use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::eval::{quantile, ScoredPixelSet};
use crate::grid::{Image, Mask};
use crate::seed;

pub const HEATMAP_MAGIC: &[u8; 4] = b"HEAT";

#[derive(Serialize, Deserialize)]
struct HeatmapHeader {
    image_id: String,
    height: usize,
    width: usize,
    patch_size: usize,
    stride: usize,
}
use crate::tensor::Tensor;

/// How a batch of patches becomes anomaly scores.
#[derive(Clone, Copy)]
pub enum PatchScorer<'a> {
    /// Standalone autoencoder score.
    Autoencoder(&'a AeModel),
    /// Negative circuit log-likelihood of the (standardised) latents.
    Circuit { ae: &'a AeModel, circuit: &'a Circuit },
}

impl PatchScorer<'_> {
    fn ae(&self) -> &AeModel {
        match self {
            PatchScorer::Autoencoder(ae) | PatchScorer::Circuit { ae, .. } => ae,
        }
    }

    pub fn name(&self) -> String {
        match self {
            PatchScorer::Autoencoder(ae) => ae.variant.to_string(),
            PatchScorer::Circuit { ae, .. } => format!("{}+spn", ae.variant),
        }
    }

    pub fn check(&self) -> Result<()> {
        if let PatchScorer::Circuit { ae, circuit } = self {
            if circuit.num_vars() != ae.latent_dim() {
                return Err(Error::InvalidConfig(format!(
                    "circuit has {} variables but the autoencoder latent has {}",
                    circuit.num_vars(),
                    ae.latent_dim()
                )));
            }
            if let Some(s) = &circuit.standardization {
                if s.mean.len() != circuit.num_vars() {
                    return Err(Error::Format("standardization length does not match the circuit".into()));
                }
            }
        }
        Ok(())
    }

    /// Scores for `[n, 1, P, P]` patches; `image_id` keys the βVAE noise stream.
    pub fn score(&self, patches: &Tensor, image_id: &str, seed_root: u64) -> Result<Vec<f64>> {
        self.check()?;
        match self {
            PatchScorer::Autoencoder(ae) => ae.anomaly_scores(patches, &mut seed::rng(seed_root, &format!("score:{image_id}"), 0)),
            PatchScorer::Circuit { ae, circuit } => {
                let mut z = ae.encode(patches)?;
                if let Some(s) = &circuit.standardization {
                    z = s.apply(&z)?;
                }
                Ok(circuit.log_likelihood(&z)?.into_iter().map(|ll| -ll).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub stride: usize,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { stride: 16, seed: 0 }
    }
}

/// Patch-grid anomaly scores of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapResult {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Row-major grid; invalid positions hold the minimum valid score.
    pub scores: Vec<f64>,
    /// Positions whose centre lies in tissue.
    pub valid: Vec<bool>,
    /// Full-resolution nearest-centre upsampling of `scores`.
    pub map: Image,
}

impl HeatmapResult {
    pub fn center(&self, gy: usize, gx: usize) -> (usize, usize) {
        (gy * self.stride + self.patch_size / 2, gx * self.stride + self.patch_size / 2)
    }

    pub fn valid_scores(&self) -> Vec<f64> {
        self.scores.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(s, _)| *s).collect()
    }

    /// Valid positions labelled by whether their centre is anomalous.
    pub fn scored_set(&self, anomaly: &Mask) -> Result<ScoredPixelSet> {
        if anomaly.dims() != (self.height, self.width) {
            return Err(Error::InvalidData(format!("{}: anomaly mask size differs from the image", self.image_id)));
        }
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for gy in 0..self.grid_h {
            for gx in 0..self.grid_w {
                let i = gy * self.grid_w + gx;
                if self.valid[i] {
                    let (cy, cx) = self.center(gy, gx);
                    scores.push(self.scores[i]);
                    labels.push(*anomaly.get(cy, cx));
                }
            }
        }
        ScoredPixelSet::new(self.image_id.clone(), scores, labels)
    }

    /// Grid index of the position whose centre is nearest along one axis.
    fn nearest(&self, coord: usize, cells: usize) -> usize {
        let rel = (coord as f64 - (self.patch_size / 2) as f64) / self.stride as f64;
        (rel.round().max(0.0) as usize).min(cells - 1)
    }

    /// Full-resolution map by nearest-centre upsampling.
    pub fn upsample<T: Clone>(&self, grid: &[T]) -> crate::grid::Grid<T> {
        crate::grid::Grid::from_fn(self.height, self.width, |y, x| {
            grid[self.nearest(y, self.grid_h) * self.grid_w + self.nearest(x, self.grid_w)].clone()
        })
    }

    /// Writes `<image_id>.heat` (grid scores and validity) and a min-max
    /// scaled `<image_id>.pgm` preview into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let header = HeatmapHeader {
            image_id: self.image_id.clone(),
            height: self.height,
            width: self.width,
            patch_size: self.patch_size,
            stride: self.stride,
        };
        let mut rf = RecordFile::new(HEATMAP_MAGIC, toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?);
        rf.push("scores", Tensor::new(&[self.grid_h, self.grid_w], self.scores.clone())?);
        rf.push("valid", Tensor::new(&[self.grid_h, self.grid_w], self.valid.iter().map(|&v| f64::from(u8::from(v))).collect())?);
        rf.save(dir.join(format!("{}.heat", self.image_id)))?;
        let lo = self.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { hi - lo } else { 1.0 };
        let scaled: Vec<f64> = self.scores.iter().map(|s| (s - lo) / scale).collect();
        write_image(dir.join(format!("{}.pgm", self.image_id)), &self.upsample(&scaled))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let rf = RecordFile::load(path, HEATMAP_MAGIC)?;
        let header: HeatmapHeader = toml::from_str(&rf.header).map_err(|e| Error::Format(e.to_string()))?;
        let scores = rf.get("scores")?;
        let valid = rf.get("valid")?;
        if scores.rank() != 2 || valid.shape() != scores.shape() || header.stride == 0 {
            return Err(Error::Format(format!("{}: inconsistent heatmap records", header.image_id)));
        }
        let (grid_h, grid_w) = (scores.shape()[0], scores.shape()[1]);
        let expect = |n: usize| n.checked_sub(header.patch_size).map(|r| r / header.stride + 1);
        if expect(header.height) != Some(grid_h) || expect(header.width) != Some(grid_w) {
            return Err(Error::Format(format!("{}: grid {grid_h}x{grid_w} does not match the image geometry", header.image_id)));
        }
        let mut hm = HeatmapResult {
            image_id: header.image_id,
            height: header.height,
            width: header.width,
            patch_size: header.patch_size,
            stride: header.stride,
            grid_h,
            grid_w,
            scores: scores.data().to_vec(),
            valid: valid.data().iter().map(|&v| v != 0.0).collect(),
            map: Image::filled(header.height, header.width, 0.0),
        };
        hm.map = hm.upsample(&hm.scores);
        Ok(hm)
    }
}

/// Scores every stride-aligned window whose centre lies in tissue.
pub fn score_image(img: &LabeledImage, scorer: PatchScorer<'_>, cfg: &ScoreConfig) -> Result<HeatmapResult> {
    img.check()?;
    if cfg.stride == 0 {
        return Err(Error::InvalidConfig("stride must be positive".into()));
    }
    let p = scorer.ae().config.patch_size;
    let (h, w) = img.image.dims();
    if p > h || p > w {
        return Err(Error::InvalidData(format!("{}: image smaller than the patch size {p}", img.image_id)));
    }
    let (grid_h, grid_w) = ((h - p) / cfg.stride + 1, (w - p) / cfg.stride + 1);
    let mut hm = HeatmapResult {
        image_id: img.image_id.clone(),
        height: h,
        width: w,
        patch_size: p,
        stride: cfg.stride,
        grid_h,
        grid_w,
        scores: vec![0.0; grid_h * grid_w],
        valid: vec![false; grid_h * grid_w],
        map: Image::filled(h, w, 0.0),
    };
    let mut data = Vec::new();
    let mut positions = Vec::new();
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let (cy, cx) = hm.center(gy, gx);
            if *img.tissue_mask.get(cy, cx) {
                data.extend(img.image.window(gy * cfg.stride, gx * cfg.stride, p));
                positions.push(gy * grid_w + gx);
            }
        }
    }
    if positions.is_empty() {
        return Err(Error::InvalidData(format!("{}: no patch centre lies in tissue", img.image_id)));
    }
    let patches = Tensor::new(&[positions.len(), 1, p, p], data)?;
    let scores = scorer.score(&patches, &img.image_id, cfg.seed)?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{}: patch score {s}", img.image_id)));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    hm.scores.fill(min);
    for (&pos, s) in positions.iter().zip(scores) {
        hm.scores[pos] = s;
        hm.valid[pos] = true;
    }
    hm.map = hm.upsample(&hm.scores);
    Ok(hm)
}

/// [`score_image`] over many images in parallel, preserving order.
pub fn score_images(images: &[LabeledImage], scorer: PatchScorer<'_>, cfg: &ScoreConfig) -> Result<Vec<HeatmapResult>> {
    images.par_iter().map(|img| score_image(img, scorer, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub threshold: f64,
    /// Positions strictly above the threshold.
    pub grid: Vec<bool>,
    /// Upsampled grid restricted to tissue.
    pub mask: Mask,
}

/// Marks valid positions scoring strictly above the `percentile`-th
/// percentile (exclusive 0–100) of the image's own valid scores.
pub fn threshold_heatmap(hm: &HeatmapResult, percentile: f64, tissue: &Mask) -> Result<Segmentation> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::InvalidConfig(format!("percentile must be in (0, 100), got {percentile}")));
    }
    if tissue.dims() != (hm.height, hm.width) {
        return Err(Error::InvalidData(format!("{}: tissue mask size differs from the heatmap", hm.image_id)));
    }
    let threshold = quantile(&hm.valid_scores(), percentile / 100.0)?;
    let grid: Vec<bool> = hm.scores.iter().zip(&hm.valid).map(|(s, v)| *v && *s > threshold).collect();
    let mask = hm.upsample(&grid).and(tissue);
    Ok(Segmentation { threshold, grid, mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(scores: Vec<f64>, valid: Vec<bool>) -> HeatmapResult {
        let mut hm = HeatmapResult { image_id: "t".into(), height: 6, width: 6, patch_size: 2, stride: 2, grid_h: 3, grid_w: 3, scores, valid, map: Image::filled(6, 6, 0.0) };
        hm.map = hm.upsample(&hm.scores);
        hm
    }

    #[test]
    fn upsampling_uses_nearest_centre() {
        let hm = toy((0..9).map(f64::from).collect(), vec![true; 9]);
        let up = &hm.map;
        assert_eq!(*up.get(0, 0), 0.0);
        assert_eq!(*up.get(1, 0), 0.0);
        assert_eq!(*up.get(3, 3), 4.0);
        assert_eq!(*up.get(5, 5), 8.0);
        assert_eq!(*up.get(0, 5), 2.0);
    }

    #[test]
    fn threshold_is_strict_and_ignores_invalid_positions() {
        let mut valid = vec![true; 9];
        valid[8] = false;
        let hm = toy(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 100.0], valid);
        let tissue = Mask::filled(6, 6, true);
        let seg = threshold_heatmap(&hm, 50.0, &tissue).unwrap();
        assert_eq!(seg.threshold, 4.5);
        assert_eq!(seg.grid, vec![false, false, false, false, true, true, true, true, false]);
        let constant = toy(vec![3.0; 9], vec![true; 9]);
        assert!(threshold_heatmap(&constant, 99.0, &tissue).unwrap().mask.is_empty_mask());
        assert!(threshold_heatmap(&hm, 100.0, &tissue).is_err());
        assert!(threshold_heatmap(&hm, 0.0, &tissue).is_err());
        let half_tissue = Mask::from_fn(6, 6, |_, x| x < 3);
        let cut = threshold_heatmap(&hm, 50.0, &half_tissue).unwrap();
        assert!(!cut.mask.get(3, 5));
        assert!(*cut.mask.get(3, 2) && *cut.mask.get(5, 0));
        assert!(!cut.mask.get(0, 0));
    }

    #[test]
    fn percentile_99_of_one_to_hundred_keeps_the_top_score() {
        let mut hm = toy(vec![0.0; 9], vec![true; 9]);
        hm.grid_h = 10;
        hm.grid_w = 10;
        hm.scores = (1..=100).map(f64::from).collect();
        hm.valid = vec![true; 100];
        let seg = threshold_heatmap(&hm, 99.0, &Mask::filled(6, 6, true)).unwrap();
        assert_eq!(seg.grid.iter().filter(|g| **g).count(), 1);
        assert!(seg.grid[99]);
    }

    #[test]
    fn save_load_roundtrip() {
        let hm = toy((0..9).map(|v| v as f64 * 0.37).collect(), vec![true, false, true, true, true, true, true, true, false]);
        let dir = tempfile::tempdir().unwrap();
        hm.save(dir.path()).unwrap();
        assert_eq!(HeatmapResult::load(dir.path().join("t.heat")).unwrap(), hm);
        assert!(dir.path().join("t.pgm").exists());
    }

    #[test]
    fn scored_set_labels_by_centre() {
        let hm = toy(vec![0.0; 9], vec![true, false, true, true, true, true, true, true, true]);
        let anomaly = Mask::from_fn(6, 6, |y, x| y == 1 && x == 1);
        let s = hm.scored_set(&anomaly).unwrap();
        assert_eq!(s.labels.iter().filter(|l| **l).count(), 1);
        assert_eq!(s.labels.len(), 8);
    }
}
