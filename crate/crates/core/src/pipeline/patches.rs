//! Random patch sampling from tissue interior and the skin contour.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::eval::distance_transform;
use crate::grid::Mask;
use crate::seed;
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionTag {
    Interior,
    Contour,
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionTag::Interior => "interior",
            RegionTag::Contour => "contour",
        })
    }
}

/// Patch centre in image coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchOrigin {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
    pub tag: RegionTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    /// `[n, 1, P, P]`.
    pub patches: Tensor,
    pub origins: Vec<PatchOrigin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub per_image: usize,
    /// Distance in pixels separating interior from the contour band.
    pub band: f64,
    /// Reject patches that touch the anomaly mask.
    pub reject_anomalies: bool,
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { patch_size: 64, per_image: 120, band: 8.0, reject_anomalies: true, seed: 0 }
    }
}

impl PatchConfig {
    fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.per_image == 0 {
            return Err(Error::InvalidConfig("patch size and patches per image must be positive".into()));
        }
        if !(self.band > 0.0) {
            return Err(Error::InvalidConfig(format!("band must be positive, got {}", self.band)));
        }
        Ok(())
    }
}

/// Samples `⌈n/2⌉` interior and `⌊n/2⌋` contour patches from one image.
/// Interior centres are tissue pixels further than `band` from the
/// background; contour centres are within `band` of the boundary on either
/// side. Patches must lie fully inside the image.
pub fn extract_patches<R: Rng + ?Sized>(img: &LabeledImage, cfg: &PatchConfig, rng: &mut R) -> Result<PatchSet> {
    cfg.validate()?;
    img.check()?;
    let (h, w) = img.image.dims();
    let p = cfg.patch_size;
    if p > h || p > w {
        return Err(Error::InvalidData(format!("{}: {h}x{w} image is smaller than a {p}-pixel patch", img.image_id)));
    }
    let tissue = &img.tissue_mask;
    let background = Mask::from_fn(h, w, |y, x| !tissue.get(y, x));
    let to_background = distance_transform(&background);
    let to_tissue = distance_transform(tissue);
    let half = p / 2;
    let fits = |y: usize, x: usize| y >= half && x >= half && y - half + p <= h && x - half + p <= w;
    let mut interior = Vec::new();
    let mut contour = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !fits(y, x) {
                continue;
            }
            let i = y * w + x;
            if tissue.data()[i] {
                if to_background[i] > cfg.band {
                    interior.push((y, x));
                } else {
                    contour.push((y, x));
                }
            } else if to_tissue[i] <= cfg.band {
                contour.push((y, x));
            }
        }
    }
    let n_interior = cfg.per_image.div_ceil(2);
    let wanted = [(RegionTag::Interior, &interior, n_interior), (RegionTag::Contour, &contour, cfg.per_image - n_interior)];
    let max_attempts = 1000 * cfg.per_image;
    let mut attempts = 0;
    let mut data = Vec::with_capacity(cfg.per_image * p * p);
    let mut origins = Vec::with_capacity(cfg.per_image);
    for (tag, cands, count) in wanted {
        if count > 0 && cands.is_empty() {
            return Err(Error::InvalidData(format!("{}: no {tag} positions for a {p}-pixel patch", img.image_id)));
        }
        let mut got = 0;
        while got < count {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::InvalidData(format!("{}: could not place {} patches in {max_attempts} attempts", img.image_id, cfg.per_image)));
            }
            let (y, x) = cands[rng.random_range(0..cands.len())];
            let (y0, x0) = (y - half, x - half);
            if cfg.reject_anomalies && img.anomaly_mask.any_in(y0, y0 + p, x0, x0 + p) {
                continue;
            }
            data.extend(img.image.window(y0, x0, p));
            origins.push(PatchOrigin { image_id: img.image_id.clone(), row: y, col: x, tag });
            got += 1;
        }
    }
    Ok(PatchSet { patches: Tensor::new(&[origins.len(), 1, p, p], data)?, origins })
}

/// Patches from every image, concatenated in image order. Image `i` draws
/// from its own seed stream.
pub fn extract_dataset(images: &[LabeledImage], cfg: &PatchConfig) -> Result<PatchSet> {
    if images.is_empty() {
        return Err(Error::InvalidData("no images to extract patches from".into()));
    }
    let sets: Vec<PatchSet> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| extract_patches(img, cfg, &mut seed::rng(cfg.seed, "patches", i as u64)))
        .collect::<Result<_>>()?;
    PatchSet::concat(&sets)
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn concat(sets: &[PatchSet]) -> Result<PatchSet> {
        let tensors: Vec<Tensor> = sets.iter().map(|s| s.patches.clone()).collect();
        Ok(PatchSet { patches: Tensor::stack(&tensors)?, origins: sets.iter().flat_map(|s| s.origins.clone()).collect() })
    }

    /// Writes `<stem>.aetn` (float32) and `<stem>.csv` with one origin per row.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        self.patches.save(dir.join(format!("{stem}.aetn")), DType::F32)?;
        let mut out = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        out.write_record(["image_id", "row", "col", "tag"])?;
        for o in &self.origins {
            out.write_record([o.image_id.clone(), o.row.to_string(), o.col.to_string(), o.tag.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<PatchSet> {
        let dir = dir.as_ref();
        let patches = Tensor::load(dir.join(format!("{stem}.aetn")))?;
        let mut rd = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
        let mut origins = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format("short patch origin row".into()));
            let num = |i: usize| -> Result<usize> { field(i)?.parse().map_err(|_| Error::Format(format!("bad coordinate '{}'", &rec[i]))) };
            let tag = match field(3)? {
                "interior" => RegionTag::Interior,
                "contour" => RegionTag::Contour,
                other => return Err(Error::Format(format!("unknown patch tag '{other}'"))),
            };
            origins.push(PatchOrigin { image_id: field(0)?.to_string(), row: num(1)?, col: num(2)?, tag });
        }
        if patches.rank() != 4 || patches.batch() != origins.len() {
            return Err(Error::Format(format!("{} patches but {} origins", patches.shape().first().unwrap_or(&0), origins.len())));
        }
        Ok(PatchSet { patches, origins })
    }
}
