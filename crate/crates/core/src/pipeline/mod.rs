//! Data side of the detector: synthetic images, patch extraction, subject
//! splits, heatmap scoring and thresholding.

mod experiment;
mod heatmap;
mod io;
mod patches;
mod split;
mod synth;

pub use experiment::{evaluate_heatmaps, fit_circuit, run_benchmark, split_scores, summary_table, BenchmarkConfig, BenchmarkOutcome, SpnConfig, SubsetResult};
pub use heatmap::{score_image, HEATMAP_MAGIC, score_images, threshold_heatmap, HeatmapResult, PatchScorer, ScoreConfig, Segmentation};
pub use io::{read_dataset, read_image, read_mask, write_dataset, write_image, write_mask, MANIFEST_FILE};
pub use patches::{extract_dataset, extract_patches, PatchConfig, PatchOrigin, PatchSet, RegionTag};
pub use split::{split_dataset, Split};
pub use synth::{make_synthetic_dataset, IMAGES_PER_HEALTHY_SUBJECT, MIN_IMAGE_SIZE};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::grid::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Healthy,
    Mass,
    Calcification,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Healthy => "healthy",
            Label::Mass => "mass",
            Label::Calcification => "calcification",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "healthy" => Ok(Label::Healthy),
            "mass" => Ok(Label::Mass),
            "calcification" => Ok(Label::Calcification),
            other => Err(Error::InvalidData(format!("unknown label '{other}'"))),
        }
    }
}

/// One image with its tissue and anomaly masks (all the same size).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub tissue_mask: Mask,
    /// Empty for healthy images.
    pub anomaly_mask: Mask,
    pub subject_id: String,
    pub image_id: String,
    pub label: Label,
}

impl LabeledImage {
    pub fn check(&self) -> crate::Result<()> {
        self.image.same_dims(&self.tissue_mask, "tissue mask")?;
        self.image.same_dims(&self.anomaly_mask, "anomaly mask")
    }
}
