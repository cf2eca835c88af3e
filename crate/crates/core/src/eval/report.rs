use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{distance::hausdorff, imagewise_auc, mean_std, pixelwise_auc, ScoredPixelSet};
use crate::error::{Error, Result};
use crate::grid::Mask;

/// Everything needed to evaluate one test image.
#[derive(Debug, Clone)]
pub struct ImageEvaluation {
    pub scored: ScoredPixelSet,
    /// Full-resolution binary segmentation.
    pub prediction: Mask,
    /// Full-resolution ground truth.
    pub truth: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub auc: Option<f64>,
    pub hausdorff: Option<f64>,
    /// True when the prediction was empty and the image diagonal was used.
    pub hausdorff_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub model: String,
    pub images: usize,
    pub pixelwise_auc: f64,
    pub imagewise_auc_mean: f64,
    pub imagewise_auc_std: f64,
    pub imagewise_skipped: usize,
    pub hausdorff_mean: Option<f64>,
    pub hausdorff_std: Option<f64>,
    pub hausdorff_fallbacks: usize,
    #[serde(skip)]
    pub per_image: Vec<ImageMetrics>,
}

/// Pixel-wise and image-wise AUC plus Hausdorff distance of the segmentations.
/// Images with an empty ground truth contribute to AUC only.
pub fn evaluate(model: &str, images: &[ImageEvaluation]) -> Result<MetricsReport> {
    if images.is_empty() {
        return Err(Error::InvalidData("nothing to evaluate".into()));
    }
    let sets: Vec<ScoredPixelSet> = images.iter().map(|i| i.scored.clone()).collect();
    let pixelwise = pixelwise_auc(&sets)?;
    let iw = imagewise_auc(&sets)?;
    let mut per_image = Vec::with_capacity(images.len());
    let mut distances = Vec::new();
    let mut fallbacks = 0;
    for (img, auc) in images.iter().zip(&iw.per_image) {
        img.prediction.same_dims(&img.truth, "prediction vs ground truth")?;
        let (mut h, mut fallback) = (None, false);
        if !img.truth.is_empty_mask() {
            let d = if img.prediction.is_empty_mask() {
                fallback = true;
                fallbacks += 1;
                (img.truth.height() as f64).hypot(img.truth.width() as f64)
            } else {
                hausdorff(&img.prediction, &img.truth)?
            };
            distances.push(d);
            h = Some(d);
        }
        per_image.push(ImageMetrics { image_id: img.scored.image_id.clone(), auc: *auc, hausdorff: h, hausdorff_fallback: fallback });
    }
    let (hausdorff_mean, hausdorff_std) = if distances.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&distances);
        (Some(m), Some(s))
    };
    Ok(MetricsReport {
        model: model.to_string(),
        images: images.len(),
        pixelwise_auc: pixelwise,
        imagewise_auc_mean: iw.mean,
        imagewise_auc_std: iw.std,
        imagewise_skipped: iw.skipped,
        hausdorff_mean,
        hausdorff_std,
        hausdorff_fallbacks: fallbacks,
        per_image,
    })
}

impl MetricsReport {
    /// Structured `key = value` summary.
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["image_id", "auc", "hausdorff", "hausdorff_fallback"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in &self.per_image {
            out.write_record([m.image_id.clone(), opt(m.auc), opt(m.hausdorff), m.hausdorff_fallback.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `<stem>.toml` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::write(dir.join(format!("{stem}.toml")), self.to_text()?)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)
    }
}
