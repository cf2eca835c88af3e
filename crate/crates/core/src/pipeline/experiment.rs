//! Synthetic benchmark: train an autoencoder and a circuit on healthy
//! patches, then score mass and calcification test images with both the
//! standalone autoencoder and the autoencoder + circuit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    extract_dataset, make_synthetic_dataset, score_images, split_dataset, threshold_heatmap, HeatmapResult, Label, LabeledImage, PatchConfig,
    PatchScorer, ScoreConfig, Segmentation,
};
use crate::ae::{build_ae, train_ae, AeConfig, TrainConfig, TrainTrace, Variant};
use crate::circuit::{build_region_graph, materialize, Circuit, LeafInit, Standardization};
use crate::em::{em_fit, EmConfig, EmMode, EmTrace};
use crate::error::{Error, Result};
use crate::eval::{evaluate, gap_statistic, ImageEvaluation, MetricsReport, ScoredPixelSet};
use crate::seed;
use crate::tensor::Tensor;

/// RAT-SPN hyperparameters (the number of variables comes from the data).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpnConfig {
    pub depth: usize,
    pub replicas: usize,
    pub roots: usize,
    pub sums: usize,
    pub inputs: usize,
}

impl Default for SpnConfig {
    fn default() -> Self {
        Self { depth: 1, replicas: 50, roots: 1, sums: 45, inputs: 45 }
    }
}

/// Standardises `train` latents, builds a circuit over them and fits it with EM.
/// The fitted standardisation is stored on the circuit.
pub fn fit_circuit(train: &Tensor, val: Option<&Tensor>, spn: &SpnConfig, em: &EmConfig, seed_root: u64) -> Result<(Circuit, EmTrace)> {
    let standardization = Standardization::fit(train)?;
    let z = standardization.apply(train)?;
    let zv = val.map(|v| standardization.apply(v)).transpose()?;
    let rg = build_region_graph(train.item_len(), spn.depth, spn.replicas, seed::derive(seed_root, "spn-structure", 0))?;
    let mut circuit = materialize(&rg, spn.roots, spn.sums, spn.inputs, LeafInit::Data(&z))?;
    circuit.standardization = Some(standardization);
    let trace = em_fit(&mut circuit, &z, zv.as_ref(), em)?;
    Ok((circuit, trace))
}

/// Thresholds every heatmap and evaluates it against the images' masks.
pub fn evaluate_heatmaps(model: &str, images: &[LabeledImage], heatmaps: &[HeatmapResult], percentile: f64) -> Result<(MetricsReport, Vec<Segmentation>)> {
    if images.len() != heatmaps.len() {
        return Err(Error::InvalidData(format!("{} images but {} heatmaps", images.len(), heatmaps.len())));
    }
    let mut evals = Vec::with_capacity(images.len());
    let mut segs = Vec::with_capacity(images.len());
    for (img, hm) in images.iter().zip(heatmaps) {
        if img.image_id != hm.image_id {
            return Err(Error::InvalidData(format!("heatmap {} paired with image {}", hm.image_id, img.image_id)));
        }
        let seg = threshold_heatmap(hm, percentile, &img.tissue_mask)?;
        evals.push(ImageEvaluation { scored: hm.scored_set(&img.anomaly_mask)?, prediction: seg.mask.clone(), truth: img.anomaly_mask.clone() });
        segs.push(seg);
    }
    Ok((evaluate(model, &evals)?, segs))
}

/// Position scores split by ground-truth label, pooled over images.
pub fn split_scores(sets: &[ScoredPixelSet]) -> (Vec<f64>, Vec<f64>) {
    let mut healthy = Vec::new();
    let mut anomalous = Vec::new();
    for s in sets {
        for (score, label) in s.scores.iter().zip(&s.labels) {
            if *label { anomalous.push(*score) } else { healthy.push(*score) }
        }
    }
    (healthy, anomalous)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub image_size: usize,
    pub n_healthy: usize,
    pub n_mass: usize,
    pub n_calc: usize,
    pub train_fraction: f64,
    pub percentile: f64,
    pub variant: Variant,
    pub patches: PatchConfig,
    pub ae: AeConfig,
    pub train: TrainConfig,
    pub spn: SpnConfig,
    pub em: EmConfig,
    pub score: ScoreConfig,
}

impl Default for BenchmarkConfig {
    /// Desk-scale configuration.
    fn default() -> Self {
        let ae = AeConfig { channels: vec![8, 16, 32], latent_dim: 16, ..AeConfig::default() };
        Self {
            seed: 0,
            image_size: 128,
            n_healthy: 200,
            n_mass: 40,
            n_calc: 20,
            train_fraction: 0.9,
            percentile: 99.0,
            variant: Variant::Cae,
            patches: PatchConfig { per_image: 16, ..PatchConfig::default() },
            ae,
            train: TrainConfig { epochs: 15, lr: 1e-3, batch_size: 64, seed: 0 },
            spn: SpnConfig { depth: 2, replicas: 8, roots: 1, sums: 4, inputs: 4 },
            em: EmConfig { epochs: 30, mode: EmMode::FullBatch, ..EmConfig::default() },
            score: ScoreConfig::default(),
        }
    }
}

/// Metrics of one scorer on one test subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetResult {
    pub scorer: String,
    pub subset: String,
    pub gap: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkOutcome {
    pub results: Vec<SubsetResult>,
    #[serde(skip)]
    pub ae_trace: TrainTrace,
    #[serde(skip)]
    pub em_trace: EmTrace,
}

impl BenchmarkOutcome {
    pub fn get(&self, scorer: &str, subset: &str) -> Option<&SubsetResult> {
        self.results.iter().find(|r| r.scorer == scorer && r.subset == subset)
    }

    /// Deterministic TOML summary of every result.
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Runs the whole benchmark from data generation to metrics.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    let images = make_synthetic_dataset(cfg.n_healthy, cfg.n_mass, cfg.n_calc, cfg.image_size, seed::derive(cfg.seed, "data", 0))?;
    let healthy: Vec<LabeledImage> = images.iter().filter(|i| i.label == Label::Healthy).cloned().collect();
    let split = split_dataset(&healthy, cfg.train_fraction, seed::derive(cfg.seed, "split", 0))?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| healthy[i].clone()).collect::<Vec<_>>();
    let patch_cfg = |stage: &str| PatchConfig { seed: seed::derive(cfg.seed, stage, 0), ..cfg.patches };
    let train_patches = extract_dataset(&pick(&split.train), &patch_cfg("patches-train"))?;
    let val_patches = extract_dataset(&pick(&split.val), &patch_cfg("patches-val"))?;

    let mut ae = build_ae(cfg.variant, AeConfig { seed: seed::derive(cfg.seed, "ae", 0), ..cfg.ae.clone() })?;
    let train_cfg = TrainConfig { seed: seed::derive(cfg.seed, "ae-train", 0), ..cfg.train.clone() };
    let ae_trace = train_ae(&mut ae, &train_patches.patches, Some(&val_patches.patches), &train_cfg)?;

    let z_train = ae.encode(&train_patches.patches)?;
    let z_val = ae.encode(&val_patches.patches)?;
    let em_cfg = EmConfig { seed: seed::derive(cfg.seed, "em", 0), ..cfg.em.clone() };
    let (circuit, em_trace) = fit_circuit(&z_train, Some(&z_val), &cfg.spn, &em_cfg, cfg.seed)?;

    let score_cfg = ScoreConfig { seed: seed::derive(cfg.seed, "score", 0), ..cfg.score };
    let scorers = [PatchScorer::Autoencoder(&ae), PatchScorer::Circuit { ae: &ae, circuit: &circuit }];
    let mut results = Vec::new();
    for (subset, label) in [("mass", Label::Mass), ("calcification", Label::Calcification)] {
        let test: Vec<LabeledImage> = images.iter().filter(|i| i.label == label).cloned().collect();
        if test.is_empty() {
            continue;
        }
        for scorer in scorers {
            let name = scorer.name();
            let heatmaps = score_images(&test, scorer, &score_cfg)?;
            let (metrics, _) = evaluate_heatmaps(&format!("{name}/{subset}"), &test, &heatmaps, cfg.percentile)?;
            let sets: Vec<ScoredPixelSet> = heatmaps.iter().zip(&test).map(|(h, i)| h.scored_set(&i.anomaly_mask)).collect::<Result<_>>()?;
            let (neg, pos) = split_scores(&sets);
            let gap = gap_statistic(&neg, &pos)?;
            results.push(SubsetResult { scorer: name, subset: subset.to_string(), gap, metrics });
        }
    }
    Ok(BenchmarkOutcome { results, ae_trace, em_trace })
}

/// Collects per-subset metrics keyed by `scorer/subset`.
pub fn summary_table(outcome: &BenchmarkOutcome) -> BTreeMap<String, (f64, f64, f64)> {
    outcome
        .results
        .iter()
        .map(|r| (format!("{}/{}", r.scorer, r.subset), (r.metrics.imagewise_auc_mean, r.metrics.pixelwise_auc, r.gap)))
        .collect()
}
