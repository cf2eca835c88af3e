//! Run configuration: `[section]` TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use patchspn::ae::{AeConfig, TrainConfig, Variant};
use patchspn::em::EmConfig;
use patchspn::pipeline::SpnConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUT_ENV: &str = "PATCHSPN_OUT";
const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `manifest.csv`; empty means `<output_root>/data`.
    pub data_root: String,
    /// Empty means `$PATCHSPN_OUT`, then `./runs`.
    pub output_root: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub image_size: usize,
    pub n_healthy: usize,
    pub n_mass: usize,
    pub n_calc: usize,
    pub train_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { image_size: 256, n_healthy: 200, n_mass: 40, n_calc: 20, train_fraction: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeSection {
    pub variant: Variant,
    /// Defaults depend on the variant.
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: usize,
}

impl Default for AeSection {
    fn default() -> Self {
        Self { variant: Variant::Cae, epochs: None, lr: None, batch_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub patches_per_image: usize,
    pub band: f64,
    pub stride: usize,
    pub percentile: f64,
    pub histogram_bins: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self { patches_per_image: 120, band: 8.0, stride: 16, percentile: 99.0, histogram_bins: 50 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub data: DataSection,
    pub ae: AeSection,
    pub architecture: AeConfig,
    pub spn: SpnConfig,
    pub em: EmConfig,
    pub pipeline: PipelineSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Fills variant-dependent defaults so the printed configuration is complete.
    pub fn resolve(&mut self) {
        let defaults = TrainConfig::for_variant(self.ae.variant);
        self.ae.epochs.get_or_insert(defaults.epochs);
        self.ae.lr.get_or_insert(defaults.lr);
    }

    pub fn to_text(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Data(e.to_string()))
    }

    pub fn output_root(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if !self.paths.output_root.is_empty() {
            return PathBuf::from(&self.paths.output_root);
        }
        std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn data_manifest(&self, out: &Path) -> PathBuf {
        let root = if self.paths.data_root.is_empty() { out.join("data") } else { PathBuf::from(&self.paths.data_root) };
        root.join(patchspn::pipeline::MANIFEST_FILE)
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::for_variant(self.ae.variant);
        TrainConfig {
            epochs: self.ae.epochs.unwrap_or(d.epochs),
            lr: self.ae.lr.unwrap_or(d.lr),
            batch_size: self.ae.batch_size,
            seed: patchspn::seed::derive(self.seed, "ae-train", 0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_text() {
        let mut c = RunConfig::default();
        c.resolve();
        let back: RunConfig = toml::from_str(&c.to_text().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.pipeline.stride, 16);
        assert_eq!(c.spn, SpnConfig { depth: 1, replicas: 50, roots: 1, sums: 45, inputs: 45 });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[spn]\nbogus = 1\n").is_err());
        let c: RunConfig = toml::from_str("seed = 7\n[ae]\nvariant = \"vqvae\"\n").unwrap();
        assert_eq!(c.train_config().epochs, 20);
    }
}
