use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::standard_normal_like_shape;
use super::{AeModel, LossBreakdown, Variant};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_variant(Variant::Cae)
    }
}

impl TrainConfig {
    /// CAE/βVAE: 100 epochs at 1e-5; VQVAE: 20 epochs at 1e-4. Batch 64.
    pub fn for_variant(variant: Variant) -> Self {
        let (epochs, lr) = match variant {
            Variant::Cae | Variant::Bvae => (100, 1e-5),
            Variant::Vqvae => (20, 1e-4),
        };
        Self { epochs, lr, batch_size: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochLoss>,
}

impl TrainTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "epoch",
            "train_total",
            "train_recon",
            "train_kl",
            "train_codebook",
            "train_commitment",
            "val_total",
        ])?;
        for e in &self.epochs {
            let t = e.train;
            let val = e.val.map(|v| v.total.to_string()).unwrap_or_default();
            out.write_record([
                e.epoch.to_string(),
                t.total.to_string(),
                t.recon.to_string(),
                t.kl.to_string(),
                t.codebook.to_string(),
                t.commitment.to_string(),
                val,
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn check_patches(model: &AeModel, data: &Tensor, what: &str) -> Result<()> {
    let p = model.config.patch_size;
    data.expect_shape(what, &[data.shape().first().copied().unwrap_or(0), 1, p, p])?;
    if let Some(v) = data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidData(format!("{what} must be normalised to [0, 1], found {v}")));
    }
    Ok(())
}

fn add_scaled(acc: &mut LossBreakdown, l: &LossBreakdown, w: f64) {
    acc.total += w * l.total;
    acc.recon += w * l.recon;
    acc.kl += w * l.kl;
    acc.codebook += w * l.codebook;
    acc.commitment += w * l.commitment;
}

fn noise_for(model: &AeModel, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Option<Tensor> {
    (model.variant == Variant::Bvae).then(|| standard_normal_like_shape(&[n, model.config.latent_dim], rng))
}

fn validation_loss(model: &AeModel, val: &Tensor, cfg: &TrainConfig, epoch: usize) -> Result<LossBreakdown> {
    let mut rng = seed::rng(cfg.seed, "ae-val", epoch as u64);
    let n = val.batch();
    let mut acc = LossBreakdown::default();
    for start in (0..n).step_by(cfg.batch_size) {
        let rows: Vec<usize> = (start..(start + cfg.batch_size).min(n)).collect();
        let x = val.gather(&rows);
        let noise = noise_for(model, rows.len(), &mut rng);
        let l = model.loss(&x, noise.as_ref())?;
        add_scaled(&mut acc, &l, rows.len() as f64 / n as f64);
    }
    Ok(acc)
}

/// Minibatch Adam training with a seeded per-epoch shuffle.
///
/// `train` and `val` are `[n, 1, P, P]` patch stacks in `[0, 1]`. The trace
/// records the sample-weighted mean loss of each epoch. A non-finite batch
/// loss stops training with [`Error::Divergence`].
pub fn train_ae(model: &mut AeModel, train: &Tensor, val: Option<&Tensor>, cfg: &TrainConfig) -> Result<TrainTrace> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    check_patches(model, train, "training patches")?;
    if let Some(v) = val {
        check_patches(model, v, "validation patches")?;
    }
    let n = train.batch();
    if n == 0 {
        return Err(Error::InvalidData("no training patches".into()));
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr))?;
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(cfg.seed, "ae-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            let x = train.gather(rows);
            let noise = noise_for(model, rows.len(), &mut rng);
            model.zero_grad();
            let l = model.accumulate_gradients(&x, noise.as_ref())?;
            if !l.total.is_finite() {
                return Err(Error::Divergence { epoch, batch, loss: l.total });
            }
            adam.step(&mut model.named_params_mut())?;
            add_scaled(&mut acc, &l, rows.len() as f64 / n as f64);
        }
        let val_loss = val.map(|v| validation_loss(model, v, cfg, epoch)).transpose()?;
        trace.epochs.push(EpochLoss { epoch, train: acc, val: val_loss });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::super::{build_ae, AeConfig};
    use super::*;

    fn patches(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // smooth blobs so there is structure to learn
        let mut out = Vec::with_capacity(n * 64);
        for _ in 0..n {
            let (cy, cx): (f64, f64) = (rng.random_range(2.0..6.0), rng.random_range(2.0..6.0));
            for y in 0..8 {
                for x in 0..8 {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    out.push((-d2 / 6.0).exp());
                }
            }
        }
        Tensor::new(&[n, 1, 8, 8], out).unwrap()
    }

    fn toy() -> AeConfig {
        AeConfig {
            patch_size: 8,
            channels: vec![4, 8],
            latent_dim: 6,
            embedding_dim: 4,
            codebook_size: 8,
            residual_blocks: 1,
            seed: 1,
            ..AeConfig::default()
        }
    }

    #[test]
    fn defaults_per_variant() {
        assert_eq!(TrainConfig::for_variant(Variant::Cae), TrainConfig { epochs: 100, lr: 1e-5, batch_size: 64, seed: 0 });
        assert_eq!(TrainConfig::for_variant(Variant::Vqvae).epochs, 20);
        assert_eq!(TrainConfig::for_variant(Variant::Vqvae).lr, 1e-4);
    }

    #[test]
    fn loss_decreases_for_every_variant() {
        let data = patches(48, 2);
        for v in [Variant::Cae, Variant::Bvae, Variant::Vqvae] {
            let mut m = build_ae(v, toy()).unwrap();
            let cfg = TrainConfig { epochs: 15, lr: 3e-3, batch_size: 16, seed: 4 };
            let trace = train_ae(&mut m, &data, Some(&data), &cfg).unwrap();
            let first = trace.epochs[0].train.total;
            let last = trace.epochs.last().unwrap().train.total;
            assert!(last < first, "{v}: {first} -> {last}");
            assert!(trace.epochs.iter().all(|e| e.val.is_some()));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = patches(20, 3);
        let cfg = TrainConfig { epochs: 2, lr: 1e-3, batch_size: 8, seed: 9 };
        let run = || {
            let mut m = build_ae(Variant::Bvae, toy()).unwrap();
            let t = train_ae(&mut m, &data, None, &cfg).unwrap();
            (t, m.encode(&data).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_unnormalised_input() {
        let mut m = build_ae(Variant::Cae, toy()).unwrap();
        let data = Tensor::full(&[2, 1, 8, 8], 300.0);
        assert!(matches!(
            train_ae(&mut m, &data, None, &TrainConfig::default()),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let mut m = build_ae(Variant::Cae, toy()).unwrap();
        for (_, p) in m.named_params_mut() {
            p.value.fill(1e200);
        }
        let cfg = TrainConfig { epochs: 1, lr: 1e-3, batch_size: 4, seed: 0 };
        let err = train_ae(&mut m, &patches(4, 1), None, &cfg).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn trace_csv_has_one_row_per_epoch() {
        let mut m = build_ae(Variant::Cae, toy()).unwrap();
        let cfg = TrainConfig { epochs: 3, lr: 1e-3, batch_size: 8, seed: 0 };
        let t = train_ae(&mut m, &patches(8, 1), None, &cfg).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
