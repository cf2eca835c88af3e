//! Vector-quantisation codebook with straight-through gradients.

use rand::distr::{Distribution, Uniform};
use rand::Rng;

use super::loss::cae_loss;
use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Codebook {
    /// `[K, B]`
    pub embeddings: Param,
    /// Commitment weight λ.
    pub commitment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    /// Nearest-embedding index per spatial position, in `(n, y, x)` order.
    pub indices: Vec<usize>,
    /// `e_k` gathered back into the `[N, B, H, W]` layout of the encoder output.
    pub quantized: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLoss {
    pub total: f64,
    pub recon: f64,
    pub codebook: f64,
    pub commitment: f64,
}

fn check_nbhw(enc_out: &Tensor, dim: usize) -> Result<(usize, usize)> {
    let s = enc_out.shape();
    if s.len() != 4 || s[1] != dim {
        return Err(Error::shape("encoder output channels", &[s.first().copied().unwrap_or(1), dim], s));
    }
    Ok((s[0], s[2] * s[3]))
}

impl Codebook {
    pub fn new<R: Rng + ?Sized>(size: usize, dim: usize, commitment: f64, rng: &mut R) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidConfig(format!("codebook needs at least 2 entries, got {size}")));
        }
        if !(commitment > 0.0) {
            return Err(Error::InvalidConfig(format!("commitment weight must be positive, got {commitment}")));
        }
        let bound = 1.0 / size as f64;
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let embeddings = Tensor::from_fn(&[size, dim], |_| dist.sample(rng));
        Ok(Self { embeddings: Param::new(embeddings), commitment })
    }

    pub fn from_embeddings(embeddings: Tensor, commitment: f64) -> Result<Self> {
        if embeddings.rank() != 2 {
            return Err(Error::shape("codebook embeddings", &[0, 0], embeddings.shape()));
        }
        if !embeddings.all_finite() {
            return Err(Error::NonFinite("codebook embeddings".into()));
        }
        Ok(Self { embeddings: Param::new(embeddings), commitment })
    }

    pub fn size(&self) -> usize {
        self.embeddings.value.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.embeddings.value.shape()[1]
    }

    pub fn embedding(&self, k: usize) -> &[f64] {
        self.embeddings.value.item(k)
    }

    /// Index of the closest embedding in Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.size() {
            let d: f64 = self.embedding(k).iter().zip(v).map(|(e, x)| (x - e) * (x - e)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    pub fn quantize(&self, enc_out: &Tensor) -> Result<Quantized> {
        let b = self.dim();
        let (n, hw) = check_nbhw(enc_out, b)?;
        let mut indices = Vec::with_capacity(n * hw);
        let mut quantized = Tensor::zeros(enc_out.shape());
        let mut v = vec![0.0; b];
        for item in 0..n {
            let src = enc_out.item(item);
            for p in 0..hw {
                for (c, slot) in v.iter_mut().enumerate() {
                    *slot = src[c * hw + p];
                }
                let k = self.nearest(&v);
                indices.push(k);
                let dst = &mut quantized.data_mut()[item * b * hw..(item + 1) * b * hw];
                for (c, e) in self.embedding(k).iter().enumerate() {
                    dst[c * hw + p] = *e;
                }
            }
        }
        Ok(Quantized { indices, quantized })
    }

    /// Backward of the straight-through output: the gradient reaching the
    /// quantised tensor is handed to the encoder output unchanged.
    pub fn straight_through_grad(&self, grad_quantized: &Tensor) -> Tensor {
        grad_quantized.clone()
    }

    /// Mean over positions of `‖E(x) − e_k‖²`. Returns `(codebook_term, commitment_term)`;
    /// the commitment term already carries λ.
    pub fn latent_terms(&self, enc_out: &Tensor, q: &Quantized) -> Result<(f64, f64)> {
        q.quantized.expect_shape("quantized", enc_out.shape())?;
        let positions = q.indices.len();
        let sq: f64 = enc_out.data().iter().zip(q.quantized.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let term = sq / positions as f64;
        Ok((term, self.commitment * term))
    }

    /// Gradients of the two latent terms under stop-gradient semantics.
    ///
    /// Returns the commitment gradient w.r.t. the encoder output and adds the
    /// codebook-term gradient into `self.embeddings.grad`.
    pub(crate) fn latent_backward(&mut self, enc_out: &Tensor, q: &Quantized) -> Tensor {
        let b = self.dim();
        let positions = q.indices.len() as f64;
        let hw = enc_out.shape()[2] * enc_out.shape()[3];
        let lambda = self.commitment;
        let d_enc = Tensor::from_fn(enc_out.shape(), |i| 2.0 * lambda * (enc_out.data()[i] - q.quantized.data()[i]) / positions);
        let grad = self.embeddings.grad.data_mut();
        for (pos, &k) in q.indices.iter().enumerate() {
            let (item, p) = (pos / hw, pos % hw);
            let base = item * b * hw;
            for c in 0..b {
                let diff = q.quantized.data()[base + c * hw + p] - enc_out.data()[base + c * hw + p];
                grad[k * b + c] += 2.0 * diff / positions;
            }
        }
        d_enc
    }
}

/// `MSE(x, x̂) + ‖sg[E(x)] − e‖² + λ‖E(x) − sg[e]‖²` with per-position mean reduction.
pub fn vqvae_loss(x: &Tensor, x_hat: &Tensor, enc_out: &Tensor, codebook: &Codebook) -> Result<VqLoss> {
    let recon = cae_loss(x, x_hat)?;
    let q = codebook.quantize(enc_out)?;
    let (cb, commit) = codebook.latent_terms(enc_out, &q)?;
    Ok(VqLoss { total: recon + cb + commit, recon, codebook: cb, commitment: commit })
}
