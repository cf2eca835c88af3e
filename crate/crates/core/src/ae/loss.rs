use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[inline]
pub(crate) fn clamp_logvar(lv: f64) -> f64 {
    lv.clamp(LOGVAR_MIN, LOGVAR_MAX)
}

/// Mean squared error over all elements.
pub fn cae_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    x_hat.expect_shape("reconstruction", x.shape())?;
    let sum: f64 = x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / x.len() as f64)
}

/// Gradient of [`cae_loss`] w.r.t. `x_hat`.
pub(crate) fn mse_grad(x: &Tensor, x_hat: &Tensor) -> Tensor {
    let scale = 2.0 / x.len() as f64;
    let data = x_hat.data().iter().zip(x.data()).map(|(h, v)| scale * (h - v)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Per-item mean squared error along the leading dimension.
pub(crate) fn mse_per_item(x: &Tensor, x_hat: &Tensor) -> Vec<f64> {
    let n = x.item_len();
    (0..x.batch())
        .map(|i| x.item(i).iter().zip(x_hat.item(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64)
        .collect()
}

/// Draws `ε ~ N(0, I)` with the shape of `like`.
pub fn standard_normal_like<R: Rng + ?Sized>(like: &Tensor, rng: &mut R) -> Tensor {
    standard_normal_like_shape(like.shape(), rng)
}

pub(crate) fn standard_normal_like_shape<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// `z = mu + exp(logvar / 2) ⊙ ε`, with `logvar` clamped to `[-10, 10]`.
pub fn reparameterize_with(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Result<Tensor> {
    logvar.expect_shape("logvar", mu.shape())?;
    eps.expect_shape("noise", mu.shape())?;
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((m, lv), e)| m + (0.5 * clamp_logvar(*lv)).exp() * e)
        .collect();
    Tensor::new(mu.shape(), data)
}

pub fn reparameterize<R: Rng + ?Sized>(mu: &Tensor, logvar: &Tensor, rng: &mut R) -> Result<Tensor> {
    let eps = standard_normal_like(mu, rng);
    reparameterize_with(mu, logvar, &eps)
}

/// Closed-form `KL(N(mu, exp(logvar)) ‖ N(0, I))` per item, summed over latent dims.
pub fn kl_per_item(mu: &Tensor, logvar: &Tensor) -> Result<Vec<f64>> {
    logvar.expect_shape("logvar", mu.shape())?;
    if !logvar.all_finite() {
        return Err(Error::NonFinite("logvar".into()));
    }
    Ok((0..mu.batch())
        .map(|i| {
            mu.item(i)
                .iter()
                .zip(logvar.item(i))
                .map(|(m, lv)| {
                    let lv = clamp_logvar(*lv);
                    0.5 * (m * m + lv.exp() - 1.0 - lv)
                })
                .sum::<f64>()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct VaeOutput {
    pub mu: Tensor,
    pub logvar: Tensor,
    pub z: Tensor,
    pub reconstruction: Tensor,
}

/// `MSE(x, x̂) + β · KL`, with the KL term averaged over the batch.
pub fn vae_loss(x: &Tensor, out: &VaeOutput, beta: f64) -> Result<VaeLoss> {
    let recon = cae_loss(x, &out.reconstruction)?;
    let kl_items = kl_per_item(&out.mu, &out.logvar)?;
    let kl = kl_items.iter().sum::<f64>() / kl_items.len() as f64;
    Ok(VaeLoss { total: recon + beta * kl, recon, kl })
}

/// Gradients of the batch-mean KL w.r.t. `mu` and the raw `logvar`.
pub(crate) fn kl_grads(mu: &Tensor, logvar: &Tensor) -> (Tensor, Tensor) {
    let n = mu.batch() as f64;
    let dmu = Tensor::from_fn(mu.shape(), |i| mu.data()[i] / n);
    let dlv = Tensor::from_fn(mu.shape(), |i| {
        let lv = logvar.data()[i];
        if (LOGVAR_MIN..=LOGVAR_MAX).contains(&lv) {
            0.5 * (lv.exp() - 1.0) / n
        } else {
            0.0
        }
    });
    (dmu, dlv)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn mse_basic_cases() {
        let x = Tensor::zeros(&[2, 1, 4, 4]);
        assert_eq!(cae_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(cae_loss(&x, &Tensor::full(&[2, 1, 4, 4], 0.5)).unwrap(), 0.25);
        assert!(cae_loss(&x, &Tensor::zeros(&[2, 16])).is_err());
    }

    #[test]
    fn mse_matches_naive_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::from_fn(&[3, 1, 8, 8], |_| rng.random::<f64>());
        let b = Tensor::from_fn(&[3, 1, 8, 8], |_| rng.random::<f64>());
        // Kahan-compensated oracle.
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for (x, y) in a.data().iter().zip(b.data()) {
            let term = (x - y) * (x - y) - comp;
            let t = sum + term;
            comp = (t - sum) - term;
            sum = t;
        }
        let want = sum / a.len() as f64;
        assert!((cae_loss(&a, &b).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form_cases() {
        let d = 64;
        let zeros = Tensor::zeros(&[1, d]);
        assert_eq!(kl_per_item(&zeros, &zeros).unwrap(), vec![0.0]);
        let ones = Tensor::full(&[1, d], 1.0);
        assert!((kl_per_item(&ones, &zeros).unwrap()[0] - 0.5 * d as f64).abs() < 1e-12);

        let x = Tensor::full(&[1, 1, 8, 8], 0.3);
        let out = VaeOutput { mu: ones.clone(), logvar: zeros.clone(), z: ones, reconstruction: x.clone() };
        let loss = vae_loss(&x, &out, 0.1).unwrap();
        assert!((loss.total - 3.2).abs() < 1e-12, "{loss:?}");
        let out0 = VaeOutput { reconstruction: Tensor::full(&[1, 1, 8, 8], 0.1), ..out };
        let beta0 = vae_loss(&x, &out0, 0.0).unwrap();
        assert_eq!(beta0.total, cae_loss(&x, &out0.reconstruction).unwrap());
    }

    #[test]
    fn kl_rejects_non_finite_logvar() {
        let mu = Tensor::zeros(&[1, 2]);
        let lv = Tensor::new(&[1, 2], vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(kl_per_item(&mu, &lv), Err(Error::NonFinite(_))));
    }

    #[test]
    fn reparameterize_collapses_at_clamped_floor() {
        let mu = Tensor::new(&[1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let lv = Tensor::full(&[1, 3], f64::NEG_INFINITY);
        let z = reparameterize(&mu, &lv, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (a, b) in z.data().iter().zip(mu.data()) {
            // exp(-5) · |ε| stays well below 0.05 for a handful of draws
            assert!((a - b).abs() < 0.05);
        }
    }

    #[test]
    fn reparameterize_moments_and_determinism() {
        let n = 100_000;
        let mu = Tensor::zeros(&[n, 1]);
        let lv = Tensor::zeros(&[n, 1]);
        let z = reparameterize(&mu, &lv, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mean = z.data().iter().sum::<f64>() / n as f64;
        let var = z.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        // standard error of the mean is 1/sqrt(n) ≈ 0.0032; allow 3σ
        assert!(mean.abs() < 3.0 * 10f64.powf(-2.5), "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
        let z2 = reparameterize(&mu, &lv, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(z, z2);
    }
}
