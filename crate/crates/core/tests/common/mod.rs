//! Helpers shared by integration tests.

#![allow(dead_code)]

use patchspn::ae::{build_ae, AeConfig, AeModel, Variant};
use patchspn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toy_config(seed: u64) -> AeConfig {
    AeConfig {
        patch_size: 8,
        channels: vec![2, 3],
        latent_dim: 4,
        embedding_dim: 3,
        codebook_size: 5,
        residual_blocks: 1,
        seed,
        ..AeConfig::default()
    }
}

pub fn toy_input(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 1, 8, 8], |_| rng.random::<f64>())
}

/// Zero-initialised biases put many pre-activations exactly on a ReLU kink;
/// jitter every parameter so central differences are well defined.
pub fn jitter(model: &mut AeModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in model.named_params_mut() {
        p.value.data_mut().iter_mut().for_each(|w| *w += rng.random_range(-0.05..0.05));
    }
}

/// Perturbs up to `per_param` entries of every parameter tensor and compares
/// the analytic gradient (already accumulated in the model) with a central
/// difference of `objective`. Returns the number of entries checked and the
/// worst relative error.
pub fn fd_check(model: &mut AeModel, per_param: usize, objective: impl Fn(&AeModel) -> f64) -> (usize, f64) {
    let eps = 1e-6;
    let analytic: Vec<Vec<f64>> = model.named_params_mut().into_iter().map(|(_, p)| p.grad.data().to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        let picks: Vec<usize> = (0..per_param.min(grads.len())).map(|_| rng.random_range(0..grads.len())).collect();
        for i in picks {
            let orig = model.named_params_mut()[pi].1.value.data()[i];
            model.named_params_mut()[pi].1.value.data_mut()[i] = orig + eps;
            let plus = objective(model);
            model.named_params_mut()[pi].1.value.data_mut()[i] = orig - eps;
            let minus = objective(model);
            model.named_params_mut()[pi].1.value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[i];
            worst = worst.max((a - numeric).abs() / (a.abs().max(numeric.abs()) + 1e-6));
            checked += 1;
        }
    }
    (checked, worst)
}

/// Finite-difference results for the three whole-model losses, in the order
/// CAE, βVAE with frozen noise, VQ-VAE with frozen assignments.
pub fn ae_loss_checks(per_param: usize) -> Vec<(&'static str, usize, f64)> {
    let mut out = Vec::new();

    let mut m = build_ae(Variant::Cae, toy_config(1)).unwrap();
    jitter(&mut m, 11);
    let x = toy_input(3, 2);
    m.zero_grad();
    m.accumulate_gradients(&x, None).unwrap();
    let (n, worst) = fd_check(&mut m, per_param, |m| m.loss(&x, None).unwrap().total);
    out.push(("cae", n, worst));

    let mut m = build_ae(Variant::Bvae, toy_config(3)).unwrap();
    jitter(&mut m, 11);
    let x = toy_input(3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Tensor::from_fn(&[3, 4], |_| rng.random_range(-1.5..1.5));
    m.zero_grad();
    m.accumulate_gradients(&x, Some(&noise)).unwrap();
    let (n, worst) = fd_check(&mut m, per_param, |m| m.loss(&x, Some(&noise)).unwrap().total);
    out.push(("bvae", n, worst));

    let mut m = build_ae(Variant::Vqvae, toy_config(6)).unwrap();
    jitter(&mut m, 11);
    let x = toy_input(3, 7);
    let snap = m.vq_encode(&x).unwrap();
    m.zero_grad();
    m.accumulate_gradients(&x, None).unwrap();
    let (n, worst) = fd_check(&mut m, per_param, |m| m.vq_surrogate_loss(&x, &snap).unwrap());
    out.push(("vqvae", n, worst));

    out
}
