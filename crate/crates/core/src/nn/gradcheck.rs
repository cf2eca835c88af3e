use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Layer;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn projected(layer: &Layer, input: &Tensor, probe: &Tensor) -> Result<f64> {
    let out = layer.infer(input)?;
    Ok(out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares analytic gradients of `layer` against central differences.
///
/// The scalar being differentiated is `⟨r, layer(input)⟩` for a fixed
/// pseudo-random probe `r`. Returns the maximum relative error over every
/// parameter entry and every input entry.
pub fn grad_check(layer: &Layer, input: &Tensor, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidConfig(format!("grad_check eps must be in (0, 1e-2], got {eps}")));
    }
    let out_shape = layer.output_shape(input.shape())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let probe = Tensor::from_fn(&out_shape, |_| rng.random_range(-1.0..1.0));

    let mut work = layer.clone();
    work.zero_grad();
    work.forward(input)?;
    let grad_in = work.backward(&probe)?;

    let mut worst = 0.0f64;
    let n_params = work.params().len();
    for pi in 0..n_params {
        let len = work.params()[pi].value.len();
        for i in 0..len {
            let analytic = work.params()[pi].grad.data()[i];
            let orig = work.params()[pi].value.data()[i];
            work.params_mut()[pi].value.data_mut()[i] = orig + eps;
            let plus = projected(&work, input, &probe)?;
            work.params_mut()[pi].value.data_mut()[i] = orig - eps;
            let minus = projected(&work, input, &probe)?;
            work.params_mut()[pi].value.data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic, (plus - minus) / (2.0 * eps)));
        }
    }

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let plus = projected(&work, &x, &probe)?;
        x.data_mut()[i] = orig - eps;
        let minus = projected(&work, &x, &probe)?;
        x.data_mut()[i] = orig;
        worst = worst.max(rel_err(grad_in.data()[i], (plus - minus) / (2.0 * eps)));
    }
    Ok(worst)
}
