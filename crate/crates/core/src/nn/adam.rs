use super::Param;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Bias-corrected adaptive-moment optimizer state.
///
/// Moment buffers are allocated on the first step and must keep mirroring
/// the parameter list afterwards.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) || !(config.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid Adam config {config:?}")));
        }
        Ok(Self { config, step: 0, first_moment: Vec::new(), second_moment: Vec::new() })
    }

    /// Applies one update to every `(name, param)` using its accumulated gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [(String, &mut Param)]) -> Result<()> {
        for (name, p) in params.iter() {
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
            }
        }
        if self.step == 0 && self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len() {
            return Err(Error::shape("adam parameter count", &[self.first_moment.len()], &[params.len()]));
        }
        for ((name, p), m) in params.iter().zip(&self.first_moment) {
            if m.shape() != p.value.shape() {
                return Err(Error::shape(format!("adam moments for `{name}`"), m.shape(), p.value.shape()));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((_, p), m), v) in params.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            let Param { value, grad } = &mut **p;
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Param {
        Param::new(Tensor::new(&[1], vec![v]).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar(1.5);
        let mut opt = AdamState::new(AdamConfig::default()).unwrap();
        opt.step(&mut [("w".into(), &mut p)]).unwrap();
        assert_eq!(p.value.data(), &[1.5]);
        assert_eq!(opt.first_moment[0].data(), &[0.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        for g in [3.0, -0.02] {
            let mut p = scalar(0.0);
            p.grad.data_mut()[0] = g;
            let mut opt = AdamState::new(AdamConfig::with_lr(0.01)).unwrap();
            opt.step(&mut [("w".into(), &mut p)]).unwrap();
            let delta = p.value.data()[0];
            assert!((delta + 0.01 * g.signum()).abs() < 1e-6, "{delta}");
        }
    }

    #[test]
    fn quadratic_descent_converges() {
        let mut p = scalar(0.0);
        let mut opt = AdamState::new(AdamConfig::with_lr(0.1)).unwrap();
        for _ in 0..200 {
            let w = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * (w - 3.0);
            opt.step(&mut [("w".into(), &mut p)]).unwrap();
        }
        assert!((p.value.data()[0] - 3.0).abs() < 1e-2, "{}", p.value.data()[0]);
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut p = scalar(0.0);
        p.grad.data_mut()[0] = f64::NAN;
        let mut opt = AdamState::new(AdamConfig::default()).unwrap();
        let err = opt.step(&mut [("decoder.3.bias".into(), &mut p)]).unwrap_err();
        assert!(err.to_string().contains("decoder.3.bias"));
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn rejects_nonpositive_lr() {
        assert!(AdamState::new(AdamConfig::with_lr(0.0)).is_err());
    }
}
