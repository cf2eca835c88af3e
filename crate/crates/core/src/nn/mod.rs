//! Minimal layer toolkit: convolutions, dense layers, relu and residual
//! blocks with hand-derived backward passes, plus an Adam optimizer.
//!
//! Layers cache what their backward pass needs during [`Layer::forward`].
//! [`Layer::infer`] is the pure, cache-free path used for frozen models and
//! is safe to call from many threads.

mod adam;
mod conv;
mod dense;
pub(crate) mod gemm;
mod gradcheck;
mod residual;

pub use adam::{AdamConfig, AdamState};
pub use conv::{Conv2d, ConvTranspose2d};
pub use dense::{Dense, Relu};
pub use gradcheck::grad_check;
pub use residual::ResidualBlock;

use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    ConvTranspose2d,
    Dense,
    Relu,
    ResidualBlock,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
    Dense(Dense),
    Relu(Relu),
    Residual(ResidualBlock),
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::ConvTranspose2d(_) => LayerKind::ConvTranspose2d,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::Residual(_) => LayerKind::ResidualBlock,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(l) => l.output_shape(input),
            Layer::ConvTranspose2d(l) => l.output_shape(input),
            Layer::Dense(l) => l.output_shape(input),
            Layer::Relu(_) => Ok(input.to_vec()),
            Layer::Residual(l) => l.output_shape(input),
        }
    }

    /// Forward pass without caching.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.infer(input),
            Layer::ConvTranspose2d(l) => l.infer(input),
            Layer::Dense(l) => l.infer(input),
            Layer::Relu(l) => Ok(l.infer(input)),
            Layer::Residual(l) => l.infer(input),
        }
    }

    /// Forward pass that caches activations for [`Layer::backward`].
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward(input),
            Layer::ConvTranspose2d(l) => l.forward(input),
            Layer::Dense(l) => l.forward(input),
            Layer::Relu(l) => Ok(l.forward(input)),
            Layer::Residual(l) => l.forward(input),
        }
    }

    /// Returns the gradient w.r.t. the cached input and accumulates parameter
    /// gradients into each [`Param::grad`].
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(upstream),
            Layer::ConvTranspose2d(l) => l.backward(upstream),
            Layer::Dense(l) => l.backward(upstream),
            Layer::Relu(l) => l.backward(upstream),
            Layer::Residual(l) => l.backward(upstream),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(l) => l.params(),
            Layer::ConvTranspose2d(l) => l.params(),
            Layer::Dense(l) => l.params(),
            Layer::Relu(_) => Vec::new(),
            Layer::Residual(l) => l.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(l) => l.params_mut(),
            Layer::ConvTranspose2d(l) => l.params_mut(),
            Layer::Dense(l) => l.params_mut(),
            Layer::Relu(_) => Vec::new(),
            Layer::Residual(l) => l.params_mut(),
        }
    }

    /// Names matching [`Layer::params`] order.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Layer::Relu(_) => &[],
            Layer::Residual(_) => &["conv_a.weight", "conv_a.bias", "conv_b.weight", "conv_b.bias"],
            _ => &["weight", "bias"],
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

/// Runs a stack of layers in inference mode.
pub fn infer_stack(layers: &[Layer], input: &Tensor) -> Result<Tensor> {
    let mut x = input.clone();
    for l in layers {
        x = l.infer(&x)?;
    }
    Ok(x)
}

pub fn forward_stack(layers: &mut [Layer], input: &Tensor) -> Result<Tensor> {
    let mut x = input.clone();
    for l in layers.iter_mut() {
        x = l.forward(&x)?;
    }
    Ok(x)
}

pub fn backward_stack(layers: &mut [Layer], upstream: &Tensor) -> Result<Tensor> {
    let mut g = upstream.clone();
    for l in layers.iter_mut().rev() {
        g = l.backward(&g)?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    /// Direct nested-loop convolution, independent of the im2col path.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
        let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        for bi in 0..n {
            for o in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o];
                        for c in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        let xv = x.data()[((bi * cin + c) * h + iy as usize) * wd + ix as usize];
                                        acc += xv * w.data()[((o * cin + c) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        let layer = Layer::Dense(Dense::from_weights(eye, Tensor::zeros(&[4])).unwrap());
        let v = Tensor::new(&[1, 4], vec![0.5, -1.0, 2.0, 3.25]).unwrap();
        assert_eq!(layer.infer(&v).unwrap(), v);
    }

    #[test]
    fn conv_with_zero_kernel_outputs_bias() {
        let mut conv = Conv2d::new(1, 1, 5, 2, 2, &mut rng());
        conv.weight.value.fill(0.0);
        conv.bias.value.fill(0.7);
        let x = Tensor::from_fn(&[1, 1, 8, 8], |i| i as f64);
        let y = conv.infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        use rand::Rng;
        let mut r = rng();
        let conv = Conv2d::new(1, 1, 5, 2, 2, &mut r);
        let x = Tensor::from_fn(&[1, 1, 64, 64], |_| r.random_range(-1.0..1.0));
        let got = conv.infer(&x).unwrap();
        let want = naive_conv(&x, &conv.weight.value, conv.bias.value.data(), 2, 2);
        assert_eq!(got.shape(), &[1, 1, 32, 32]);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // multi-channel, nonzero bias
        let mut conv = Conv2d::new(3, 2, 3, 1, 1, &mut r);
        conv.bias.value = Tensor::new(&[2], vec![0.3, -0.2]).unwrap();
        let x = Tensor::from_fn(&[2, 3, 7, 9], |_| r.random_range(-1.0..1.0));
        let got = conv.infer(&x).unwrap();
        let want = naive_conv(&x, &conv.weight.value, conv.bias.value.data(), 1, 1);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stride_two_halves_and_transpose_restores() {
        let mut r = rng();
        let conv = Layer::Conv2d(Conv2d::new(1, 4, 5, 2, 2, &mut r));
        let up = Layer::ConvTranspose2d(ConvTranspose2d::new(4, 1, 5, 2, 2, 1, &mut r).unwrap());
        for side in [8, 16, 32, 64] {
            let s = conv.output_shape(&[2, 1, side, side]).unwrap();
            assert_eq!(s, vec![2, 4, side / 2, side / 2]);
            assert_eq!(up.output_shape(&s).unwrap(), vec![2, 1, side, side]);
        }
    }

    #[test]
    fn shape_errors_name_dims() {
        let layer = Layer::Dense(Dense::new(4, 3, &mut rng()));
        let err = layer.infer(&Tensor::zeros(&[2, 5])).unwrap_err();
        assert!(err.to_string().contains("[2, 4]"), "{err}");
        assert!(err.to_string().contains("[2, 5]"), "{err}");
    }

    #[test]
    fn backward_requires_forward() {
        let mut layer = Layer::Relu(Relu::new());
        assert!(matches!(layer.backward(&Tensor::zeros(&[1, 1])), Err(crate::Error::MissingCache(_))));
    }

    #[test]
    fn relu_dead_unit_has_zero_grad() {
        let mut layer = Layer::Relu(Relu::new());
        layer.forward(&Tensor::new(&[1, 1], vec![-1.0]).unwrap()).unwrap();
        let g = layer.backward(&Tensor::new(&[1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0]);
    }

    #[test]
    fn dense_param_grad_is_outer_product() {
        let mut d = Dense::new(3, 2, &mut rng());
        let x = Tensor::new(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let up = Tensor::new(&[1, 2], vec![0.25, -4.0]).unwrap();
        d.forward(&x).unwrap();
        d.backward(&up).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(d.weight.grad.data()[o * 3 + i], up.data()[o] * x.data()[i]);
            }
        }
        assert_eq!(d.bias.grad.data(), up.data());
    }

    #[test]
    fn forward_is_bit_identical_on_repeat() {
        use rand::Rng;
        let mut r = rng();
        let layer = Layer::Residual(ResidualBlock::new(3, &mut r));
        let x = Tensor::from_fn(&[2, 3, 6, 6], |_| r.random_range(-1.0..1.0));
        let a = layer.infer(&x).unwrap();
        let b = layer.infer(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
