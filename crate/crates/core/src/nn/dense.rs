use rand::Rng;

use super::gemm::{gemm, Mat};
use super::{glorot_uniform, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine layer `y = W x + b` over `[N, in]` inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out, in]`
    pub weight: Param,
    /// `[out]`
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Param::new(glorot_uniform(&[out_dim, in_dim], in_dim, out_dim, rng)),
            bias: Param::new(Tensor::zeros(&[out_dim])),
            cache: None,
        }
    }

    /// Builds a layer with the given weights, e.g. for fixtures.
    pub fn from_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape("dense weights", &[bias.len(), 0], weight.shape()));
        }
        Ok(Self {
            in_dim: weight.shape()[1],
            out_dim: weight.shape()[0],
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }

    fn check(&self, input: &Tensor) -> Result<usize> {
        let s = input.shape();
        if s.len() != 2 || s[1] != self.in_dim {
            return Err(Error::shape("dense input", &[s.first().copied().unwrap_or(1), self.in_dim], s));
        }
        Ok(s[0])
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 2 || input[1] != self.in_dim {
            return Err(Error::shape("dense input", &[input.first().copied().unwrap_or(1), self.in_dim], input));
        }
        Ok(vec![input[0], self.out_dim])
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let n = self.check(input)?;
        let mut out = Tensor::zeros(&[n, self.out_dim]);
        for row in out.data_mut().chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(
            Mat::new(input.data(), n, self.in_dim),
            Mat::new(self.weight.value.data(), self.out_dim, self.in_dim).t(),
            1.0,
            out.data_mut(),
        );
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = self.cache.as_ref().ok_or(Error::MissingCache("dense"))?;
        let n = input.shape()[0];
        upstream.expect_shape("dense upstream gradient", &[n, self.out_dim])?;
        for row in upstream.data().chunks_exact(self.out_dim) {
            for (g, u) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *g += u;
            }
        }
        let up = Mat::new(upstream.data(), n, self.out_dim);
        gemm(up.t(), Mat::new(input.data(), n, self.in_dim), 1.0, self.weight.grad.data_mut());
        let mut grad_in = Tensor::zeros(&[n, self.in_dim]);
        gemm(up, Mat::new(self.weight.value.data(), self.out_dim, self.in_dim), 0.0, grad_in.data_mut());
        Ok(grad_in)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    cache: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn infer(&self, input: &Tensor) -> Tensor {
        let mut out = input.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }

    pub fn forward(&mut self, input: &Tensor) -> Tensor {
        let out = self.infer(input);
        self.cache = Some(input.clone());
        out
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = self.cache.as_ref().ok_or(Error::MissingCache("relu"))?;
        upstream.expect_shape("relu upstream gradient", input.shape())?;
        let mut grad = upstream.clone();
        for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
            if x <= 0.0 {
                *g = 0.0;
            }
        }
        Ok(grad)
    }
}
