use rand::Rng;

use super::conv::Conv2d;
use super::dense::Relu;
use super::Param;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y = x + conv_b(relu(conv_a(x)))` with two 3×3 same-padded convolutions.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub channels: usize,
    pub conv_a: Conv2d,
    pub conv_b: Conv2d,
    relu: Relu,
    primed: bool,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            channels,
            conv_a: Conv2d::new(channels, channels, 3, 1, 1, rng),
            conv_b: Conv2d::new(channels, channels, 3, 1, 1, rng),
            relu: Relu::new(),
            primed: false,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.conv_a.output_shape(input)
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let h = self.conv_a.infer(input)?;
        let h = self.relu.infer(&h);
        let mut out = self.conv_b.infer(&h)?;
        for (o, x) in out.data_mut().iter_mut().zip(input.data()) {
            *o += x;
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let h = self.conv_a.forward(input)?;
        let h = self.relu.forward(&h);
        let mut out = self.conv_b.forward(&h)?;
        for (o, x) in out.data_mut().iter_mut().zip(input.data()) {
            *o += x;
        }
        self.primed = true;
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        if !self.primed {
            return Err(Error::MissingCache("residual_block"));
        }
        let g = self.conv_b.backward(upstream)?;
        let g = self.relu.backward(&g)?;
        let mut g = self.conv_a.backward(&g)?;
        for (gi, u) in g.data_mut().iter_mut().zip(upstream.data()) {
            *gi += u;
        }
        Ok(g)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv_a.params_mut();
        p.extend(self.conv_b.params_mut());
        p
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        let mut p = self.conv_a.params();
        p.extend(self.conv_b.params());
        p
    }
}
