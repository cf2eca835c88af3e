//! 2-D convolution and transposed convolution over `[N, C, H, W]` tensors.
//!
//! Both layers share one im2col geometry. A transposed convolution is the
//! adjoint of the convolution whose input has the transposed layer's output
//! shape, so forward and backward simply swap the roles of `im2col` and
//! `col2im`.

use rand::Rng;

use super::gemm::{gemm, Mat};
use super::{glorot_uniform, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sliding-window geometry of a convolution over a `C × H × W` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, padding: usize) -> Option<Self> {
        if height + 2 * padding < kernel || width + 2 * padding < kernel || stride == 0 {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h: (height + 2 * padding - kernel) / stride + 1,
            out_w: (width + 2 * padding - kernel) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one `C × H × W` image into a `(C·k·k) × (out_h·out_w)` matrix.
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let k = self.kernel;
        let ncols = self.col_cols();
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            *v = if ix < 0 || ix >= self.width as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters-adds columns back into an image.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        image.fill(0.0);
        let k = self.kernel;
        let ncols = self.col_cols();
        for c in 0..self.channels {
            let plane = &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && (ix as usize) < self.width {
                                dst[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn expect_nchw(context: &str, input: &Tensor, channels: usize) -> Result<(usize, usize, usize)> {
    let s = input.shape();
    if s.len() != 4 || s[1] != channels {
        let mut expected = vec![s.first().copied().unwrap_or(1), channels];
        expected.extend(s.get(2..4).map(|r| r.to_vec()).unwrap_or(vec![0, 0]));
        return Err(Error::shape(context, &expected, s));
    }
    Ok((s[0], s[2], s[3]))
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, k, k]`
    pub weight: Param,
    /// `[out]`
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let kk = kernel * kernel;
        let weight = glorot_uniform(&[out_channels, in_channels, kernel, kernel], in_channels * kk, out_channels * kk, rng);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[out_channels])),
            cache: None,
        }
    }

    fn geometry(&self, input: &Tensor) -> Result<(usize, Geometry)> {
        let (n, h, w) = expect_nchw("conv2d input", input, self.in_channels)?;
        let g = Geometry::new(self.in_channels, h, w, self.kernel, self.stride, self.padding)
            .ok_or_else(|| Error::shape("conv2d input smaller than kernel", &[n, self.in_channels, self.kernel, self.kernel], input.shape()))?;
        Ok((n, g))
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || input[1] != self.in_channels {
            return Err(Error::shape("conv2d input", &[input.first().copied().unwrap_or(1), self.in_channels], input));
        }
        let g = Geometry::new(self.in_channels, input[2], input[3], self.kernel, self.stride, self.padding)
            .ok_or_else(|| Error::shape("conv2d input smaller than kernel", &[self.kernel, self.kernel], &input[2..]))?;
        Ok(vec![input[0], self.out_channels, g.out_h, g.out_w])
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let (n, g) = self.geometry(input)?;
        let plane = g.col_cols();
        let mut out = Tensor::zeros(&[n, self.out_channels, g.out_h, g.out_w]);
        let mut cols = vec![0.0; g.col_rows() * plane];
        let item_out = self.out_channels * plane;
        for b in 0..n {
            g.im2col(input.item(b), &mut cols);
            let dst = &mut out.data_mut()[b * item_out..(b + 1) * item_out];
            for (o, chunk) in dst.chunks_exact_mut(plane).enumerate() {
                chunk.fill(self.bias.value.data()[o]);
            }
            gemm(
                Mat::new(self.weight.value.data(), self.out_channels, g.col_rows()),
                Mat::new(&cols, g.col_rows(), plane),
                1.0,
                dst,
            );
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = self.cache.as_ref().ok_or(Error::MissingCache("conv2d"))?;
        let (n, g) = self.geometry(input)?;
        let plane = g.col_cols();
        upstream.expect_shape("conv2d upstream gradient", &[n, self.out_channels, g.out_h, g.out_w])?;
        let mut grad_in = Tensor::zeros(input.shape());
        let mut cols = vec![0.0; g.col_rows() * plane];
        let mut dcols = vec![0.0; g.col_rows() * plane];
        let item_in = input.item_len();
        for b in 0..n {
            let up = upstream.item(b);
            for (o, chunk) in up.chunks_exact(plane).enumerate() {
                self.bias.grad.data_mut()[o] += chunk.iter().sum::<f64>();
            }
            g.im2col(input.item(b), &mut cols);
            let up_m = Mat::new(up, self.out_channels, plane);
            gemm(up_m, Mat::new(&cols, g.col_rows(), plane).t(), 1.0, self.weight.grad.data_mut());
            gemm(Mat::new(self.weight.value.data(), self.out_channels, g.col_rows()).t(), up_m, 0.0, &mut dcols);
            g.col2im(&dcols, &mut grad_in.data_mut()[b * item_in..(b + 1) * item_in]);
        }
        Ok(grad_in)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    /// `[in, out, k, k]`
    pub weight: Param,
    /// `[out]`
    pub bias: Param,
    cache: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if output_padding >= stride.max(1) {
            return Err(Error::InvalidConfig(format!(
                "output_padding {output_padding} must be smaller than stride {stride}"
            )));
        }
        let kk = kernel * kernel;
        let weight = glorot_uniform(&[in_channels, out_channels, kernel, kernel], in_channels * kk, out_channels * kk, rng);
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding,
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[out_channels])),
            cache: None,
        })
    }

    fn out_dim(&self, d: usize) -> Option<usize> {
        ((d - 1) * self.stride + self.kernel + self.output_padding).checked_sub(2 * self.padding).filter(|&v| v > 0)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || input[1] != self.in_channels {
            return Err(Error::shape("conv_transpose2d input", &[input.first().copied().unwrap_or(1), self.in_channels], input));
        }
        match (self.out_dim(input[2]), self.out_dim(input[3])) {
            (Some(h), Some(w)) => Ok(vec![input[0], self.out_channels, h, w]),
            _ => Err(Error::shape("conv_transpose2d input too small", &[self.kernel, self.kernel], &input[2..])),
        }
    }

    /// Geometry of the adjoint convolution, which maps output → input.
    fn geometry(&self, input: &Tensor) -> Result<(usize, Geometry)> {
        let (n, h, w) = expect_nchw("conv_transpose2d input", input, self.in_channels)?;
        let out = self.output_shape(input.shape())?;
        let g = Geometry::new(self.out_channels, out[2], out[3], self.kernel, self.stride, self.padding)
            .filter(|g| g.out_h == h && g.out_w == w)
            .ok_or_else(|| Error::shape("conv_transpose2d geometry", &[h, w], &out[2..]))?;
        Ok((n, g))
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let (n, g) = self.geometry(input)?;
        let in_plane = g.col_cols();
        let out_plane = g.height * g.width;
        let mut out = Tensor::zeros(&[n, self.out_channels, g.height, g.width]);
        let mut cols = vec![0.0; g.col_rows() * in_plane];
        let item_out = self.out_channels * out_plane;
        for b in 0..n {
            gemm(
                Mat::new(self.weight.value.data(), self.in_channels, g.col_rows()).t(),
                Mat::new(input.item(b), self.in_channels, in_plane),
                0.0,
                &mut cols,
            );
            let dst = &mut out.data_mut()[b * item_out..(b + 1) * item_out];
            g.col2im(&cols, dst);
            for (o, chunk) in dst.chunks_exact_mut(out_plane).enumerate() {
                let bias = self.bias.value.data()[o];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = self.cache.as_ref().ok_or(Error::MissingCache("conv_transpose2d"))?;
        let (n, g) = self.geometry(input)?;
        let in_plane = g.col_cols();
        let out_plane = g.height * g.width;
        upstream.expect_shape("conv_transpose2d upstream gradient", &[n, self.out_channels, g.height, g.width])?;
        let mut grad_in = Tensor::zeros(input.shape());
        let mut cols = vec![0.0; g.col_rows() * in_plane];
        let item_in = input.item_len();
        for b in 0..n {
            let up = upstream.item(b);
            for (o, chunk) in up.chunks_exact(out_plane).enumerate() {
                self.bias.grad.data_mut()[o] += chunk.iter().sum::<f64>();
            }
            g.im2col(up, &mut cols);
            let cols_m = Mat::new(&cols, g.col_rows(), in_plane);
            gemm(Mat::new(input.item(b), self.in_channels, in_plane), cols_m.t(), 1.0, self.weight.grad.data_mut());
            gemm(
                Mat::new(self.weight.value.data(), self.in_channels, g.col_rows()),
                cols_m,
                0.0,
                &mut grad_in.data_mut()[b * item_in..(b + 1) * item_in],
            );
        }
        Ok(grad_in)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}
