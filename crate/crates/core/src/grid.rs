//! Row-major 2-D grids for images and masks.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Grayscale image with intensities in `[0, 1]`.
pub type Image = Grid<f64>;
pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("grid data", &[height, width], &[data.len()]));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_dims<U>(&self, other: &Grid<U>, context: &str) -> Result<()> {
        if self.dims() != (other.height, other.width) {
            return Err(Error::shape(context, &[self.height, self.width], &[other.height, other.width]));
        }
        Ok(())
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|v| *v)
    }

    /// Coordinates of set pixels in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        (0..self.data.len()).filter(|&i| self.data[i]).map(|i| (i / self.width, i % self.width)).collect()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        Grid { height: self.height, width: self.width, data }
    }

    /// True if any set pixel lies in the half-open window `[y0, y1) × [x0, x1)`.
    pub fn any_in(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> bool {
        (y0..y1.min(self.height)).any(|y| self.data[y * self.width + x0..y * self.width + x1.min(self.width)].iter().any(|v| *v))
    }
}

impl Grid<f64> {
    /// Copies the `size × size` window with top-left corner `(y0, x0)`.
    pub fn window(&self, y0: usize, x0: usize, size: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size);
        for y in y0..y0 + size {
            out.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + size]);
        }
        out
    }
}
