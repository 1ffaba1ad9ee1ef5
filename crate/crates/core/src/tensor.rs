//! Dense row-major `H x W x C` rasters in double precision.
//!
//! [`ImageTensor`] holds pixel-space maps (RGB images and target maps),
//! [`Latent`] holds codec-space maps. Both store channels innermost.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// A pixel-space raster: an RGB image or a target map (depth, normal, mask).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                data.len(),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Channel values at pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let k = self.shape.channels;
        let start = (row * self.shape.width + col) * k;
        &self.data[start..start + k]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let k = self.shape.channels;
        let start = (row * self.shape.width + col) * k;
        &mut self.data[start..start + k]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        ensure_same(self.shape, other.shape)?;
        Ok(max_abs_diff(&self.data, &other.data))
    }
}

/// Where a latent came from. Carriers drawn from a Gaussian are tagged `Noise`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Image,
    Label,
    Noise,
}

/// A codec-space map of shape `(H/p) x (W/p) x c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    shape: Shape,
    provenance: Provenance,
    data: Vec<f64>,
}

impl Latent {
    pub fn zeros(shape: Shape, provenance: Provenance) -> Self {
        Self {
            shape,
            provenance,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, provenance: Provenance, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                data.len(),
            ));
        }
        Ok(Self {
            shape,
            provenance,
            data,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn neg(&self) -> Self {
        Self {
            shape: self.shape,
            provenance: self.provenance,
            data: self.data.iter().map(|v| -v).collect(),
        }
    }

    /// Elementwise `a * x + b * y`, evaluated as written for every element.
    pub fn lincomb(a: f64, x: &Latent, b: f64, y: &Latent) -> Result<Latent> {
        ensure_same(x.shape, y.shape)?;
        let data = x
            .data
            .iter()
            .zip(&y.data)
            .map(|(&xv, &yv)| a * xv + b * yv)
            .collect();
        Ok(Latent {
            shape: x.shape,
            provenance: x.provenance,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        ensure_same(self.shape, other.shape)?;
        Ok(max_abs_diff(&self.data, &other.data))
    }

    pub fn l2_distance(&self, other: &Self) -> Result<f64> {
        ensure_same(self.shape, other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

pub(crate) fn ensure_same(expected: Shape, actual: Shape) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(expected, actual));
    }
    Ok(())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Running elementwise mean. Averaging identical inputs returns them bit for bit.
#[derive(Debug, Clone)]
pub(crate) struct RunningMean {
    mean: Vec<f64>,
    count: usize,
}

impl RunningMean {
    pub fn new(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            count: 0,
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.mean.len());
        self.count += 1;
        if self.count == 1 {
            self.mean.copy_from_slice(values);
            return;
        }
        let n = self.count as f64;
        for (m, &v) in self.mean.iter_mut().zip(values) {
            *m += (v - *m) / n;
        }
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_mean_of_identical_values_is_exact() {
        let x = [0.1, -7.3e-5, 1.0 / 3.0];
        let mut m = RunningMean::new(3);
        for _ in 0..7 {
            m.push(&x);
        }
        assert_eq!(m.into_vec(), x.to_vec());
    }

    #[test]
    fn lincomb_rejects_mismatched_shapes() {
        let a = Latent::zeros(Shape::new(2, 2, 1), Provenance::Label);
        let b = Latent::zeros(Shape::new(2, 1, 2), Provenance::Label);
        assert!(Latent::lincomb(1.0, &a, 1.0, &b).is_err());
    }
}
