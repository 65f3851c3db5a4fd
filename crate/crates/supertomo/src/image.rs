//! Square pixel images and sinograms.
//!
//! An [`Image`] is a square grid of 64-bit values stored row-major
//! (lexicographic) order; it is the iterate `x` of every solver. A
//! [`Sinogram`] is the measured data vector `b`, one value per (angle, ray)
//! pair in angle-major order.

use crate::error::{Error, Result};

/// Square pixel image with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    n_side: usize,
    values: Vec<f64>,
}

impl Image {
    /// Wraps a value vector; the length must be `n_side * n_side`.
    pub fn from_values(n_side: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_side * n_side {
            return Err(Error::DimensionMismatch(format!(
                "image values have length {}, expected {}",
                values.len(),
                n_side * n_side
            )));
        }
        Ok(Self { n_side, values })
    }

    pub fn zeros(n_side: usize) -> Self {
        Self::constant(n_side, 0.0)
    }

    pub fn constant(n_side: usize, value: f64) -> Self {
        Self {
            n_side,
            values: vec![value; n_side * n_side],
        }
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    /// Number of pixels, `n_side * n_side`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at (row, col).
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_side + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.n_side + col] = value;
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Componentwise map into a new image.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_side: self.n_side,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// Euclidean distance to another image of the same shape.
    pub fn distance(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.n_side, other.n_side);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Measured line-integral data in geometry row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    values: Vec<f64>,
}

impl Sinogram {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            values: vec![0.0; m],
        }
    }

    /// Number of rays, `m`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}
