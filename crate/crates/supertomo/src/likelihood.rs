//! Negative log-likelihood objectives for emission and transmission data,
//! with full and per-subset gradients for the incremental solvers.
//!
//! Emission: `L_E(x) = sum_i (Rx)_i - b_i ln (Rx)_i`.
//! Transmission: `L_TR(x) = sum_i beta_i e^{-(Rx)_i} - alpha_i ln(beta_i
//! e^{-(Rx)_i} + rho_i)`, whose gradient is `sum_i r_ij beta_i e^{-(Rx)_i}
//! (alpha_i / (beta_i e^{-(Rx)_i} + rho_i) - 1)` per pixel.
//!
//! A tiny floor guards every logarithm and division so zero projection rows
//! cannot produce NaN; it is far below any value the solvers visit.

use crate::error::{Error, Result};
use crate::image::{Image, Sinogram};
use crate::phantom::TransmissionCounts;
use crate::projection::SystemMatrix;

/// Default guard for logs and divisions.
pub const DEFAULT_FLOOR_EPS: f64 = 1e-300;

/// Reusable sparse-gradient accumulator: a dense buffer plus the list of
/// indices touched since the last clear.
#[derive(Debug)]
pub struct GradScratch {
    grad: Vec<f64>,
    touched: Vec<usize>,
    visited: Vec<bool>,
}

impl GradScratch {
    pub fn new(n: usize) -> Self {
        Self {
            grad: vec![0.0; n],
            touched: Vec::new(),
            visited: vec![false; n],
        }
    }

    pub fn add(&mut self, index: usize, value: f64) {
        if !self.visited[index] {
            self.visited[index] = true;
            self.touched.push(index);
        }
        self.grad[index] += value;
    }

    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    pub fn value(&self, index: usize) -> f64 {
        self.grad[index]
    }

    /// Zeroes only the touched entries, keeping the clear O(touched).
    pub fn clear(&mut self) {
        for &j in &self.touched {
            self.grad[j] = 0.0;
            self.visited[j] = false;
        }
        self.touched.clear();
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &j in &self.touched {
            out[j] = self.grad[j];
        }
        out
    }
}

/// A data-fit objective split into one term per measurement row.
pub trait Objective {
    fn matrix(&self) -> &SystemMatrix;

    fn n_rows(&self) -> usize {
        self.matrix().rows()
    }

    fn n_pixels(&self) -> usize {
        self.matrix().cols()
    }

    fn value(&self, x: &Image) -> f64;

    /// Adds the gradient of the listed rows' terms, evaluated at `x`, into
    /// the scratch accumulator.
    fn accumulate_partial_gradient(&self, x: &[f64], rows: &[usize], scratch: &mut GradScratch);

    fn gradient(&self, x: &Image) -> Vec<f64> {
        let rows: Vec<usize> = (0..self.n_rows()).collect();
        let mut scratch = GradScratch::new(self.n_pixels());
        self.accumulate_partial_gradient(x.values(), &rows, &mut scratch);
        scratch.to_dense(self.n_pixels())
    }

    /// Dense gradient restricted to a row subset.
    fn partial_gradient(&self, x: &Image, rows: &[usize]) -> Result<Vec<f64>> {
        for &i in rows {
            if i >= self.n_rows() {
                return Err(Error::InvalidArgument(format!(
                    "row index {i} out of range (m = {})",
                    self.n_rows()
                )));
            }
        }
        let mut scratch = GradScratch::new(self.n_pixels());
        self.accumulate_partial_gradient(x.values(), rows, &mut scratch);
        Ok(scratch.to_dense(self.n_pixels()))
    }
}

/// Poisson emission objective `L_E`.
#[derive(Debug, Clone)]
pub struct EmissionObjective<'a> {
    matrix: &'a SystemMatrix,
    data: Sinogram,
    floor_eps: f64,
}

impl<'a> EmissionObjective<'a> {
    pub fn new(matrix: &'a SystemMatrix, data: Sinogram) -> Result<Self> {
        Self::with_floor(matrix, data, DEFAULT_FLOOR_EPS)
    }

    pub fn with_floor(matrix: &'a SystemMatrix, data: Sinogram, floor_eps: f64) -> Result<Self> {
        if data.len() != matrix.rows() {
            return Err(Error::DimensionMismatch(format!(
                "data has {} rays, matrix has {} rows",
                data.len(),
                matrix.rows()
            )));
        }
        if !(floor_eps > 0.0) {
            return Err(Error::InvalidArgument("floor_eps must be positive".into()));
        }
        Ok(Self {
            matrix,
            data,
            floor_eps,
        })
    }

    pub fn data(&self) -> &Sinogram {
        &self.data
    }

    pub fn floor_eps(&self) -> f64 {
        self.floor_eps
    }
}

impl Objective for EmissionObjective<'_> {
    fn matrix(&self) -> &SystemMatrix {
        self.matrix
    }

    fn value(&self, x: &Image) -> f64 {
        let mut total = 0.0;
        let xv = x.values();
        for i in 0..self.matrix.rows() {
            let rx = self.matrix.row_dot(i, xv);
            let b = self.data.values()[i];
            total += rx;
            if b != 0.0 {
                total -= b * rx.max(self.floor_eps).ln();
            }
        }
        total
    }

    fn accumulate_partial_gradient(&self, x: &[f64], rows: &[usize], scratch: &mut GradScratch) {
        for &i in rows {
            let rx = self.matrix.row_dot(i, x);
            let coeff = 1.0 - self.data.values()[i] / rx.max(self.floor_eps);
            if coeff == 0.0 {
                continue;
            }
            for (j, w) in self.matrix.row(i) {
                scratch.add(j, w * coeff);
            }
        }
    }
}

/// Poisson transmission objective `L_TR` for Beer-Lambert counts.
#[derive(Debug, Clone)]
pub struct TransmissionObjective<'a> {
    matrix: &'a SystemMatrix,
    counts: TransmissionCounts,
    floor_eps: f64,
}

impl<'a> TransmissionObjective<'a> {
    pub fn new(matrix: &'a SystemMatrix, counts: TransmissionCounts) -> Result<Self> {
        if counts.len() != matrix.rows() {
            return Err(Error::DimensionMismatch(format!(
                "counts have {} rays, matrix has {} rows",
                counts.len(),
                matrix.rows()
            )));
        }
        Ok(Self {
            matrix,
            counts,
            floor_eps: DEFAULT_FLOOR_EPS,
        })
    }

    pub fn counts(&self) -> &TransmissionCounts {
        &self.counts
    }
}

impl Objective for TransmissionObjective<'_> {
    fn matrix(&self) -> &SystemMatrix {
        self.matrix
    }

    fn value(&self, x: &Image) -> f64 {
        let mut total = 0.0;
        let xv = x.values();
        for i in 0..self.matrix.rows() {
            let rx = self.matrix.row_dot(i, xv);
            let expected = self.counts.beta()[i] * (-rx).exp();
            let alpha = self.counts.alpha()[i];
            total += expected;
            if alpha != 0.0 {
                total -= alpha * (expected + self.counts.rho()[i]).max(self.floor_eps).ln();
            }
        }
        total
    }

    fn accumulate_partial_gradient(&self, x: &[f64], rows: &[usize], scratch: &mut GradScratch) {
        for &i in rows {
            let rx = self.matrix.row_dot(i, x);
            let expected = self.counts.beta()[i] * (-rx).exp();
            let denom = (expected + self.counts.rho()[i]).max(self.floor_eps);
            let coeff = expected * (self.counts.alpha()[i] / denom - 1.0);
            if coeff == 0.0 {
                continue;
            }
            for (j, w) in self.matrix.row(i) {
                scratch.add(j, w * coeff);
            }
        }
    }
}
