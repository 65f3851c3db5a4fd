//! Discrete Radon operator for a parallel-beam 2-D geometry.
//!
//! The image occupies the square `[-fov_radius, fov_radius]^2` and is split
//! into `n_side x n_side` pixels. A ray is the line at angle `theta` (normal
//! direction) and signed offset `t` from the origin; its weight against pixel
//! `j` is the exact intersection length of the line with the pixel, so a row
//! of the system matrix evaluates the line integral of the pixel-basis image.
//!
//! Rows are ordered angle-major: row `i = angle_index * n_rays + ray_index`.
//! Rays that miss the image keep their (empty) row so that row indices stay
//! aligned with the geometry.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, Sinogram};

/// Parallel-beam acquisition geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    n_side: usize,
    fov_radius: f64,
    angles: Vec<f64>,
    ray_offsets: Vec<f64>,
}

impl Geometry {
    /// Uniform geometry: `n_angles` view angles over `[0, pi)` and `n_rays`
    /// offsets spanning `[-fov_radius, fov_radius]` inclusive.
    pub fn parallel(
        n_side: usize,
        n_angles: usize,
        n_rays: usize,
        fov_radius: f64,
    ) -> Result<Self> {
        if n_angles == 0 {
            return Err(Error::Geometry("n_angles must be >= 1".into()));
        }
        if n_rays == 0 {
            return Err(Error::Geometry("n_rays must be >= 1".into()));
        }
        let angles = (0..n_angles)
            .map(|i| i as f64 * std::f64::consts::PI / n_angles as f64)
            .collect();
        let ray_offsets = if n_rays == 1 {
            vec![0.0]
        } else {
            (0..n_rays)
                .map(|j| -fov_radius + 2.0 * fov_radius * j as f64 / (n_rays - 1) as f64)
                .collect()
        };
        Self::with_rays(n_side, fov_radius, angles, ray_offsets)
    }

    /// Geometry from explicit angle and offset lists.
    pub fn with_rays(
        n_side: usize,
        fov_radius: f64,
        angles: Vec<f64>,
        ray_offsets: Vec<f64>,
    ) -> Result<Self> {
        if n_side == 0 {
            return Err(Error::Geometry("n_side must be >= 1".into()));
        }
        if !(fov_radius > 0.0) {
            return Err(Error::Geometry("fov_radius must be positive".into()));
        }
        if angles.is_empty() || ray_offsets.is_empty() {
            return Err(Error::Geometry("angles and ray_offsets must be nonempty".into()));
        }
        for pair in angles.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(Error::Geometry("angles must be strictly increasing".into()));
            }
        }
        if angles[0] < 0.0 || *angles.last().unwrap() >= std::f64::consts::PI {
            return Err(Error::Geometry("angles must lie in [0, pi)".into()));
        }
        Ok(Self {
            n_side,
            fov_radius,
            angles,
            ray_offsets,
        })
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn fov_radius(&self) -> f64 {
        self.fov_radius
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn ray_offsets(&self) -> &[f64] {
        &self.ray_offsets
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn n_rays(&self) -> usize {
        self.ray_offsets.len()
    }

    /// Number of measurements `m = n_angles * n_rays`.
    pub fn n_measurements(&self) -> usize {
        self.angles.len() * self.ray_offsets.len()
    }

    /// Number of unknowns `n = n_side^2`.
    pub fn n_pixels(&self) -> usize {
        self.n_side * self.n_side
    }

    /// Pixel side length.
    pub fn pixel_size(&self) -> f64 {
        2.0 * self.fov_radius / self.n_side as f64
    }

    /// (angle, offset) of measurement row `i`.
    pub fn ray(&self, i: usize) -> (f64, f64) {
        let n_rays = self.ray_offsets.len();
        (self.angles[i / n_rays], self.ray_offsets[i % n_rays])
    }
}

/// Sparse discrete Radon operator in compressed-row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    geometry: Geometry,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    weights: Vec<f64>,
}

impl SystemMatrix {
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn rows(&self) -> usize {
        self.geometry.n_measurements()
    }

    pub fn cols(&self) -> usize {
        self.geometry.n_pixels()
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// Entries of row `i` as (column, weight) pairs, sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        self.col_indices[lo..hi]
            .iter()
            .zip(&self.weights[lo..hi])
            .map(|(&j, &w)| (j as usize, w))
    }

    pub fn row_is_empty(&self, i: usize) -> bool {
        self.row_offsets[i] == self.row_offsets[i + 1]
    }

    /// Forward projection `R x`.
    pub fn forward(&self, x: &Image) -> Result<Sinogram> {
        if x.len() != self.cols() {
            return Err(Error::DimensionMismatch(format!(
                "image has {} pixels, matrix has {} columns",
                x.len(),
                self.cols()
            )));
        }
        let xv = x.values();
        let values = (0..self.rows())
            .map(|i| self.row_dot(i, xv))
            .collect();
        Ok(Sinogram::from_values(values))
    }

    /// Sparse dot product of row `i` with a dense vector.
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        let mut acc = 0.0;
        for (c, w) in self.col_indices[lo..hi].iter().zip(&self.weights[lo..hi]) {
            acc += w * x[*c as usize];
        }
        acc
    }

    /// Back projection `R^T y`.
    pub fn back(&self, y: &Sinogram) -> Result<Image> {
        if y.len() != self.rows() {
            return Err(Error::DimensionMismatch(format!(
                "sinogram has {} rays, matrix has {} rows",
                y.len(),
                self.rows()
            )));
        }
        let mut out = vec![0.0; self.cols()];
        self.back_acc(y.values(), &mut out);
        Image::from_values(self.geometry.n_side, out)
    }

    /// Accumulates `R^T y` into `out` (not cleared first).
    pub fn back_acc(&self, y: &[f64], out: &mut [f64]) {
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let lo = self.row_offsets[i];
            let hi = self.row_offsets[i + 1];
            for (c, w) in self.col_indices[lo..hi].iter().zip(&self.weights[lo..hi]) {
                out[*c as usize] += w * yi;
            }
        }
    }

    /// Column aggregates `p_j = sum_i r_ij`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols()];
        for (c, w) in self.col_indices.iter().zip(&self.weights) {
            sums[*c as usize] += w;
        }
        sums
    }

    /// Row aggregates `sum_j r_ij`.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|i| {
                let lo = self.row_offsets[i];
                let hi = self.row_offsets[i + 1];
                self.weights[lo..hi].iter().sum()
            })
            .collect()
    }
}

/// Builds the sparse system matrix for `geom` with exact ray/pixel
/// intersection-length weights (Siddon-style traversal). Deterministic for
/// equal geometries; rows are built independently and may run in parallel.
pub fn build_system_matrix(geom: &Geometry) -> SystemMatrix {
    let m = geom.n_measurements();
    let rows: Vec<Vec<(u32, f64)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let (theta, t) = geom.ray(i);
            trace_ray(geom, theta, t)
        })
        .collect();

    let nnz = rows.iter().map(Vec::len).sum();
    let mut row_offsets = Vec::with_capacity(m + 1);
    let mut col_indices = Vec::with_capacity(nnz);
    let mut weights = Vec::with_capacity(nnz);
    row_offsets.push(0);
    for row in rows {
        for (c, w) in row {
            col_indices.push(c);
            weights.push(w);
        }
        row_offsets.push(col_indices.len());
    }
    SystemMatrix {
        geometry: geom.clone(),
        row_offsets,
        col_indices,
        weights,
    }
}

/// Intersection lengths of the line (theta, t) with every pixel it crosses,
/// as (column, length) pairs sorted by column index.
fn trace_ray(geom: &Geometry, theta: f64, t: f64) -> Vec<(u32, f64)> {
    let fov = geom.fov_radius;
    let n = geom.n_side;
    let h = geom.pixel_size();
    let (sin_t, cos_t) = theta.sin_cos();
    // Point at parameter s = 0 and unit direction along the line.
    let (ox, oy) = (t * cos_t, t * sin_t);
    let (dx, dy) = (-sin_t, cos_t);

    // Clip the line to the image square (slab method).
    let mut s_lo = f64::NEG_INFINITY;
    let mut s_hi = f64::INFINITY;
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() < 1e-14 {
            if o < -fov || o > fov {
                return Vec::new();
            }
        } else {
            let a = (-fov - o) / d;
            let b = (fov - o) / d;
            s_lo = s_lo.max(a.min(b));
            s_hi = s_hi.min(a.max(b));
        }
    }
    if !(s_hi - s_lo > 1e-12 * h) {
        return Vec::new();
    }

    // Parameters of every grid-line crossing inside the clip range.
    let mut crossings = Vec::with_capacity(2 * n + 4);
    crossings.push(s_lo);
    crossings.push(s_hi);
    for k in 0..=n {
        let g = -fov + k as f64 * h;
        if dx.abs() > 1e-14 {
            let s = (g - ox) / dx;
            if s > s_lo && s < s_hi {
                crossings.push(s);
            }
        }
        if dy.abs() > 1e-14 {
            let s = (g - oy) / dy;
            if s > s_lo && s < s_hi {
                crossings.push(s);
            }
        }
    }
    crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Midpoint of each segment identifies the pixel; the segment length is
    // the weight. Accumulate per pixel in case of duplicate crossings.
    let mut acc: Vec<(u32, f64)> = Vec::with_capacity(2 * n);
    for pair in crossings.windows(2) {
        let len = pair[1] - pair[0];
        if len <= 1e-12 * h {
            continue;
        }
        let s_mid = 0.5 * (pair[0] + pair[1]);
        let x = ox + s_mid * dx;
        let y = oy + s_mid * dy;
        let col = (((x + fov) / h).floor() as isize).clamp(0, n as isize - 1) as u32;
        let row = (((fov - y) / h).floor() as isize).clamp(0, n as isize - 1) as u32;
        let j = row * n as u32 + col;
        match acc.iter_mut().find(|(c, _)| *c == j) {
            Some((_, w)) => *w += len,
            None => acc.push((j, len)),
        }
    }
    acc.sort_by_key(|&(c, _)| c);
    acc
}
