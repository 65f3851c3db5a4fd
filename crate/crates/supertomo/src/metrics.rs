//! Image-quality and fit metrics: MSE, Gaussian-windowed SSIM, the
//! Kullback-Leibler data-fit value, TV, estimation error, and the
//! mean/confidence-interval summary used by campaign reports.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::likelihood::{EmissionObjective, Objective};
use crate::tv::tv_value;

/// Mean squared difference per pixel.
pub fn mse(x: &Image, x_ref: &Image) -> Result<f64> {
    if x.n_side() != x_ref.n_side() {
        return Err(Error::DimensionMismatch("mse images differ in shape".into()));
    }
    let sum: f64 = x
        .values()
        .iter()
        .zip(x_ref.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// SSIM parameters: Gaussian window plus the usual stability constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl SsimParams {
    /// 11x11 Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03.
    pub fn with_range(dynamic_range: f64) -> Result<Self> {
        if !(dynamic_range > 0.0) {
            return Err(Error::InvalidArgument(
                "SSIM dynamic range must be positive".into(),
            ));
        }
        Ok(Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range,
        })
    }

    /// Default parameters with the dynamic range taken from the reference
    /// image's maximum.
    pub fn for_reference(reference: &Image) -> Result<Self> {
        Self::with_range(reference.max())
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument("SSIM window must be odd".into()));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::InvalidArgument("K1 and K2 must be positive".into()));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::InvalidArgument(
                "SSIM dynamic range must be positive".into(),
            ));
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let w = self.window;
        let half = (w / 2) as f64;
        let mut kernel = Vec::with_capacity(w * w);
        for i in 0..w {
            for j in 0..w {
                let di = i as f64 - half;
                let dj = j as f64 - half;
                kernel.push((-(di * di + dj * dj) / (2.0 * self.sigma * self.sigma)).exp());
            }
        }
        let total: f64 = kernel.iter().sum();
        for k in &mut kernel {
            *k /= total;
        }
        kernel
    }
}

/// Mean local SSIM index over all fully interior Gaussian windows.
pub fn ssim(x: &Image, x_ref: &Image, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if x.n_side() != x_ref.n_side() {
        return Err(Error::DimensionMismatch("ssim images differ in shape".into()));
    }
    let n = x.n_side();
    let w = params.window;
    if n < w {
        return Err(Error::Metric(format!(
            "image side {n} smaller than SSIM window {w}"
        )));
    }

    let kernel = params.kernel();
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let xa = x.values();
    let xb = x_ref.values();

    let mut total = 0.0;
    let positions = n - w + 1;
    for i0 in 0..positions {
        for j0 in 0..positions {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for wi in 0..w {
                for wj in 0..w {
                    let g = kernel[wi * w + wj];
                    let a = xa[(i0 + wi) * n + j0 + wj];
                    let b = xb[(i0 + wi) * n + j0 + wj];
                    mu_a += g * a;
                    mu_b += g * b;
                    aa += g * a * a;
                    bb += g * b * b;
                    ab += g * a * b;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    }
    Ok(total / (positions * positions) as f64)
}

/// Data-fit value of the emission objective (the Kullback-Leibler axis of
/// the fit-versus-roughness curves).
pub fn kl_fit(objective: &EmissionObjective<'_>, x: &Image) -> f64 {
    objective.value(x)
}

pub fn tv_of(x: &Image) -> f64 {
    tv_value(x)
}

/// Euclidean distance to the ground truth.
pub fn estimation_error(x: &Image, x_true: &Image) -> f64 {
    x.distance(x_true)
}

/// One row of a campaign summary: sample mean and 99% confidence half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    pub ci99: f64,
}

/// Per-metric means with 99% Student-t confidence half-widths over
/// repetitions. `per_rep_values` holds one vector per repetition, aligned
/// with `metric_names`.
pub fn summarize(metric_names: &[&str], per_rep_values: &[Vec<f64>]) -> Result<Vec<SummaryRow>> {
    let reps = per_rep_values.len();
    if reps < 2 {
        return Err(Error::Metric(format!(
            "summary needs at least 2 repetitions, got {reps}"
        )));
    }
    for row in per_rep_values {
        if row.len() != metric_names.len() {
            return Err(Error::Metric("ragged repetition metric rows".into()));
        }
    }
    let t = StudentsT::new(0.0, 1.0, (reps - 1) as f64)
        .map_err(|e| Error::Metric(format!("student-t setup: {e}")))?
        .inverse_cdf(0.995);

    let mut rows = Vec::with_capacity(metric_names.len());
    for (idx, name) in metric_names.iter().enumerate() {
        let values: Vec<f64> = per_rep_values.iter().map(|r| r[idx]).collect();
        let mean = values.iter().sum::<f64>() / reps as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64;
        let ci99 = t * (var / reps as f64).sqrt();
        rows.push(SummaryRow {
            metric: name.to_string(),
            mean,
            ci99,
        });
    }
    Ok(rows)
}

/// Writes a summary with the stable header `metric,mean,ci99`.
pub fn write_summary_csv(path: &std::path::Path, rows: &[SummaryRow]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "metric,mean,ci99")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.metric, r.mean, r.ci99)?;
    }
    w.flush()?;
    Ok(())
}
