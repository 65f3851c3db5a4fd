//! Shepp-Logan phantom and synthetic noisy data.
//!
//! Emission data are Poisson counts around a scaled forward projection, with
//! the scale picked so the realized signal-to-noise ratio matches a request.
//! Transmission data are Beer-Lambert counts `alpha_i ~ Poisson(beta_i *
//! exp(-(Rx)_i) + rho_i)` with constant blank and dark levels.
//!
//! All randomness flows through a seeded ChaCha8 generator; Poisson samples
//! use `rand_distr` (inversion for small means, PTRS rejection for large
//! ones), so a fixed seed reproduces the data exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::image::{Image, Sinogram};
use crate::projection::SystemMatrix;

/// One additive ellipse of a piecewise-constant phantom. Coordinates live in
/// the unit square `[-1, 1]^2`; `rotation` is counterclockwise in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseSpec {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub rotation: f64,
    pub intensity: f64,
}

impl EllipseSpec {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (a, b) = self.semi_axes;
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        let (sin_r, cos_r) = self.rotation.sin_cos();
        let xr = dx * cos_r + dy * sin_r;
        let yr = -dx * sin_r + dy * cos_r;
        (xr / a) * (xr / a) + (yr / b) * (yr / b) <= 1.0
    }
}

/// The ten-ellipse Shepp-Logan head phantom with the widely used "modified"
/// gray levels (skull 1.0, brain 0.2, features at 0.1 contrast).
pub fn shepp_logan_ellipses() -> Vec<EllipseSpec> {
    const DEG: f64 = std::f64::consts::PI / 180.0;
    let table: [(f64, f64, f64, f64, f64, f64); 10] = [
        // intensity, a, b, x0, y0, rotation (degrees)
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
        (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
        (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
        (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
        (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
        (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
        (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
    ];
    table
        .iter()
        .map(|&(intensity, a, b, x0, y0, rot)| EllipseSpec {
            center: (x0, y0),
            semi_axes: (a, b),
            rotation: rot * DEG,
            intensity,
        })
        .collect()
}

/// Rasterizes additive ellipses on the unit square by pixel-center membership.
pub fn render_ellipses(n_side: usize, ellipses: &[EllipseSpec]) -> Image {
    let mut img = Image::zeros(n_side);
    let step = 2.0 / n_side as f64;
    for row in 0..n_side {
        let y = 1.0 - (row as f64 + 0.5) * step;
        for col in 0..n_side {
            let x = -1.0 + (col as f64 + 0.5) * step;
            let mut v = 0.0;
            for e in ellipses {
                if e.contains(x, y) {
                    v += e.intensity;
                }
            }
            img.set(row, col, v);
        }
    }
    img
}

/// Shepp-Logan phantom at the requested resolution. Deterministic and
/// nonnegative.
pub fn shepp_logan(n_side: usize) -> Image {
    // Intensity sums that are zero in exact arithmetic (1.0 - 0.8 - 0.2 in
    // the ventricles) land at ~1e-17 in f64; snap them so the phantom is
    // exactly nonnegative.
    render_ellipses(n_side, &shepp_logan_ellipses()).map(|v| if v.abs() < 1e-12 { 0.0 } else { v })
}

/// Emission sinogram with its count scale: `counts_i ~ Poisson(scale * (R
/// x_true)_i)`. Dividing the counts by `scale` recovers data in the units of
/// the forward projection.
#[derive(Debug, Clone)]
pub struct EmissionData {
    pub counts: Sinogram,
    pub scale: f64,
}

/// Simulates Poisson emission data at approximately `snr_db` decibels.
///
/// The SNR convention is `10 log10(||y||^2 / ||b/scale - y||^2)` with `y = R
/// x_true`; the count scale is found by bisection on the expected SNR.
pub fn simulate_emission(
    matrix: &SystemMatrix,
    x_true: &Image,
    snr_db: f64,
    rng_seed: u64,
) -> Result<EmissionData> {
    let projection = matrix.forward(x_true)?;
    let y = projection.values();
    let norm_sq: f64 = y.iter().map(|v| v * v).sum();
    let sum: f64 = y.iter().sum();
    if norm_sq == 0.0 {
        if snr_db.is_finite() {
            return Err(Error::Simulation(
                "all-zero projection cannot attain a finite SNR".into(),
            ));
        }
        return Ok(EmissionData {
            counts: Sinogram::zeros(y.len()),
            scale: 1.0,
        });
    }

    // Expected SNR at scale c is 10 log10(c ||y||^2 / sum(y)): the expected
    // squared noise of rescaled counts is sum(y) / c. Monotone in c, so a
    // log-space bisection pins the scale.
    let expected_snr = |c: f64| 10.0 * (c * norm_sq / sum).log10();
    let mut lo = 1e-12_f64;
    let mut hi = 1e15_f64;
    if expected_snr(lo) > snr_db || expected_snr(hi) < snr_db {
        return Err(Error::Simulation(format!(
            "requested SNR {snr_db} dB outside attainable bracket"
        )));
    }
    for _ in 0..200 {
        let mid = (lo.ln() + hi.ln()) / 2.0;
        let mid = mid.exp();
        if expected_snr(mid) < snr_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = (lo * hi).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let counts = y
        .iter()
        .map(|&v| sample_poisson(&mut rng, scale * v))
        .collect();
    Ok(EmissionData {
        counts: Sinogram::from_values(counts),
        scale,
    })
}

/// Transmission count data: object scan `alpha`, expected blank counts
/// `beta`, dark counts `rho`, all of length `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionCounts {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    rho: Vec<f64>,
}

impl TransmissionCounts {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if alpha.len() != beta.len() || alpha.len() != rho.len() {
            return Err(Error::DimensionMismatch(
                "alpha, beta, rho must have equal lengths".into(),
            ));
        }
        if beta.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::InvalidArgument("beta must be positive".into()));
        }
        if alpha.iter().chain(rho.iter()).any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(
                "alpha and rho must be nonnegative".into(),
            ));
        }
        Ok(Self { alpha, beta, rho })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
}

/// Simulates Beer-Lambert transmission counts with constant blank and dark
/// levels. Deterministic given the seed.
pub fn simulate_transmission(
    matrix: &SystemMatrix,
    x_true: &Image,
    blank_level: f64,
    dark_level: f64,
    rng_seed: u64,
) -> Result<TransmissionCounts> {
    if !(blank_level > 0.0) {
        return Err(Error::InvalidArgument("blank_level must be positive".into()));
    }
    if dark_level < 0.0 {
        return Err(Error::InvalidArgument("dark_level must be nonnegative".into()));
    }
    let projection = matrix.forward(x_true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let m = projection.len();
    let alpha = projection
        .values()
        .iter()
        .map(|&line| sample_poisson(&mut rng, blank_level * (-line).exp() + dark_level))
        .collect();
    TransmissionCounts::new(alpha, vec![blank_level; m], vec![dark_level; m])
}

fn sample_poisson(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng)
}
