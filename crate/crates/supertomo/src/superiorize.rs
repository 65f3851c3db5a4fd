//! Superiorization sequence generators: the three mappings that perturb a
//! post-solver iterate `x^{k+1/2}` toward lower Total Variation.
//!
//! * Standard: N accepted steps along the normalized negative TV subgradient
//!   with geometrically shrinking trial stepsizes `beta0 * alpha^ell`, each
//!   accepted only when the TV does not exceed that of `x^{k+1/2}`.
//! * Subgradient: N raw subgradient steps with stepsizes `gamma/1 .. gamma/N`
//!   followed by projection onto the nonnegative orthant.
//! * Prox: one TV-prox evaluation with a summable weight schedule
//!   `gamma0 / (k+1)^(1+eps)`, `eps` the machine epsilon.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::solvers::Superiorizer;
use crate::tv::{project_nonneg, tv_prox, tv_subgradient, tv_value, ProxParams};

/// How the trial-stepsize counter `ell` starts at each outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EllMode {
    /// `ell <- k` at the start of outer iteration `k`, as in the procedure's
    /// listing.
    #[default]
    ResetToIteration,
    /// `ell` carries over from the previous outer iteration.
    Persistent,
}

/// Parameters of the standard superiorization procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardSupParams {
    pub beta0: f64,
    pub alpha: f64,
    pub n_steps: usize,
    pub ell_mode: EllMode,
}

impl StandardSupParams {
    pub fn new(beta0: f64, alpha: f64, n_steps: usize) -> Result<Self> {
        if !(beta0 > 0.0) {
            return Err(Error::InvalidArgument("beta0 must be positive".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(
                "alpha must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(Self {
            beta0,
            alpha,
            n_steps,
            ell_mode: EllMode::default(),
        })
    }

    pub fn with_ell_mode(mut self, mode: EllMode) -> Self {
        self.ell_mode = mode;
        self
    }
}

/// Stateful standard superiorizer: carries the trial counter `ell` and a
/// count of outer iterations where the final clamp to the nonnegative
/// orthant actually changed a pixel.
#[derive(Debug, Clone)]
pub struct StandardSuperiorizer {
    params: StandardSupParams,
    ell: u64,
    clamp_activations: usize,
    last_accepted_steps: usize,
}

/// Trial budget for one accepted step; once exhausted the zero step is
/// accepted (the listing has no bound of its own).
const MAX_TRIALS_PER_STEP: usize = 10_000;

impl StandardSuperiorizer {
    pub fn new(params: StandardSupParams) -> Self {
        Self {
            params,
            ell: 0,
            clamp_activations: 0,
            last_accepted_steps: 0,
        }
    }

    pub fn ell(&self) -> u64 {
        self.ell
    }

    /// Outer iterations where the output needed clamping to stay
    /// nonnegative.
    pub fn clamp_activations(&self) -> usize {
        self.clamp_activations
    }

    /// Inner steps accepted during the most recent call to [`step`].
    ///
    /// [`step`]: StandardSuperiorizer::step
    pub fn last_accepted_steps(&self) -> usize {
        self.last_accepted_steps
    }

    /// Runs the N accepted inner steps from `x_half` for outer iteration
    /// `k`. Never increases TV relative to `x_half`.
    pub fn step(&mut self, x_half: &Image, k: usize) -> Image {
        let mut ell = match self.params.ell_mode {
            EllMode::ResetToIteration => k as u64,
            EllMode::Persistent => self.ell,
        };
        let tv_reference = tv_value(x_half);
        let mut b = x_half.clone();
        self.last_accepted_steps = 0;

        for _ in 0..self.params.n_steps {
            let t = tv_subgradient(&b);
            let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            // Nonascending direction: normalized negative subgradient, or
            // the zero vector at points of zero subgradient.
            let direction: Vec<f64> = if norm > 0.0 {
                t.iter().map(|v| -v / norm).collect()
            } else {
                vec![0.0; t.len()]
            };

            let mut trials = 0;
            loop {
                if trials == MAX_TRIALS_PER_STEP {
                    // Accept the zero step: b is unchanged and feasible.
                    break;
                }
                trials += 1;
                ell += 1;
                let beta = self.params.beta0 * self.params.alpha.powf(ell as f64);
                let candidate = Image::from_values(
                    b.n_side(),
                    b.values()
                        .iter()
                        .zip(&direction)
                        .map(|(bv, dv)| bv + beta * dv)
                        .collect(),
                )
                .expect("shape preserved");
                if tv_value(&candidate) <= tv_reference {
                    b = candidate;
                    break;
                }
            }
            self.last_accepted_steps += 1;
        }

        self.ell = ell;
        if b.min() < 0.0 {
            self.clamp_activations += 1;
            project_nonneg(&b)
        } else {
            b
        }
    }
}

/// Parameters of the projected-subgradient superiorizer: `n_steps` inner
/// steps with starting stepsize `gamma_k = gamma0 / (k s + 1)^0.35`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradSupParams {
    pub gamma0: f64,
    pub subsets: usize,
    pub n_steps: usize,
}

impl SubgradSupParams {
    pub fn new(gamma0: f64, subsets: usize, n_steps: usize) -> Result<Self> {
        if !(gamma0 > 0.0) {
            return Err(Error::InvalidArgument("gamma0 must be positive".into()));
        }
        if subsets == 0 {
            return Err(Error::InvalidArgument("subsets must be >= 1".into()));
        }
        Ok(Self {
            gamma0,
            subsets,
            n_steps,
        })
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 / ((k as f64 * self.subsets as f64) + 1.0).powf(0.35)
    }
}

/// N diminishing subgradient steps followed by nonnegative projection.
pub fn subgrad_step(params: &SubgradSupParams, x_half: &Image, k: usize) -> Image {
    let gamma = params.gamma(k);
    let mut y = x_half.clone();
    for i in 1..=params.n_steps {
        let t = tv_subgradient(&y);
        let step = gamma / i as f64;
        for (v, tv) in y.values_mut().iter_mut().zip(&t) {
            *v -= step * tv;
        }
    }
    project_nonneg(&y)
}

/// Stateless wrapper so the subgradient scheme plugs into the run loop.
#[derive(Debug, Clone)]
pub struct SubgradSuperiorizer {
    pub params: SubgradSupParams,
}

/// Parameters of the prox superiorizer: weight schedule `gamma0 / (k+1)^(1 +
/// eps)` with `eps` the f64 machine epsilon, which keeps the weights
/// summable while decaying almost harmonically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxSupParams {
    pub gamma0: f64,
    pub max_inner_iters: usize,
    pub dual_tolerance: f64,
}

impl ProxSupParams {
    pub fn new(gamma0: f64) -> Result<Self> {
        if !(gamma0 > 0.0) {
            return Err(Error::InvalidArgument("gamma0 must be positive".into()));
        }
        Ok(Self {
            gamma0,
            max_inner_iters: 100,
            dual_tolerance: 1e-8,
        })
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 / ((k + 1) as f64).powf(1.0 + f64::EPSILON)
    }
}

/// One TV-prox application with the scheduled weight.
pub fn prox_step(params: &ProxSupParams, x_half: &Image, k: usize) -> (Image, bool) {
    let prox_params = ProxParams {
        gamma: params.gamma(k),
        max_inner_iters: params.max_inner_iters,
        dual_tolerance: params.dual_tolerance,
    };
    let outcome = tv_prox(x_half, &prox_params);
    (outcome.image, outcome.converged)
}

/// Prox superiorizer with a counter of inner solves that hit their iteration
/// budget before the dual settled.
#[derive(Debug, Clone)]
pub struct ProxSuperiorizer {
    pub params: ProxSupParams,
    nonconverged: usize,
}

impl ProxSuperiorizer {
    pub fn new(params: ProxSupParams) -> Self {
        Self {
            params,
            nonconverged: 0,
        }
    }

    pub fn nonconverged(&self) -> usize {
        self.nonconverged
    }
}

/// Euclidean norm of the superiorization displacement `x_next - x_half`.
pub fn displacement_norm(x_half: &Image, x_next: &Image) -> f64 {
    x_next.distance(x_half)
}

/// Rescales a trial superiorization weight so that the perturbation length
/// is about 1e-2 of the solver step length:
/// `gamma0 = 1e-2 * ||x0 - x_half|| / ||x_half - trial(1, x_half)||`.
///
/// `trial_step` applies the superiorizer at outer iteration 0 with the given
/// starting weight.
pub fn calibrate_gamma0_ratio(
    x0: &Image,
    x_half: &Image,
    mut trial_step: impl FnMut(f64, &Image) -> Image,
) -> Result<f64> {
    let solver_displacement = x0.distance(x_half);
    if solver_displacement == 0.0 {
        return Err(Error::Calibration(
            "solver step produced zero displacement".into(),
        ));
    }
    let trial = trial_step(1.0, x_half);
    let trial_displacement = x_half.distance(&trial);
    if trial_displacement == 0.0 {
        return Err(Error::Calibration(
            "trial superiorization step produced zero displacement".into(),
        ));
    }
    Ok(1e-2 * solver_displacement / trial_displacement)
}

/// Any of the three TV superiorization schemes, ready to plug into the run
/// loop.
#[derive(Debug, Clone)]
pub enum TvSuperiorizer {
    Standard(StandardSuperiorizer),
    Subgrad(SubgradSuperiorizer),
    Prox(ProxSuperiorizer),
}

impl TvSuperiorizer {
    pub fn standard(params: StandardSupParams) -> Self {
        Self::Standard(StandardSuperiorizer::new(params))
    }

    pub fn subgrad(params: SubgradSupParams) -> Self {
        Self::Subgrad(SubgradSuperiorizer { params })
    }

    pub fn prox(params: ProxSupParams) -> Self {
        Self::Prox(ProxSuperiorizer::new(params))
    }
}

impl Superiorizer for TvSuperiorizer {
    fn apply(&mut self, x_half: &Image, k: usize) -> Image {
        match self {
            Self::Standard(s) => s.step(x_half, k),
            Self::Subgrad(s) => subgrad_step(&s.params, x_half, k),
            Self::Prox(s) => {
                let (image, converged) = prox_step(&s.params, x_half, k);
                if !converged {
                    s.nonconverged += 1;
                }
                image
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_nonneg(n: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::from_values(n, (0..n * n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn standard_step_is_identity_on_constants_and_zero_steps() {
        let params = StandardSupParams::new(1.0, 0.95, 10).unwrap();
        let mut sup = StandardSuperiorizer::new(params);
        let constant = Image::constant(6, 0.4);
        assert_eq!(sup.step(&constant, 0), constant);

        let no_steps = StandardSupParams::new(1.0, 0.95, 0).unwrap();
        let mut sup0 = StandardSuperiorizer::new(no_steps);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_nonneg(6, &mut rng);
        assert_eq!(sup0.step(&x, 3), x);
    }

    #[test]
    fn standard_step_never_increases_tv_and_counts_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = StandardSupParams::new(1.0, 0.95, 10).unwrap();
        for k in 0..20 {
            let mut sup = StandardSuperiorizer::new(params);
            let x = random_nonneg(8, &mut rng);
            let ell_before = k as u64;
            let out = sup.step(&x, k);
            assert!(out.is_nonnegative());
            assert!(tv_value(&out) <= tv_value(&x) + 1e-12);
            // Every accepted step burns at least one trial.
            assert!(sup.ell() >= ell_before + 10, "ell {} at k {k}", sup.ell());
        }
    }

    #[test]
    fn standard_step_persistent_ell_carries_over() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = StandardSupParams::new(1.0, 0.95, 5)
            .unwrap()
            .with_ell_mode(EllMode::Persistent);
        let mut sup = StandardSuperiorizer::new(params);
        let x = random_nonneg(8, &mut rng);
        let _ = sup.step(&x, 0);
        let after_first = sup.ell();
        let _ = sup.step(&x, 1);
        assert!(sup.ell() >= after_first + 5);
    }

    #[test]
    fn subgrad_step_trivial_cases() {
        let params = SubgradSupParams::new(0.5, 1, 20).unwrap();
        let constant = Image::constant(6, 1.1);
        assert_eq!(subgrad_step(&params, &constant, 0), constant);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_nonneg(6, &mut rng);
        let tiny = SubgradSupParams::new(1e-300, 1, 20).unwrap();
        let out = subgrad_step(&tiny, &x, 0);
        for (a, e) in out.values().iter().zip(x.values()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn subgrad_step_matches_reference_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_nonneg(8, &mut rng);
        let params = SubgradSupParams::new(0.3, 2, 15).unwrap();
        let k = 4;
        let got = subgrad_step(&params, &x, k);

        // Independently coded reference loop.
        let gamma = 0.3 / ((k as f64 * 2.0) + 1.0_f64).powf(0.35);
        let mut y: Vec<f64> = x.values().to_vec();
        for i in 1..=15usize {
            let img = Image::from_values(8, y.clone()).unwrap();
            let t = tv_subgradient(&img);
            for j in 0..y.len() {
                y[j] -= gamma / i as f64 * t[j];
            }
        }
        let reference: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
        for (a, e) in got.values().iter().zip(&reference) {
            assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn prox_step_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_nonneg(6, &mut rng).map(|v| v - 0.2);
        let tiny = ProxSupParams::new(1e-12).unwrap();
        let (out, _) = prox_step(&tiny, &x, 0);
        for (a, e) in out.values().iter().zip(project_nonneg(&x).values()) {
            assert!((a - e).abs() < 1e-8);
        }

        let constant = Image::constant(6, 0.7);
        let params = ProxSupParams::new(0.4).unwrap();
        let (out, converged) = prox_step(&params, &constant, 2);
        assert!(converged);
        assert_eq!(out, constant);
    }

    #[test]
    fn prox_step_does_not_exceed_projected_tv() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = ProxSupParams::new(0.5).unwrap();
        for k in 0..10 {
            let x = random_nonneg(8, &mut rng).map(|v| v - 0.1);
            let (out, _) = prox_step(&params, &x, k);
            assert!(out.is_nonnegative());
            assert!(tv_value(&out) <= tv_value(&project_nonneg(&x)) + 1e-9);
        }
    }

    #[test]
    fn prox_schedule_decays_summably() {
        let params = ProxSupParams::new(0.15).unwrap();
        // Decay-exponent witness of summability: gamma_{2k} / gamma_k stays
        // at or below (1/2)^(1+eps), so the weights decay at least as fast
        // as a convergent power series.
        for k in [1usize, 10, 100, 10_000, 1_000_000] {
            let ratio = params.gamma(2 * k + 1) / params.gamma(k);
            assert!(ratio <= 0.5_f64.powf(1.0 + f64::EPSILON) + 1e-12);
        }
        assert!((params.gamma(0) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn displacement_norm_is_euclidean() {
        let a = Image::zeros(3);
        let mut b = Image::zeros(3);
        assert_eq!(displacement_norm(&a, &b), 0.0);
        b.values_mut()[0] = 1.0;
        assert_eq!(displacement_norm(&a, &b), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_nonneg(5, &mut rng);
        let y = random_nonneg(5, &mut rng);
        let direct: f64 = x
            .values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((displacement_norm(&x, &y) - direct).abs() < 1e-12);
    }

    #[test]
    fn gamma0_calibration_follows_the_ratio_formula() {
        let x0 = Image::constant(4, 1.0);
        let mut x_half = x0.clone();
        x_half.values_mut()[0] += 1.0; // solver displacement 1

        // Trial drift with controllable length: displacement = gamma.
        let linear_trial = |gamma: f64, x: &Image| {
            let mut out = x.clone();
            out.values_mut()[1] += gamma;
            out
        };

        // Trial step already at the target ratio: factor 1 is returned.
        let gamma0 = calibrate_gamma0_ratio(&x0, &x_half, |g, x| {
            let mut out = x.clone();
            out.values_mut()[1] += g * 1e-2;
            out
        })
        .unwrap();
        assert!((gamma0 - 1.0).abs() < 1e-12);

        // Trial displacement 10x too large: scaled down by 10.
        let gamma0 = calibrate_gamma0_ratio(&x0, &x_half, |g, x| {
            let mut out = x.clone();
            out.values_mut()[1] += g * 0.1;
            out
        })
        .unwrap();
        assert!((gamma0 - 0.1).abs() < 1e-12);

        // Re-running the linear step with the calibrated factor restores the
        // requested ratio.
        let gamma0 = calibrate_gamma0_ratio(&x0, &x_half, linear_trial).unwrap();
        let recheck = linear_trial(gamma0, &x_half);
        let ratio = x_half.distance(&recheck) / x0.distance(&x_half);
        assert!(ratio >= 0.5e-2 && ratio <= 2e-2, "ratio {ratio}");

        // Degenerate displacements are errors.
        assert!(calibrate_gamma0_ratio(&x0, &x0, linear_trial).is_err());
        assert!(calibrate_gamma0_ratio(&x0, &x_half, |_, x| x.clone()).is_err());
    }

    #[test]
    fn subgrad_calibration_hits_requested_ratio_on_real_instance() {
        // The subgradient step is linear in gamma while the perturbation is
        // small against the image scale (TV subgradients are 0-homogeneous),
        // so on a large-scale iterate the calibrated ratio lands inside
        // [0.5e-2, 2e-2].
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = random_nonneg(8, &mut rng).map(|v| 100.0 * (v + 0.5));
        let x_half = random_nonneg(8, &mut rng).map(|v| 100.0 * (v + 0.4));

        let trial = |gamma: f64, x: &Image| {
            let params = SubgradSupParams::new(gamma, 1, 50).unwrap();
            subgrad_step(&params, x, 0)
        };
        let gamma0 = calibrate_gamma0_ratio(&x0, &x_half, trial).unwrap();
        let redone = trial(gamma0, &x_half);
        let ratio = x_half.distance(&redone) / x0.distance(&x_half);
        assert!(ratio >= 0.5e-2 && ratio <= 2e-2, "ratio {ratio}");
    }
}
