//! Experiment campaigns: repeated simulate-reconstruct-measure runs driven
//! by an [`ExperimentConfig`], with CSV artifacts for summaries and plots.
//!
//! Per run directory:
//!
//! * `config.txt` — the canonical config that produced the run.
//! * `rep_###_iterations.csv` — per-iteration telemetry, one file per
//!   repetition.
//! * `rep_###_final.{bin,csv}` — final reconstruction of each repetition.
//! * `summary.csv` — Table-style rows `kl, tv, mse, ssim, iterations,
//!   time_s` with mean and 99% confidence half-width over repetitions, plus
//!   a `failures` row.
//! * `err_vs_iter.csv`, `tv_vs_kl.csv` — per-repetition plot data.
//! * `curves_mean.csv` — per-iteration means across repetitions, the input
//!   of [`compare`].
//! * `failures.csv` — one row per failed repetition.
//!
//! Every repetition derives its seeds from the master seed through a
//! SplitMix64 step, so a campaign is reproducible end to end; with
//! `timing = zero` the artifacts are byte-identical across reruns.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{
    AutoOrValue, EllModeChoice, ExperimentConfig, Model, SolverChoice, StopMetric,
    SuperiorizerChoice, TimingMode,
};
use crate::error::{Error, Result};
use crate::image::{Image, Sinogram};
use crate::io;
use crate::likelihood::{EmissionObjective, Objective, TransmissionObjective};
use crate::metrics::{self, SsimParams, SummaryRow};
use crate::phantom::{shepp_logan, simulate_emission, simulate_transmission};
use crate::projection::{build_system_matrix, Geometry, SystemMatrix};
use crate::solvers::{
    calibrate_lambda0, em_step, make_strings, run, saem_step, ssaem_step, starting_image,
    DataTerms, IterationRecord, ScalingVector, StepSchedule, StoppingRule, StringPartition,
    Superiorizer,
};
use crate::superiorize::{
    calibrate_gamma0_ratio, prox_step, subgrad_step, EllMode, ProxSupParams, StandardSupParams,
    SubgradSupParams, TvSuperiorizer,
};

/// SplitMix64 mixing step.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of repetition `rep`: `splitmix64(master + (rep + 1) * golden)`,
/// the documented hash behind campaign reproducibility.
pub fn repetition_seed(master: u64, rep: u64) -> u64 {
    splitmix64(master.wrapping_add((rep + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Independent sub-seed for purpose `tag` within one repetition.
fn sub_seed(rep_seed: u64, tag: u64) -> u64 {
    splitmix64(rep_seed ^ tag.wrapping_mul(0xD134_2543_DE82_EF95))
}

const NOISE_TAG: u64 = 1;
const STRINGS_TAG: u64 = 2;
const SHUFFLE_TAG_BASE: u64 = 1_000;

/// Per-repetition end-of-run metrics in summary order.
#[derive(Debug, Clone, Copy)]
struct RepMetrics {
    kl: f64,
    tv: f64,
    mse: f64,
    ssim: f64,
    iterations: f64,
    time_s: f64,
}

impl RepMetrics {
    const NAMES: [&'static str; 6] = ["kl", "tv", "mse", "ssim", "iterations", "time_s"];

    fn to_vec(self) -> Vec<f64> {
        vec![
            self.kl,
            self.tv,
            self.mse,
            self.ssim,
            self.iterations,
            self.time_s,
        ]
    }
}

#[derive(Debug)]
struct RepOutput {
    records: Vec<IterationRecord>,
    final_image: Image,
    metrics: RepMetrics,
    /// Maps a recorded objective value onto the campaign's fit axis:
    /// `fit = fit_scale * (objective + fit_offset)`. For emission this is
    /// the count-scale KL divergence; transmission reports the objective
    /// as-is.
    fit_scale: f64,
    fit_offset: f64,
}

impl RepOutput {
    fn fit_axis(&self, objective: f64) -> f64 {
        self.fit_scale * (objective + self.fit_offset)
    }
}

/// Result of a campaign: where it wrote and which repetitions failed.
#[derive(Debug)]
pub struct CampaignOutcome {
    pub output_dir: PathBuf,
    pub failures: Vec<(usize, String)>,
}

impl CampaignOutcome {
    pub fn fully_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs the configured campaign and writes all artifacts under the config's
/// output directory. Solver failures are recorded per repetition; the
/// campaign continues and the summary marks them.
pub fn run_campaign(config: &ExperimentConfig) -> Result<CampaignOutcome> {
    let out_dir = PathBuf::from(&config.output_dir);
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.txt"), config.canonical())?;

    let geometry = Geometry::parallel(
        config.n_side,
        config.n_angles,
        config.n_rays,
        config.fov_radius,
    )?;
    let matrix = build_system_matrix(&geometry);
    let phantom = shepp_logan(config.n_side);

    let outputs: Vec<(usize, std::result::Result<RepOutput, String>)> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = repetition_seed(config.master_seed, rep as u64);
            let result = run_repetition(config, &matrix, &phantom, rep_seed)
                .map_err(|e| e.to_string());
            (rep, result)
        })
        .collect();

    let mut failures = Vec::new();
    let mut metric_rows: Vec<Vec<f64>> = Vec::new();
    let mut successes: Vec<RepOutput> = Vec::new();

    for (rep, result) in outputs {
        match result {
            Ok(mut output) => {
                if config.timing == TimingMode::Zero {
                    for r in &mut output.records {
                        r.time_s = 0.0;
                    }
                    output.metrics.time_s = 0.0;
                }
                crate::solvers::write_records_csv(
                    &out_dir.join(format!("rep_{rep:03}_iterations.csv")),
                    &output.records,
                )?;
                io::write_image_binary(
                    &out_dir.join(format!("rep_{rep:03}_final.bin")),
                    &output.final_image,
                )?;
                io::write_image_csv(
                    &out_dir.join(format!("rep_{rep:03}_final.csv")),
                    &output.final_image,
                )?;
                metric_rows.push(output.metrics.to_vec());
                successes.push(output);
            }
            Err(message) => failures.push((rep, message)),
        }
    }

    write_failures_csv(&out_dir.join("failures.csv"), &failures)?;
    write_summary(&out_dir.join("summary.csv"), &metric_rows, failures.len())?;
    write_err_vs_iter(&out_dir.join("err_vs_iter.csv"), &successes)?;
    write_tv_vs_kl(&out_dir.join("tv_vs_kl.csv"), &successes)?;
    write_mean_curves(&out_dir.join("curves_mean.csv"), &successes)?;

    Ok(CampaignOutcome {
        output_dir: out_dir,
        failures,
    })
}

fn run_repetition(
    config: &ExperimentConfig,
    matrix: &SystemMatrix,
    phantom: &Image,
    rep_seed: u64,
) -> Result<RepOutput> {
    match config.model {
        Model::Emission => run_emission_repetition(config, matrix, phantom, rep_seed),
        Model::Transmission => run_transmission_repetition(config, matrix, phantom, rep_seed),
    }
}

fn xlnx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

fn is_negativity(error: &Error) -> bool {
    matches!(
        error,
        Error::MidStringNegativity { .. } | Error::CorrectedIterateNegative { .. }
    )
}

/// Runs `attempt(lambda0)`, recalibrating (halving) the stepsize on
/// negativity failures. A config-pinned stepsize is honored as-is: its
/// failures surface to the caller.
fn with_stepsize_retry<T>(
    configured: AutoOrValue,
    calibrate: impl FnOnce() -> Result<f64>,
    mut attempt: impl FnMut(f64) -> Result<T>,
) -> Result<T> {
    let calibrated = match configured {
        AutoOrValue::Fixed(v) => return attempt(v),
        AutoOrValue::Auto => calibrate()?,
    };
    let mut lambda0 = calibrated;
    for _ in 0..8 {
        match attempt(lambda0) {
            Err(ref e) if is_negativity(e) => lambda0 /= 2.0,
            other => return other,
        }
    }
    attempt(lambda0)
}

fn run_emission_repetition(
    config: &ExperimentConfig,
    matrix: &SystemMatrix,
    phantom: &Image,
    rep_seed: u64,
) -> Result<RepOutput> {
    let data = simulate_emission(
        matrix,
        phantom,
        config.snr_db,
        sub_seed(rep_seed, NOISE_TAG),
    )?;
    // Reconstruct in the units of the forward projection: rescaled counts
    // keep the iterates on the phantom's scale, so image-domain metrics and
    // the superiorization weights need no further conversion.
    let scale = data.scale;
    let sino = Sinogram::from_values(data.counts.values().iter().map(|v| v / scale).collect());
    let objective = EmissionObjective::new(matrix, sino.clone())?;
    let scaling = ScalingVector::emission_default(matrix)?;
    let x0 = starting_image(matrix, &sino)?;

    // Constant shift between the objective and the count-scale KL
    // divergence: KL = scale * (f(x) + shift).
    let kl_shift: f64 = sino.values().iter().map(|&d| xlnx(d) - d).sum();
    let stopping = match config.stop_metric {
        StopMetric::Objective => StoppingRule::objective_below(config.stop_threshold),
        StopMetric::KlDivergence => {
            StoppingRule::objective_below(config.stop_threshold / scale - kl_shift)
        }
    };

    let m = matrix.rows();
    let terms = DataTerms::per_row(m);
    let weights = vec![1.0 / config.strings as f64; config.strings];
    let result = match config.solver {
        SolverChoice::Em => {
            let schedule = StepSchedule::constant(1.0)?;
            let step = |x: &Image, _l: f64, _k: usize| em_step(x, &objective, &scaling);
            let mut sup = resolve_superiorizer(config, &x0, |x| em_step(x, &objective, &scaling))?;
            run(
                &objective,
                x0.clone(),
                Some(phantom),
                &schedule,
                config.max_iters,
                &stopping,
                step,
                sup.as_mut().map(|s| s as &mut dyn Superiorizer),
            )?
        }
        SolverChoice::Saem => {
            let partition = make_strings(m, config.strings, sub_seed(rep_seed, STRINGS_TAG))?;
            with_stepsize_retry(
                config.lambda0,
                || {
                    calibrate_lambda0(|l| {
                        strictly_positive(saem_step(
                            &x0, &objective, &terms, &partition, &weights, &scaling, l,
                        ))
                    })
                },
                |lambda0| {
                    let schedule = StepSchedule::saem(lambda0, config.strings)?;
                    let mut sup = resolve_superiorizer(config, &x0, |x| {
                        saem_step(x, &objective, &terms, &partition, &weights, &scaling, lambda0)
                    })?;
                    run(
                        &objective,
                        x0.clone(),
                        Some(phantom),
                        &schedule,
                        config.max_iters,
                        &stopping,
                        |x, l, _k| {
                            saem_step(x, &objective, &terms, &partition, &weights, &scaling, l)
                        },
                        sup.as_mut().map(|s| s as &mut dyn Superiorizer),
                    )
                },
            )?
        }
        SolverChoice::Ssaem => {
            let partition = make_strings(m, config.strings, sub_seed(rep_seed, STRINGS_TAG))?;
            let tau = config.tau;
            // Calibrate against the subset order the first iteration will
            // actually use.
            let first_order =
                partition.shuffle_each_string(sub_seed(rep_seed, SHUFFLE_TAG_BASE));
            with_stepsize_retry(
                config.lambda0,
                || {
                    calibrate_lambda0(|l| {
                        strictly_positive(ssaem_step(
                            &x0, &objective, &terms, &first_order, &weights, &scaling, tau, l,
                        ))
                    })
                },
                |lambda0| {
                    let schedule = StepSchedule::ssaem(lambda0, config.strings)?;
                    let mut sup = resolve_superiorizer(config, &x0, |x| {
                        ssaem_step(
                            x, &objective, &terms, &first_order, &weights, &scaling, tau,
                            lambda0,
                        )
                    })?;
                    run(
                        &objective,
                        x0.clone(),
                        Some(phantom),
                        &schedule,
                        config.max_iters,
                        &stopping,
                        |x, l, k| {
                            let shuffled = partition.shuffle_each_string(sub_seed(
                                rep_seed,
                                SHUFFLE_TAG_BASE + k as u64,
                            ));
                            ssaem_step(
                                x, &objective, &terms, &shuffled, &weights, &scaling, tau, l,
                            )
                        },
                        sup.as_mut().map(|s| s as &mut dyn Superiorizer),
                    )
                },
            )?
        }
    };

    let final_image = result.image;
    let ssim_params = SsimParams::for_reference(phantom)?;
    let metrics = RepMetrics {
        kl: scale * (objective.value(&final_image) + kl_shift),
        tv: metrics::tv_of(&final_image),
        mse: metrics::mse(&final_image, phantom)?,
        ssim: metrics::ssim(&final_image, phantom, &ssim_params)?,
        iterations: result.records.len() as f64,
        time_s: result.records.last().map_or(0.0, |r| r.time_s),
    };
    Ok(RepOutput {
        records: result.records,
        final_image,
        metrics,
        fit_scale: scale,
        fit_offset: kl_shift,
    })
}

fn run_transmission_repetition(
    config: &ExperimentConfig,
    matrix: &SystemMatrix,
    phantom: &Image,
    rep_seed: u64,
) -> Result<RepOutput> {
    let counts = simulate_transmission(
        matrix,
        phantom,
        config.blank_level,
        config.dark_level,
        sub_seed(rep_seed, NOISE_TAG),
    )?;
    let scaling =
        ScalingVector::transmission_default(matrix, counts.alpha(), counts.rho())?;

    // Beer-Lambert inversion of the counts gives a pseudo line-integral
    // sinogram for the uniform starting level.
    let pseudo = Sinogram::from_values(
        counts
            .alpha()
            .iter()
            .zip(counts.rho())
            .map(|(&a, &r)| (config.blank_level / (a - r).max(1.0)).ln().max(0.0))
            .collect(),
    );
    let x0 = starting_image(matrix, &pseudo)?;

    let objective = TransmissionObjective::new(matrix, counts)?;
    let stopping = match config.stop_metric {
        StopMetric::Objective => StoppingRule::objective_below(config.stop_threshold),
        StopMetric::KlDivergence => unreachable!("rejected at config validation"),
    };

    let subsets = config.strings;
    let terms = DataTerms::view_blocks(matrix.geometry(), subsets)?;
    // One string holding all subsets, processed in a per-iteration shuffle.
    let partition = StringPartition::from_strings(vec![(0..subsets).collect()]);
    let weights = vec![1.0];
    let tau = config.tau;

    let result = match config.solver {
        SolverChoice::Em => unreachable!("rejected at config validation"),
        SolverChoice::Saem => with_stepsize_retry(
            config.lambda0,
            || {
                calibrate_lambda0(|l| {
                    strictly_positive(saem_step(
                        &x0, &objective, &terms, &partition, &weights, &scaling, l,
                    ))
                })
            },
            |lambda0| {
                let schedule = StepSchedule::saem(lambda0, subsets)?;
                let mut sup = resolve_superiorizer(config, &x0, |x| {
                    saem_step(x, &objective, &terms, &partition, &weights, &scaling, lambda0)
                })?;
                run(
                    &objective,
                    x0.clone(),
                    Some(phantom),
                    &schedule,
                    config.max_iters,
                    &stopping,
                    |x, l, _k| {
                        saem_step(x, &objective, &terms, &partition, &weights, &scaling, l)
                    },
                    sup.as_mut().map(|s| s as &mut dyn Superiorizer),
                )
            },
        )?,
        SolverChoice::Ssaem => {
            let first_order =
                partition.shuffle_each_string(sub_seed(rep_seed, SHUFFLE_TAG_BASE));
            with_stepsize_retry(
                config.lambda0,
                || {
                    calibrate_lambda0(|l| {
                        strictly_positive(ssaem_step(
                            &x0, &objective, &terms, &first_order, &weights, &scaling, tau, l,
                        ))
                    })
                },
                |lambda0| {
                    let schedule = StepSchedule::ssaem(lambda0, subsets)?;
                    let mut sup = resolve_superiorizer(config, &x0, |x| {
                        ssaem_step(
                            x, &objective, &terms, &first_order, &weights, &scaling, tau,
                            lambda0,
                        )
                    })?;
                    run(
                        &objective,
                        x0.clone(),
                        Some(phantom),
                        &schedule,
                        config.max_iters,
                        &stopping,
                        |x, l, k| {
                            let shuffled = partition.shuffle_each_string(sub_seed(
                                rep_seed,
                                SHUFFLE_TAG_BASE + k as u64,
                            ));
                            ssaem_step(
                                x, &objective, &terms, &shuffled, &weights, &scaling, tau, l,
                            )
                        },
                        sup.as_mut().map(|s| s as &mut dyn Superiorizer),
                    )
                },
            )?
        }
    };

    let final_image = result.image;
    let ssim_params = SsimParams::for_reference(phantom)?;
    let metrics = RepMetrics {
        kl: objective.value(&final_image),
        tv: metrics::tv_of(&final_image),
        mse: metrics::mse(&final_image, phantom)?,
        ssim: metrics::ssim(&final_image, phantom, &ssim_params)?,
        iterations: result.records.len() as f64,
        time_s: result.records.last().map_or(0.0, |r| r.time_s),
    };
    Ok(RepOutput {
        records: result.records,
        final_image,
        metrics,
        fit_scale: 1.0,
        fit_offset: 0.0,
    })
}

fn strictly_positive(step: Result<Image>) -> bool {
    step.map(|img| img.values().iter().all(|&v| v > 0.0))
        .unwrap_or(false)
}

/// Builds the configured superiorizer, auto-calibrating its weight from one
/// solver step when requested.
fn resolve_superiorizer(
    config: &ExperimentConfig,
    x0: &Image,
    mut one_step: impl FnMut(&Image) -> Result<Image>,
) -> Result<Option<TvSuperiorizer>> {
    let ell_mode = match config.ell_mode {
        EllModeChoice::Reset => EllMode::ResetToIteration,
        EllModeChoice::Persistent => EllMode::Persistent,
    };
    match config.superiorizer {
        SuperiorizerChoice::None => Ok(None),
        SuperiorizerChoice::Standard => {
            let params = StandardSupParams::new(config.beta0, config.alpha, config.sup_n)?
                .with_ell_mode(ell_mode);
            Ok(Some(TvSuperiorizer::standard(params)))
        }
        SuperiorizerChoice::Subgrad => {
            let gamma0 = match config.gamma0 {
                AutoOrValue::Fixed(v) => v,
                AutoOrValue::Auto => {
                    let x_half = one_step(x0)?;
                    calibrate_gamma0_ratio(x0, &x_half, |g, x| {
                        let params = SubgradSupParams::new(g, config.strings, config.sup_n)
                            .expect("positive trial gamma");
                        subgrad_step(&params, x, 0)
                    })?
                }
            };
            let params = SubgradSupParams::new(gamma0, config.strings, config.sup_n)?;
            Ok(Some(TvSuperiorizer::subgrad(params)))
        }
        SuperiorizerChoice::Prox => {
            let gamma0 = match config.gamma0 {
                AutoOrValue::Fixed(v) => v,
                AutoOrValue::Auto => {
                    let x_half = one_step(x0)?;
                    calibrate_gamma0_ratio(x0, &x_half, |g, x| {
                        let params = ProxSupParams {
                            gamma0: g,
                            max_inner_iters: config.prox_inner,
                            dual_tolerance: config.prox_tol,
                        };
                        prox_step(&params, x, 0).0
                    })?
                }
            };
            let params = ProxSupParams {
                gamma0,
                max_inner_iters: config.prox_inner,
                dual_tolerance: config.prox_tol,
            };
            Ok(Some(TvSuperiorizer::prox(params)))
        }
    }
}

fn write_failures_csv(path: &Path, failures: &[(usize, String)]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "rep,error")?;
    for (rep, message) in failures {
        writeln!(w, "{rep},{:?}", message)?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(path: &Path, metric_rows: &[Vec<f64>], failures: usize) -> Result<()> {
    let mut rows: Vec<SummaryRow> = if metric_rows.len() >= 2 {
        metrics::summarize(&RepMetrics::NAMES, metric_rows)?
    } else if metric_rows.len() == 1 {
        RepMetrics::NAMES
            .iter()
            .zip(&metric_rows[0])
            .map(|(name, &v)| SummaryRow {
                metric: name.to_string(),
                mean: v,
                ci99: f64::NAN,
            })
            .collect()
    } else {
        Vec::new()
    };
    rows.push(SummaryRow {
        metric: "failures".into(),
        mean: failures as f64,
        ci99: 0.0,
    });
    metrics::write_summary_csv(path, &rows)
}

fn write_err_vs_iter(path: &Path, outputs: &[RepOutput]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    write!(w, "k")?;
    for rep in 0..outputs.len() {
        write!(w, ",rep_{rep}")?;
    }
    writeln!(w)?;
    let max_len = outputs.iter().map(|o| o.records.len()).max().unwrap_or(0);
    for row in 0..max_len {
        write!(w, "{}", row + 1)?;
        for output in outputs {
            match output.records.get(row) {
                Some(r) => write!(w, ",{}", r.err)?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn write_tv_vs_kl(path: &Path, outputs: &[RepOutput]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    let mut header = Vec::new();
    for rep in 0..outputs.len() {
        header.push(format!("kl_rep_{rep}"));
        header.push(format!("tv_rep_{rep}"));
    }
    writeln!(w, "{}", header.join(","))?;
    let max_len = outputs.iter().map(|o| o.records.len()).max().unwrap_or(0);
    for row in 0..max_len {
        let mut cells = Vec::new();
        for output in outputs {
            match output.records.get(row) {
                Some(r) => {
                    cells.push(format!("{}", output.fit_axis(r.objective)));
                    cells.push(format!("{}", r.tv));
                }
                None => {
                    cells.push(String::new());
                    cells.push(String::new());
                }
            }
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_mean_curves(path: &Path, outputs: &[RepOutput]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "k,err,kl,tv")?;
    let max_len = outputs.iter().map(|o| o.records.len()).max().unwrap_or(0);
    for row in 0..max_len {
        let alive: Vec<(f64, f64, f64)> = outputs
            .iter()
            .filter_map(|o| {
                o.records
                    .get(row)
                    .map(|r| (r.err, o.fit_axis(r.objective), r.tv))
            })
            .collect();
        if alive.is_empty() {
            break;
        }
        let count = alive.len() as f64;
        let err = alive.iter().map(|r| r.0).sum::<f64>() / count;
        let kl = alive.iter().map(|r| r.1).sum::<f64>() / count;
        let tv = alive.iter().map(|r| r.2).sum::<f64>() / count;
        writeln!(w, "{},{err},{kl},{tv}", row + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Merges the mean curves of several completed runs into one multi-series
/// CSV keyed by iteration. Series from runs that stopped earlier are padded
/// with empty cells. Runs must share their acquisition geometry.
pub fn compare(run_dirs: &[PathBuf], out_path: &Path) -> Result<()> {
    if run_dirs.len() < 2 {
        return Err(Error::Campaign(
            "compare needs at least two completed run directories".into(),
        ));
    }

    let mut geometries = Vec::new();
    let mut series = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for dir in run_dirs {
        let config = crate::config::parse_config(&dir.join("config.txt"))
            .map_err(|e| Error::Campaign(format!("{}: {e}", dir.display())))?;
        geometries.push((config.n_side, config.n_angles, config.n_rays, config.fov_radius));
        series.push(read_mean_curves(&dir.join("curves_mean.csv"))?);

        let base = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let mut name = base.clone();
        let mut suffix = 2;
        while names.contains(&name) {
            name = format!("{base}_{suffix}");
            suffix += 1;
        }
        names.push(name);
    }
    if geometries.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Campaign(
            "run directories use different acquisition geometries".into(),
        ));
    }

    let mut w = std::io::BufWriter::new(fs::File::create(out_path)?);
    let mut header = vec!["k".to_string()];
    for name in &names {
        header.push(format!("{name}_err"));
        header.push(format!("{name}_kl"));
        header.push(format!("{name}_tv"));
    }
    writeln!(w, "{}", header.join(","))?;

    let max_len = series.iter().map(|s| s.len()).max().unwrap_or(0);
    for row in 0..max_len {
        let mut cells = vec![format!("{}", row + 1)];
        for s in &series {
            match s.get(row) {
                Some(&(err, kl, tv)) => {
                    cells.push(format!("{err}"));
                    cells.push(format!("{kl}"));
                    cells.push(format!("{tv}"));
                }
                None => cells.extend([String::new(), String::new(), String::new()]),
            }
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads (err, kl, tv) per iteration from a run's `curves_mean.csv`.
pub fn read_mean_curves(path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty curves file".into()))?;
    if header != "k,err,kl,tv" {
        return Err(Error::Format(format!("unexpected curves header {header:?}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(Error::Format(format!("bad curves row {line:?}")));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number {s:?}")))
        };
        rows.push((parse(cells[1])?, parse(cells[2])?, parse(cells[3])?));
    }
    Ok(rows)
}
