//! Flat key-value experiment configuration.
//!
//! The file format is one `key = value` pair per line with `#` comments.
//! Unknown and duplicate keys are errors; missing keys fall back to
//! defaults where one exists. [`ExperimentConfig::canonical`] emits every
//! resolved key in a fixed order, and re-parsing that text reproduces the
//! config exactly.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Emission,
    Transmission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Em,
    Saem,
    Ssaem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuperiorizerChoice {
    None,
    Standard,
    Subgrad,
    Prox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMetric {
    /// Threshold compared against the raw objective value.
    Objective,
    /// Threshold compared against the Kullback-Leibler divergence of the
    /// counts (the objective shifted to vanish at a perfect fit), in count
    /// units. Emission only.
    KlDivergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingMode {
    /// Record wall-clock seconds.
    Wall,
    /// Write zeros in the time columns so campaign outputs are byte-stable.
    Zero,
}

/// A value that is either calibrated at run time or pinned in the config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AutoOrValue {
    Auto,
    Fixed(f64),
}

impl AutoOrValue {
    fn parse(key: &str, raw: &str) -> Result<Self> {
        if raw == "auto" {
            return Ok(Self::Auto);
        }
        raw.parse::<f64>()
            .map(Self::Fixed)
            .map_err(|_| Error::Config(format!("key `{key}`: expected a number or `auto`, got {raw:?}")))
    }

    fn canonical(&self) -> String {
        match self {
            Self::Auto => "auto".into(),
            Self::Fixed(v) => format!("{v}"),
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_side: usize,
    pub n_angles: usize,
    pub n_rays: usize,
    pub fov_radius: f64,
    pub model: Model,
    pub snr_db: f64,
    pub blank_level: f64,
    pub dark_level: f64,
    pub solver: SolverChoice,
    pub strings: usize,
    pub lambda0: AutoOrValue,
    pub tau: f64,
    pub superiorizer: SuperiorizerChoice,
    pub beta0: f64,
    pub alpha: f64,
    pub sup_n: usize,
    pub gamma0: AutoOrValue,
    pub ell_mode: EllModeChoice,
    pub prox_inner: usize,
    pub prox_tol: f64,
    pub stop_metric: StopMetric,
    /// Non-finite means "run to max_iters".
    pub stop_threshold: f64,
    pub max_iters: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub output_dir: String,
    pub timing: TimingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllModeChoice {
    Reset,
    Persistent,
}

const KNOWN_KEYS: &[&str] = &[
    "n_side",
    "n_angles",
    "n_rays",
    "fov_radius",
    "model",
    "snr_db",
    "blank_level",
    "dark_level",
    "solver",
    "strings",
    "lambda0",
    "tau",
    "superiorizer",
    "beta0",
    "alpha",
    "sup_n",
    "gamma0",
    "ell_mode",
    "prox_inner",
    "prox_tol",
    "stop_metric",
    "stop_threshold",
    "max_iters",
    "repetitions",
    "master_seed",
    "output_dir",
    "timing",
];

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut pairs: HashMap<String, String> = HashMap::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        if pairs.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate key `{key}`")));
        }
    }

    let mut get = |key: &str| pairs.remove(key);

    let n_side = required_usize(&mut get, "n_side")?;
    let n_angles = required_usize(&mut get, "n_angles")?;
    let n_rays = required_usize(&mut get, "n_rays")?;
    let fov_radius = optional_f64(&mut get, "fov_radius")?.unwrap_or(1.0);

    let model = match required(&mut get, "model")?.as_str() {
        "emission" => Model::Emission,
        "transmission" => Model::Transmission,
        other => {
            return Err(Error::Config(format!(
                "key `model`: expected emission|transmission, got {other:?}"
            )))
        }
    };
    let snr_db = optional_f64(&mut get, "snr_db")?.unwrap_or(18.0);
    let blank_level = optional_f64(&mut get, "blank_level")?.unwrap_or(10_000.0);
    let dark_level = optional_f64(&mut get, "dark_level")?.unwrap_or(10.0);

    let solver = match required(&mut get, "solver")?.as_str() {
        "em" => SolverChoice::Em,
        "saem" => SolverChoice::Saem,
        "ssaem" => SolverChoice::Ssaem,
        other => {
            return Err(Error::Config(format!(
                "key `solver`: expected em|saem|ssaem, got {other:?}"
            )))
        }
    };
    let strings = optional_usize(&mut get, "strings")?.unwrap_or(1);
    let lambda0 = match get("lambda0") {
        Some(raw) => AutoOrValue::parse("lambda0", &raw)?,
        None => AutoOrValue::Auto,
    };
    let tau = optional_f64(&mut get, "tau")?.unwrap_or(1e-14);

    let superiorizer = match get("superiorizer").as_deref() {
        None | Some("none") => SuperiorizerChoice::None,
        Some("standard") => SuperiorizerChoice::Standard,
        Some("subgrad") => SuperiorizerChoice::Subgrad,
        Some("prox") => SuperiorizerChoice::Prox,
        Some(other) => {
            return Err(Error::Config(format!(
                "key `superiorizer`: expected none|standard|subgrad|prox, got {other:?}"
            )))
        }
    };
    let beta0 = optional_f64(&mut get, "beta0")?.unwrap_or(1.0);
    let alpha = optional_f64(&mut get, "alpha")?.unwrap_or(0.95);
    let sup_n = match optional_usize(&mut get, "sup_n")? {
        Some(n) => n,
        None => match (superiorizer, solver) {
            (SuperiorizerChoice::Standard, SolverChoice::Em) => 10,
            (SuperiorizerChoice::Standard, _) => 20,
            (SuperiorizerChoice::Subgrad, _) => 50,
            _ => 0,
        },
    };
    let gamma0 = match get("gamma0") {
        Some(raw) => AutoOrValue::parse("gamma0", &raw)?,
        None => AutoOrValue::Auto,
    };
    let ell_mode = match get("ell_mode").as_deref() {
        None | Some("reset") => EllModeChoice::Reset,
        Some("persistent") => EllModeChoice::Persistent,
        Some(other) => {
            return Err(Error::Config(format!(
                "key `ell_mode`: expected reset|persistent, got {other:?}"
            )))
        }
    };
    let prox_inner = optional_usize(&mut get, "prox_inner")?.unwrap_or(100);
    let prox_tol = optional_f64(&mut get, "prox_tol")?.unwrap_or(1e-8);

    let stop_metric = match get("stop_metric").as_deref() {
        None | Some("objective") => StopMetric::Objective,
        Some("kl") => StopMetric::KlDivergence,
        Some(other) => {
            return Err(Error::Config(format!(
                "key `stop_metric`: expected objective|kl, got {other:?}"
            )))
        }
    };
    let stop_threshold = match get("stop_threshold").as_deref() {
        None | Some("none") => f64::INFINITY,
        Some(raw) => raw.parse::<f64>().map_err(|_| {
            Error::Config(format!(
                "key `stop_threshold`: expected a number or `none`, got {raw:?}"
            ))
        })?,
    };
    let max_iters = optional_usize(&mut get, "max_iters")?.unwrap_or(500);
    let repetitions = optional_usize(&mut get, "repetitions")?.unwrap_or(1);
    let master_seed = match get("master_seed") {
        Some(raw) => raw.parse::<u64>().map_err(|_| {
            Error::Config(format!("key `master_seed`: expected an unsigned integer, got {raw:?}"))
        })?,
        None => 0,
    };
    let output_dir = required(&mut get, "output_dir")?;
    let timing = match get("timing").as_deref() {
        None | Some("wall") => TimingMode::Wall,
        Some("zero") => TimingMode::Zero,
        Some(other) => {
            return Err(Error::Config(format!(
                "key `timing`: expected wall|zero, got {other:?}"
            )))
        }
    };

    let config = ExperimentConfig {
        n_side,
        n_angles,
        n_rays,
        fov_radius,
        model,
        snr_db,
        blank_level,
        dark_level,
        solver,
        strings,
        lambda0,
        tau,
        superiorizer,
        beta0,
        alpha,
        sup_n,
        gamma0,
        ell_mode,
        prox_inner,
        prox_tol,
        stop_metric,
        stop_threshold,
        max_iters,
        repetitions,
        master_seed,
        output_dir,
        timing,
    };
    config.validate()?;
    Ok(config)
}

fn required(
    get: &mut impl FnMut(&str) -> Option<String>,
    key: &'static str,
) -> Result<String> {
    get(key).ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
}

fn required_usize(
    get: &mut impl FnMut(&str) -> Option<String>,
    key: &'static str,
) -> Result<usize> {
    let raw = required(get, key)?;
    raw.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: expected a positive integer, got {raw:?}")))
}

fn optional_usize(
    get: &mut impl FnMut(&str) -> Option<String>,
    key: &'static str,
) -> Result<Option<usize>> {
    match get(key) {
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("key `{key}`: expected an integer, got {raw:?}"))),
        None => Ok(None),
    }
}

fn optional_f64(
    get: &mut impl FnMut(&str) -> Option<String>,
    key: &'static str,
) -> Result<Option<f64>> {
    match get(key) {
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("key `{key}`: expected a number, got {raw:?}"))),
        None => Ok(None),
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.n_side == 0 || self.n_angles == 0 || self.n_rays == 0 {
            return Err(Error::Config(
                "geometry keys n_side, n_angles, n_rays must be >= 1".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("key `repetitions` must be >= 1".into()));
        }
        if self.strings == 0 {
            return Err(Error::Config("key `strings` must be >= 1".into()));
        }
        if self.solver == SolverChoice::Em && self.model == Model::Transmission {
            return Err(Error::Config(
                "solver `em` applies to the emission model only".into(),
            ));
        }
        if self.stop_metric == StopMetric::KlDivergence && self.model == Model::Transmission {
            return Err(Error::Config(
                "stop_metric `kl` applies to the emission model only".into(),
            ));
        }
        if self.model == Model::Transmission && !(self.blank_level > 0.0) {
            return Err(Error::Config("key `blank_level` must be positive".into()));
        }
        if self.dark_level < 0.0 {
            return Err(Error::Config("key `dark_level` must be nonnegative".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("key `tau` must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text form: every resolved key in fixed order. Re-parsing
    /// the output reproduces this config.
    pub fn canonical(&self) -> String {
        let model = match self.model {
            Model::Emission => "emission",
            Model::Transmission => "transmission",
        };
        let solver = match self.solver {
            SolverChoice::Em => "em",
            SolverChoice::Saem => "saem",
            SolverChoice::Ssaem => "ssaem",
        };
        let superiorizer = match self.superiorizer {
            SuperiorizerChoice::None => "none",
            SuperiorizerChoice::Standard => "standard",
            SuperiorizerChoice::Subgrad => "subgrad",
            SuperiorizerChoice::Prox => "prox",
        };
        let ell_mode = match self.ell_mode {
            EllModeChoice::Reset => "reset",
            EllModeChoice::Persistent => "persistent",
        };
        let stop_metric = match self.stop_metric {
            StopMetric::Objective => "objective",
            StopMetric::KlDivergence => "kl",
        };
        let stop_threshold = if self.stop_threshold.is_finite() {
            format!("{}", self.stop_threshold)
        } else {
            "none".into()
        };
        let timing = match self.timing {
            TimingMode::Wall => "wall",
            TimingMode::Zero => "zero",
        };
        format!(
            "n_side = {}\n\
             n_angles = {}\n\
             n_rays = {}\n\
             fov_radius = {}\n\
             model = {}\n\
             snr_db = {}\n\
             blank_level = {}\n\
             dark_level = {}\n\
             solver = {}\n\
             strings = {}\n\
             lambda0 = {}\n\
             tau = {}\n\
             superiorizer = {}\n\
             beta0 = {}\n\
             alpha = {}\n\
             sup_n = {}\n\
             gamma0 = {}\n\
             ell_mode = {}\n\
             prox_inner = {}\n\
             prox_tol = {}\n\
             stop_metric = {}\n\
             stop_threshold = {}\n\
             max_iters = {}\n\
             repetitions = {}\n\
             master_seed = {}\n\
             output_dir = {}\n\
             timing = {}\n",
            self.n_side,
            self.n_angles,
            self.n_rays,
            self.fov_radius,
            model,
            self.snr_db,
            self.blank_level,
            self.dark_level,
            solver,
            self.strings,
            self.lambda0.canonical(),
            self.tau,
            superiorizer,
            self.beta0,
            self.alpha,
            self.sup_n,
            self.gamma0.canonical(),
            ell_mode,
            self.prox_inner,
            self.prox_tol,
            stop_metric,
            stop_threshold,
            self.max_iters,
            self.repetitions,
            self.master_seed,
            self.output_dir,
            timing,
        )
    }
}
