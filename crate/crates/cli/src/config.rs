//! Run configuration. A JSON file mirrors every command-line flag; flags win.

use std::fs;
use std::path::{Path, PathBuf};

use dgp_core::simstudy::{Method, SyntheticSpec};
use dgp_core::{McemConfig, Mode, TPrior};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Fit,
    Simstudy,
    Multisubject,
}

/// Which header tag defines the pools of a multi-subject run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupCol {
    #[default]
    Group,
    Condition,
    /// Group and condition together.
    Both,
    /// All subjects in one pool.
    None,
}

impl std::str::FromStr for GroupCol {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim() {
            "group" => Ok(GroupCol::Group),
            "condition" => Ok(GroupCol::Condition),
            "both" | "group,condition" => Ok(GroupCol::Both),
            "none" => Ok(GroupCol::None),
            other => Err(invalid("group_col", format!("`{other}` is not group|condition|both|none"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitFlags {
    pub draws: bool,
    pub hpd: bool,
    pub curves: bool,
    pub gmm: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self {
            draws: true,
            hpd: true,
            curves: true,
            gmm: true,
        }
    }
}

/// MCEM sizes and priors; everything except the `t` prior, mode and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub draws_per_iter: usize,
    pub subsample: usize,
    pub tol: f64,
    /// Inverse-gamma prior on `σ²`. When absent, `fit` and `simstudy` use
    /// `(0.5, 0.5)` and `multisubject` moment-matches it per pool.
    pub a_sigma: Option<f64>,
    pub b_sigma: Option<f64>,
    pub max_iter: usize,
    pub final_draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub common_random_numbers: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        let c = McemConfig::<f64>::new(TPrior::uniform(0.0, 1.0).unwrap(), Mode::Single, 0);
        Self {
            draws_per_iter: c.draws_per_iter,
            subsample: c.subsample,
            tol: c.tol,
            a_sigma: None,
            b_sigma: None,
            max_iter: c.max_iter,
            final_draws: c.final_draws,
            burn_in: c.burn_in,
            thin: c.thin,
            common_random_numbers: c.common_random_numbers,
        }
    }
}

impl SamplerSettings {
    /// Core config with the default `(0.5, 0.5)` noise prior filled in.
    pub fn mcem_config(&self, prior: TPrior<f64>, mode: Mode<f64>, seed: u64) -> McemConfig<f64> {
        let mut c = McemConfig::new(prior, mode, seed);
        c.draws_per_iter = self.draws_per_iter;
        c.subsample = self.subsample;
        c.tol = self.tol;
        if let Some(a) = self.a_sigma {
            c.a_sigma = a;
        }
        if let Some(b) = self.b_sigma {
            c.b_sigma = b;
        }
        c.max_iter = self.max_iter;
        c.final_draws = self.final_draws;
        c.burn_in = self.burn_in;
        c.thin = self.thin;
        c.common_random_numbers = self.common_random_numbers;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub data: Option<PathBuf>,
    /// Prior domain `[a, b]` of the stationary points; the data range when absent.
    pub interval: Option<[f64; 2]>,
    /// `uniform` or `beta:<α>,<β>`.
    pub prior: String,
    /// `single`, `multiple:<b0>,<b1>,...` or `oracle:<t1>,<t2>,...`.
    pub mode: String,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub group_col: GroupCol,
    /// HPD level is `1 − alpha`.
    pub alpha: f64,
    /// Points in the curve prediction grid.
    pub grid_len: usize,
    pub sampler: SamplerSettings,
    pub emit: EmitFlags,
    pub replicates: usize,
    pub n: usize,
    pub sigma: f64,
    pub methods: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = SyntheticSpec::<f64>::default();
        Self {
            task: Task::Fit,
            data: None,
            interval: None,
            prior: "uniform".into(),
            mode: "single".into(),
            out: None,
            seed: spec.seed,
            group_col: GroupCol::Group,
            alpha: 0.05,
            grid_len: spec.grid_len,
            sampler: SamplerSettings::default(),
            emit: EmitFlags::default(),
            replicates: spec.replicates,
            n: spec.n,
            sigma: spec.sigma,
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn out_dir(&self) -> Result<&Path, ConfigError> {
        self.out.as_deref().ok_or(ConfigError::Missing("out"))
    }

    pub fn data_path(&self) -> Result<&Path, ConfigError> {
        let p = self.data.as_deref().ok_or(ConfigError::Missing("data"))?;
        if !p.is_file() {
            return Err(invalid("data", format!("{} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Checks everything that does not need the data file.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.out_dir()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", "must lie in (0, 1)"));
        }
        if self.grid_len < 2 {
            return Err(invalid("grid_len", "need at least 2 points"));
        }
        match self.task {
            Task::Fit | Task::Multisubject => {
                self.data_path()?;
                parse_prior_kind(&self.prior)?;
                ModeSpec::parse(&self.mode)?;
                if let Some([a, b]) = self.interval {
                    if !(a < b) {
                        return Err(invalid("interval", format!("[{a}, {b}] is empty")));
                    }
                }
            }
            Task::Simstudy => {
                self.parsed_methods()?;
                self.synthetic_spec().validate().map_err(|e| invalid("simstudy", e.to_string()))?;
            }
        }
        let probe = self
            .sampler
            .mcem_config(TPrior::uniform(0.0, 1.0).unwrap(), Mode::Single, self.seed);
        probe.validate().map_err(|e| invalid("sampler", e.to_string()))
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>, ConfigError> {
        if self.methods.is_empty() {
            return Err(invalid("methods", "empty list"));
        }
        self.methods
            .iter()
            .map(|m| m.parse::<Method>().map_err(|e| invalid("methods", e.to_string())))
            .collect()
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec<f64> {
        SyntheticSpec {
            n: self.n,
            sigma: self.sigma,
            replicates: self.replicates,
            seed: self.seed,
            grid_len: self.grid_len,
            ..SyntheticSpec::default()
        }
    }

    /// Prior on `[a, b]`, which must lie inside the data range.
    pub fn t_prior(&self, data_range: (f64, f64)) -> Result<TPrior<f64>, ConfigError> {
        let [a, b] = self.interval.unwrap_or([data_range.0, data_range.1]);
        if a < data_range.0 || b > data_range.1 {
            return Err(invalid(
                "interval",
                format!("[{a}, {b}] is outside the data range [{}, {}]", data_range.0, data_range.1),
            ));
        }
        let prior = match parse_prior_kind(&self.prior)? {
            None => TPrior::uniform(a, b),
            Some((alpha, beta)) => TPrior::beta(a, b, alpha, beta),
        };
        prior.map_err(|e| invalid("prior", e.to_string()))
    }

    pub fn t_mode(&self, prior: &TPrior<f64>) -> Result<Mode<f64>, ConfigError> {
        let mode = ModeSpec::parse(&self.mode)?.into_mode();
        let probe = McemConfig::new(*prior, mode.clone(), 0);
        probe.validate().map_err(|e| invalid("mode", e.to_string()))?;
        Ok(mode)
    }
}

/// `None` for uniform, `Some((α, β))` for a scaled Beta.
fn parse_prior_kind(s: &str) -> Result<Option<(f64, f64)>, ConfigError> {
    let s = s.trim();
    if s == "uniform" {
        return Ok(None);
    }
    let Some(rest) = s.strip_prefix("beta:") else {
        return Err(invalid("prior", format!("`{s}` is not uniform or beta:<a>,<b>")));
    };
    let v = parse_list(rest).map_err(|r| invalid("prior", r))?;
    match v.as_slice() {
        [a, b] if *a > 0.0 && *b > 0.0 => Ok(Some((*a, *b))),
        _ => Err(invalid("prior", format!("`{s}` needs two positive shape parameters"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModeSpec {
    Single,
    /// Breakpoints `b0 < b1 < ...`; sub-interval `k` is `[b_k, b_{k+1}]`.
    Multiple(Vec<f64>),
    Oracle(Vec<f64>),
}

impl ModeSpec {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let s = s.trim();
        if s == "single" {
            return Ok(ModeSpec::Single);
        }
        if s == "gpr" || s == "oracle" || s == "oracle:" {
            return Ok(ModeSpec::Oracle(Vec::new()));
        }
        if let Some(rest) = s.strip_prefix("multiple:") {
            let b = parse_list(rest).map_err(|r| invalid("mode", r))?;
            if b.len() < 2 {
                return Err(invalid("mode", "multiple needs at least two breakpoints"));
            }
            if b.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(invalid("mode", "breakpoints must increase"));
            }
            return Ok(ModeSpec::Multiple(b));
        }
        if let Some(rest) = s.strip_prefix("oracle:") {
            let p = parse_list(rest).map_err(|r| invalid("mode", r))?;
            return Ok(ModeSpec::Oracle(p));
        }
        Err(invalid("mode", format!("`{s}` is not single, multiple:<breaks> or oracle:<points>")))
    }

    pub fn into_mode(self) -> Mode<f64> {
        match self {
            ModeSpec::Single => Mode::Single,
            ModeSpec::Multiple(b) => Mode::Multiple(b.windows(2).map(|w| (w[0], w[1])).collect()),
            ModeSpec::Oracle(p) => Mode::Oracle(p),
        }
    }
}

/// Comma-separated finite numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| {
            let p = p.trim();
            match p.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("`{p}` is not a finite number")),
            }
        })
        .collect()
}

/// `a,b` as an interval.
pub fn parse_interval(s: &str) -> Result<[f64; 2], String> {
    match parse_list(s)?.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(format!("`{s}` is not `a,b`")),
    }
}
