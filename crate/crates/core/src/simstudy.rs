//! Synthetic benchmark with a known curve and two known stationary points.
//!
//! Each replicate draws a fresh data set, fits every requested method and
//! records the fitted curve on a shared test grid together with the
//! stationary-point estimates; [`run_replicates`] aggregates them into an
//! [`RmseReport`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DgpError, Result};
use crate::mcem::{run_mcem, Dataset, McemConfig, Mode, PosteriorDraws, TPrior};
use crate::scalar::Real;
use crate::summarize::{curve_bands, hpd, kde, HpdRegion};

/// Locations where [`f_true_deriv`] vanishes on `[0, 2]`, to three decimals.
pub const TRUE_STATIONARY: [f64; 2] = [0.436, 1.459];

/// Sub-intervals used to match estimates to the true stationary points.
pub const MATCH_INTERVALS: [(f64, f64); 2] = [(0.0, 1.0), (1.0, 2.0)];

pub fn f_true<T: Real>(x: T) -> T {
    T::lit(0.3) + T::lit(0.4) * x + T::lit(0.5) * (T::lit(3.2) * x).sin() + T::lit(1.1) / (T::one() + x * x)
}

pub fn f_true_deriv<T: Real>(x: T) -> T {
    let q = T::one() + x * x;
    T::lit(0.4) + T::lit(1.6) * (T::lit(3.2) * x).cos() - T::lit(2.2) * x / (q * q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SyntheticSpec<T: Real> {
    pub n: usize,
    pub sigma: T,
    pub domain: (T, T),
    pub replicates: usize,
    pub seed: u64,
    pub grid_len: usize,
}

impl<T: Real> Default for SyntheticSpec<T> {
    fn default() -> Self {
        Self {
            n: 50,
            sigma: T::lit(0.25),
            domain: (T::zero(), T::lit(2.0)),
            replicates: 100,
            seed: 20_240_601,
            grid_len: 100,
        }
    }
}

impl<T: Real> SyntheticSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(DgpError::InvalidParameter(format!("n must be at least 3, got {}", self.n)));
        }
        if !(self.sigma > T::zero()) || !self.sigma.is_finite() {
            return Err(DgpError::InvalidParameter("sigma must be positive".into()));
        }
        if !(self.domain.0 < self.domain.1) {
            return Err(DgpError::InvalidParameter("domain must satisfy a < b".into()));
        }
        if self.grid_len < 2 {
            return Err(DgpError::InvalidParameter("test grid needs at least 2 points".into()));
        }
        Ok(())
    }

    /// Equispaced test grid including both domain ends.
    pub fn test_grid(&self) -> Vec<T> {
        let (a, b) = self.domain;
        let step = (b - a) / T::lit((self.grid_len - 1) as f64);
        (0..self.grid_len).map(|i| a + step * T::lit(i as f64)).collect()
    }
}

/// Replicate `index`: sorted uniform inputs and `f_true` plus Gaussian noise.
pub fn generate_dataset<T: Real>(spec: &SyntheticSpec<T>, index: usize) -> Result<Dataset<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (a, b) = spec.domain;
    let mut x: Vec<T> = (0..spec.n).map(|_| a + (b - a) * T::sample_unit(&mut rng)).collect();
    x.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let y = x
        .iter()
        .map(|&v| f_true(v) + spec.sigma * T::sample_standard_normal(&mut rng))
        .collect();
    Dataset::new(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gpr,
    Single,
    Multiple,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gpr, Method::Single, Method::Multiple, Method::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gpr => "gpr",
            Method::Single => "single",
            Method::Multiple => "multiple",
            Method::Oracle => "oracle",
        }
    }

    pub fn mode<T: Real>(self) -> Mode<T> {
        match self {
            Method::Gpr => Mode::gpr(),
            Method::Single => Mode::Single,
            Method::Multiple => Mode::Multiple(MATCH_INTERVALS.iter().map(|&(l, u)| (T::lit(l), T::lit(u))).collect()),
            Method::Oracle => Mode::Oracle(TRUE_STATIONARY.iter().map(|&t| T::lit(t)).collect()),
        }
    }

    fn id(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = DgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gpr" => Ok(Method::Gpr),
            "single" | "single_dgp" => Ok(Method::Single),
            "multiple" | "multiple_dgp" => Ok(Method::Multiple),
            "oracle" | "oracle_dgp" => Ok(Method::Oracle),
            other => Err(DgpError::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

/// One method fitted to one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MethodFit<T: Real> {
    pub method: Method,
    pub fitted: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub tau0: T,
    pub h: T,
    pub iterations: usize,
    pub converged: bool,
    pub last_step: T,
    pub accept_rate: f64,
    /// Estimates matched to the first and second true stationary point.
    pub t_hat: [Option<T>; 2],
    /// HPD segment count on the whole domain (single mode only).
    pub m_hat: Option<usize>,
    /// HPD segments (single mode) or one highest-density segment per coordinate (multiple mode).
    pub segments: Vec<(T, T)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ReplicateResult<T: Real> {
    pub index: usize,
    pub fits: Vec<MethodFit<T>>,
    /// Methods that failed, with the error text.
    pub failures: Vec<(Method, String)>,
}

/// Options shared by every replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SimOptions<T: Real> {
    pub spec: SyntheticSpec<T>,
    pub methods: Vec<Method>,
    /// Sampler settings; prior, mode and seed are filled in per fit.
    pub mcem: McemConfig<T>,
    pub alpha: T,
}

impl<T: Real> SimOptions<T> {
    pub fn new(spec: SyntheticSpec<T>, methods: Vec<Method>) -> Result<Self> {
        let prior = TPrior::uniform(spec.domain.0, spec.domain.1)?;
        let mcem = McemConfig::new(prior, Mode::Single, spec.seed);
        Ok(Self {
            spec,
            methods,
            mcem,
            alpha: T::lit(0.05),
        })
    }

    fn fit_config(&self, method: Method, index: usize) -> Result<McemConfig<T>> {
        let mut c = self.mcem.clone();
        c.t_prior = TPrior::uniform(self.spec.domain.0, self.spec.domain.1)?;
        c.mode = method.mode();
        c.seed = fit_seed(self.spec.seed, index, method);
        Ok(c)
    }
}

fn fit_seed(seed: u64, index: usize, method: Method) -> u64 {
    // splitmix64 finalizer over (seed, index, method).
    let mut z = seed ^ ((index as u64) << 8 | method.id()).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits every method in `opts` to replicate `index`.
pub fn run_replicate<T: Real>(opts: &SimOptions<T>, index: usize) -> Result<ReplicateResult<T>> {
    let data = generate_dataset(&opts.spec, index)?;
    let grid = opts.spec.test_grid();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for &method in &opts.methods {
        match fit_method(opts, method, index, &data, &grid) {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((method, e.to_string())),
        }
    }
    Ok(ReplicateResult { index, fits, failures })
}

fn fit_method<T: Real>(
    opts: &SimOptions<T>,
    method: Method,
    index: usize,
    data: &Dataset<T>,
    grid: &[T],
) -> Result<MethodFit<T>> {
    let config = opts.fit_config(method, index)?;
    let (draws, state) = run_mcem(&config, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    let curve = curve_bands(&draws, &data.x, &data.y, grid, &mut rng)?;
    let (t_hat, m_hat, segments) = stationary_estimates(method, &draws, opts)?;
    Ok(MethodFit {
        method,
        fitted: curve.mean,
        lower: curve.lower,
        upper: curve.upper,
        tau0: state.theta_hat.tau0,
        h: state.theta_hat.h,
        iterations: state.iteration,
        converged: state.converged,
        last_step: state.last_step,
        accept_rate: state.accept_rate,
        t_hat,
        m_hat,
        segments,
    })
}

type Estimates<T> = ([Option<T>; 2], Option<usize>, Vec<(T, T)>);

fn stationary_estimates<T: Real>(method: Method, draws: &PosteriorDraws<T>, opts: &SimOptions<T>) -> Result<Estimates<T>> {
    let (a, b) = opts.spec.domain;
    match method {
        Method::Gpr | Method::Oracle => Ok(([None, None], None, Vec::new())),
        Method::Single => {
            let t = draws.coordinate(0);
            let dens = kde(&t, a, b)?;
            let region = hpd(&dens, &t, opts.alpha)?;
            Ok((match_modes(&region, &dens), Some(region.count()), region.segments))
        }
        Method::Multiple => {
            let mut t_hat = [None, None];
            let mut segments = Vec::new();
            for (k, &(lo, hi)) in MATCH_INTERVALS.iter().enumerate().take(draws.dim) {
                let t = draws.coordinate(k);
                let dens = kde(&t, T::lit(lo), T::lit(hi))?;
                let region = hpd(&dens, &t, opts.alpha)?;
                if let Some(best) = best_segment(&region, &dens) {
                    t_hat[k] = Some(region.modes[best]);
                    segments.push(region.segments[best]);
                }
            }
            Ok((t_hat, None, segments))
        }
    }
}

fn best_segment<T: Real>(region: &HpdRegion<T>, dens: &crate::summarize::DensityGrid<T>) -> Option<usize> {
    (0..region.modes.len()).max_by(|&i, &j| {
        let di = dens.density[dens.cell(region.modes[i])];
        let dj = dens.density[dens.cell(region.modes[j])];
        di.partial_cmp(&dj).unwrap()
    })
}

/// Assigns the highest-density mode inside each matching sub-interval.
fn match_modes<T: Real>(region: &HpdRegion<T>, dens: &crate::summarize::DensityGrid<T>) -> [Option<T>; 2] {
    let mut out = [None, None];
    for (k, &(lo, hi)) in MATCH_INTERVALS.iter().enumerate() {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let mut best: Option<(T, T)> = None;
        for &m in &region.modes {
            let inside = if k == 0 { m >= lo && m < hi } else { m >= lo && m <= hi };
            if !inside {
                continue;
            }
            let d = dens.density[dens.cell(m)];
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, m));
            }
        }
        out[k] = best.map(|(_, m)| m);
    }
    out
}

/// `√(mean_l (truth − estimate_l)²)` at every grid point.
pub fn rmse_curve<T: Real>(truth: &[T], estimates: &[Vec<T>]) -> Vec<T> {
    let r = T::lit(estimates.len() as f64);
    (0..truth.len())
        .map(|i| {
            let ss: T = estimates.iter().map(|e| (truth[i] - e[i]) * (truth[i] - e[i])).sum();
            (ss / r).sqrt()
        })
        .collect()
}

/// Linear interpolation of `values` tabulated on the increasing `grid`.
pub fn interpolate<T: Real>(grid: &[T], values: &[T], at: T) -> T {
    let k = grid.partition_point(|&g| g <= at).clamp(1, grid.len() - 1);
    let (x0, x1) = (grid[k - 1], grid[k]);
    let w = ((at - x0) / (x1 - x0)).max(T::zero()).min(T::one());
    values[k - 1] + w * (values[k] - values[k - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MethodSummary<T: Real> {
    pub method: Method,
    pub fitted_replicates: usize,
    pub failed_replicates: usize,
    pub rmse_curve: Vec<T>,
    pub mean_rmse: T,
    /// Pointwise band width averaged over replicates.
    pub mean_band_width: Vec<T>,
    pub band_width_at_1: T,
    /// `None` for methods that do not estimate stationary points.
    pub rmse_t: Option<[T; 2]>,
    /// Replicates with no estimate in each matching sub-interval.
    pub missing_t: [usize; 2],
    /// HPD endpoints averaged over replicates with exactly two segments.
    pub mean_hpd: Option<[(T, T); 2]>,
    pub two_segment_fraction: Option<T>,
    pub m_hat_histogram: BTreeMap<usize, usize>,
    pub converged_fraction: T,
    pub mean_iterations: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RmseReport<T: Real> {
    pub spec: SyntheticSpec<T>,
    pub grid: Vec<T>,
    pub truth: Vec<T>,
    pub methods: Vec<MethodSummary<T>>,
    pub replicates: Vec<ReplicateResult<T>>,
}

impl<T: Real> RmseReport<T> {
    pub fn method(&self, m: Method) -> Option<&MethodSummary<T>> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// One row per `(method, grid point)`: `method,x,truth,rmse,band_width`.
    pub fn curve_rows(&self) -> Vec<(String, T, T, T, T)> {
        let mut rows = Vec::new();
        for s in &self.methods {
            for i in 0..self.grid.len() {
                rows.push((s.method.name().to_string(), self.grid[i], self.truth[i], s.rmse_curve[i], s.mean_band_width[i]));
            }
        }
        rows
    }
}

/// Runs every replicate (concurrently) and aggregates in replicate order.
///
/// Fails when more than 5% of the fits of any method fail.
pub fn run_replicates<T: Real>(opts: &SimOptions<T>) -> Result<RmseReport<T>> {
    opts.spec.validate()?;
    let results: Vec<ReplicateResult<T>> = (0..opts.spec.replicates)
        .into_par_iter()
        .map(|i| run_replicate(opts, i))
        .collect::<Result<_>>()?;
    let report = aggregate(opts, results);
    for s in &report.methods {
        if s.failed_replicates * 20 > opts.spec.replicates {
            return Err(DgpError::InvalidParameter(format!(
                "{} of {} `{}` fits failed",
                s.failed_replicates, opts.spec.replicates, s.method
            )));
        }
    }
    Ok(report)
}

pub fn aggregate<T: Real>(opts: &SimOptions<T>, replicates: Vec<ReplicateResult<T>>) -> RmseReport<T> {
    let grid = opts.spec.test_grid();
    let truth: Vec<T> = grid.iter().map(|&x| f_true(x)).collect();
    let methods = opts
        .methods
        .iter()
        .map(|&m| summarize_method(m, &grid, &truth, &replicates))
        .collect();
    RmseReport {
        spec: opts.spec.clone(),
        grid,
        truth,
        methods,
        replicates,
    }
}

fn summarize_method<T: Real>(method: Method, grid: &[T], truth: &[T], replicates: &[ReplicateResult<T>]) -> MethodSummary<T> {
    let fits: Vec<&MethodFit<T>> = replicates
        .iter()
        .filter_map(|r| r.fits.iter().find(|f| f.method == method))
        .collect();
    let failed = replicates
        .iter()
        .filter(|r| r.failures.iter().any(|(m, _)| *m == method))
        .count();
    let count = T::lit(fits.len().max(1) as f64);
    let estimates: Vec<Vec<T>> = fits.iter().map(|f| f.fitted.clone()).collect();
    let rmse = if fits.is_empty() { vec![T::nan(); grid.len()] } else { rmse_curve(truth, &estimates) };
    let mean_rmse = rmse.iter().copied().sum::<T>() / T::lit(rmse.len() as f64);
    let mut width = vec![T::zero(); grid.len()];
    for f in &fits {
        for i in 0..grid.len() {
            width[i] += (f.upper[i] - f.lower[i]) / count;
        }
    }
    let band_width_at_1 = interpolate(grid, &width, T::one());

    let estimates_t = matches!(method, Method::Single | Method::Multiple);
    let mut missing = [0usize; 2];
    let rmse_t = estimates_t.then(|| {
        let mut out = [T::zero(); 2];
        for k in 0..2 {
            let truth_k = T::lit(TRUE_STATIONARY[k]);
            let width_k = T::lit(MATCH_INTERVALS[k].1 - MATCH_INTERVALS[k].0);
            let ss: T = fits
                .iter()
                .map(|f| match f.t_hat[k] {
                    Some(t) => (t - truth_k) * (t - truth_k),
                    None => {
                        missing[k] += 1;
                        width_k * width_k
                    }
                })
                .sum();
            out[k] = (ss / count).sqrt();
        }
        out
    });

    let mut histogram = BTreeMap::new();
    for f in &fits {
        if let Some(m) = f.m_hat {
            *histogram.entry(m).or_insert(0) += 1;
        }
    }
    let (mean_hpd, two_segment_fraction) = match method {
        Method::Single => {
            let two: Vec<&&MethodFit<T>> = fits.iter().filter(|f| f.segments.len() == 2).collect();
            (average_segments(&two), Some(T::lit(two.len() as f64) / count))
        }
        Method::Multiple => {
            let two: Vec<&&MethodFit<T>> = fits.iter().filter(|f| f.segments.len() == 2).collect();
            (average_segments(&two), None)
        }
        _ => (None, None),
    };
    let converged = fits.iter().filter(|f| f.converged).count();
    let iterations: usize = fits.iter().map(|f| f.iterations).sum();
    MethodSummary {
        method,
        fitted_replicates: fits.len(),
        failed_replicates: failed,
        rmse_curve: rmse,
        mean_rmse,
        mean_band_width: width,
        band_width_at_1,
        rmse_t,
        missing_t: missing,
        mean_hpd,
        two_segment_fraction,
        m_hat_histogram: histogram,
        converged_fraction: T::lit(converged as f64) / count,
        mean_iterations: T::lit(iterations as f64) / count,
    }
}

fn average_segments<T: Real>(fits: &[&&MethodFit<T>]) -> Option<[(T, T); 2]> {
    if fits.is_empty() {
        return None;
    }
    let c = T::lit(fits.len() as f64);
    let mut out = [(T::zero(), T::zero()); 2];
    for f in fits {
        for k in 0..2 {
            out[k].0 += f.segments[k].0 / c;
            out[k].1 += f.segments[k].1 / c;
        }
    }
    Some(out)
}
