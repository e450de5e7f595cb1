//! Monte Carlo EM: Metropolis-within-Gibbs E-step over `(t, σ²)` and a
//! marginal-maximum-likelihood M-step over `θ = (τ₀, h)`.
//!
//! The single-curve, fixed-count ("multiple"), fixed-location ("oracle") and
//! unconstrained configurations all run through the same engine. Several
//! curves sharing one input grid and one `θ` are handled by
//! [`run_mcem_pooled`]; a single curve is the one-subject case.

mod mstep;
mod sampler;

pub use mstep::{m_step, q_hat, MStepResult};
pub use sampler::{
    e_step, gibbs_sigma_sq, mh_step_t, sigma_sq_full_conditional, ChainPosition, DrawSet, EStepRngs,
    InverseGamma, MhOutcome, StepContext,
};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::MarginalEvaluator;
use crate::error::{DgpError, Result};
use crate::kernel::{check_separation, Theta, MIN_SEPARATION_FACTOR};
use crate::scalar::Real;
use crate::stats;

/// Shape of the prior on a stationary point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "")]
pub enum PriorKind<T: Real> {
    Uniform,
    /// Beta on `(t − a) / (b − a)`.
    Beta { alpha: T, beta: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TPrior<T: Real> {
    pub kind: PriorKind<T>,
    pub a: T,
    pub b: T,
}

impl<T: Real> TPrior<T> {
    pub fn uniform(a: T, b: T) -> Result<Self> {
        let p = Self {
            kind: PriorKind::Uniform,
            a,
            b,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn beta(a: T, b: T, alpha: T, beta: T) -> Result<Self> {
        let p = Self {
            kind: PriorKind::Beta { alpha, beta },
            a,
            b,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || !self.b.is_finite() || !(self.a < self.b) {
            return Err(DgpError::InvalidParameter(format!(
                "prior domain must satisfy a < b, got [{}, {}]",
                self.a, self.b
            )));
        }
        if let PriorKind::Beta { alpha, beta } = self.kind {
            if !(alpha > T::zero() && beta > T::zero()) || !alpha.is_finite() || !beta.is_finite() {
                return Err(DgpError::InvalidParameter(format!(
                    "beta shapes must be positive, got ({alpha}, {beta})"
                )));
            }
        }
        Ok(())
    }

    /// Unnormalized log density; `−∞` outside the support.
    pub fn log_density(&self, t: T) -> T {
        match self.kind {
            PriorKind::Uniform => {
                if t >= self.a && t <= self.b {
                    T::zero()
                } else {
                    T::neg_infinity()
                }
            }
            PriorKind::Beta { alpha, beta } => {
                let s = (t - self.a) / (self.b - self.a);
                if s > T::zero() && s < T::one() {
                    (alpha - T::one()) * s.ln() + (beta - T::one()) * (T::one() - s).ln()
                } else {
                    T::neg_infinity()
                }
            }
        }
    }

    /// Draws from the prior restricted to `[lo, hi]`.
    pub fn sample_within<R: Rng + ?Sized>(&self, lo: T, hi: T, rng: &mut R) -> T {
        match self.kind {
            PriorKind::Uniform => lo + (hi - lo) * T::sample_unit(rng),
            PriorKind::Beta { alpha, beta } => {
                let full = lo <= self.a && hi >= self.b;
                for _ in 0..10_000 {
                    let s = T::sample_beta(alpha, beta, rng);
                    let t = self.a + (self.b - self.a) * s;
                    if full || (t >= lo && t <= hi) {
                        return t;
                    }
                }
                // Restriction to a region with negligible mass.
                lo + (hi - lo) * T::sample_unit(rng)
            }
        }
    }
}

/// How many stationary points are imposed and how they are treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case", bound = "")]
pub enum Mode<T: Real> {
    /// One unknown stationary point on the whole prior domain.
    Single,
    /// One unknown stationary point per ordered, disjoint sub-interval.
    Multiple(Vec<(T, T)>),
    /// Known stationary points; an empty list is plain GP regression.
    Oracle(Vec<T>),
}

impl<T: Real> Mode<T> {
    pub fn gpr() -> Self {
        Mode::Oracle(Vec::new())
    }

    /// Proposal domain of each free coordinate.
    pub fn domains(&self, prior: &TPrior<T>) -> Vec<(T, T)> {
        match self {
            Mode::Single => vec![(prior.a, prior.b)],
            Mode::Multiple(iv) => iv.clone(),
            Mode::Oracle(_) => Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Mode::Single => 1,
            Mode::Multiple(iv) => iv.len(),
            Mode::Oracle(p) => p.len(),
        }
    }
}

/// Box constraints on `(log τ₀, log h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ThetaBounds<T: Real> {
    pub log_tau0: (T, T),
    pub log_h: (T, T),
}

impl<T: Real> ThetaBounds<T> {
    /// `log τ₀ ∈ [−5, 5]`, `h ∈ [0.01, 10] × range(x)`.
    pub fn for_inputs(x: &[T]) -> Self {
        let (lo, hi) = x.iter().fold((T::infinity(), T::neg_infinity()), |(l, h), &v| (l.min(v), h.max(v)));
        let range = (hi - lo).max(T::epsilon());
        Self {
            log_tau0: (T::lit(-5.0), T::lit(5.0)),
            log_h: ((T::lit(0.01) * range).ln(), (T::lit(10.0) * range).ln()),
        }
    }

    pub fn lower(&self) -> [T; 2] {
        [self.log_tau0.0, self.log_h.0]
    }

    pub fn upper(&self) -> [T; 2] {
        [self.log_tau0.1, self.log_h.1]
    }

    pub fn project(&self, theta: Theta<T>) -> Theta<T> {
        let [lt, lh] = theta.to_log();
        Theta::from_log(
            lt.max(self.log_tau0.0).min(self.log_tau0.1),
            lh.max(self.log_h.0).min(self.log_h.1),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct McemConfig<T: Real> {
    /// E-step chain length per iteration (`D`).
    pub draws_per_iter: usize,
    /// M-step subsample size (`J`), strictly below `D`.
    pub subsample: usize,
    /// Convergence tolerance on `‖θ̂⁽ⁱ⁺¹⁾ − θ̂⁽ⁱ⁾‖`.
    pub tol: T,
    pub a_sigma: T,
    pub b_sigma: T,
    pub t_prior: TPrior<T>,
    pub mode: Mode<T>,
    pub max_iter: usize,
    /// Defaults to [`ThetaBounds::for_inputs`] when absent.
    pub theta_bounds: Option<ThetaBounds<T>>,
    /// Defaults to `τ₀ = 1`, `h = range(x) / 10` when absent.
    pub theta_init: Option<Theta<T>>,
    pub final_draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Reuse the same random streams in every E-step after the first, so the
    /// EM map is a deterministic function of `θ`.
    pub common_random_numbers: bool,
}

impl<T: Real> McemConfig<T> {
    pub fn new(t_prior: TPrior<T>, mode: Mode<T>, seed: u64) -> Self {
        Self {
            draws_per_iter: 2000,
            subsample: 200,
            tol: T::lit(1e-4),
            a_sigma: T::lit(0.5),
            b_sigma: T::lit(0.5),
            t_prior,
            mode,
            max_iter: 100,
            theta_bounds: None,
            theta_init: None,
            final_draws: 4000,
            burn_in: 1000,
            thin: 2,
            seed,
            common_random_numbers: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.t_prior.validate()?;
        if self.subsample == 0 || self.subsample >= self.draws_per_iter {
            return Err(DgpError::InvalidParameter(format!(
                "need 1 <= J < D, got J = {}, D = {}",
                self.subsample, self.draws_per_iter
            )));
        }
        if !(self.tol > T::zero()) {
            return Err(DgpError::InvalidParameter("tolerance must be positive".into()));
        }
        if !(self.a_sigma > T::zero() && self.b_sigma > T::zero()) {
            return Err(DgpError::InvalidParameter("inverse-gamma prior needs a, b > 0".into()));
        }
        if self.max_iter == 0 || self.final_draws == 0 || self.thin == 0 {
            return Err(DgpError::InvalidParameter(
                "max_iter, final_draws and thin must be positive".into(),
            ));
        }
        let (a, b) = (self.t_prior.a, self.t_prior.b);
        match &self.mode {
            Mode::Single => {}
            Mode::Multiple(iv) => {
                if iv.is_empty() {
                    return Err(DgpError::InvalidParameter("multiple mode needs sub-intervals".into()));
                }
                for (k, &(lo, hi)) in iv.iter().enumerate() {
                    if !(lo < hi) || lo < a || hi > b {
                        return Err(DgpError::InvalidParameter(format!(
                            "sub-interval {k} = [{lo}, {hi}] is empty or outside [{a}, {b}]"
                        )));
                    }
                    if k > 0 && lo < iv[k - 1].1 {
                        return Err(DgpError::InvalidParameter(format!(
                            "sub-intervals {} and {k} overlap or are out of order",
                            k - 1
                        )));
                    }
                }
            }
            Mode::Oracle(points) => {
                if points.iter().any(|&p| !(p >= a && p <= b)) {
                    return Err(DgpError::InvalidParameter("oracle points outside the prior domain".into()));
                }
            }
        }
        Ok(())
    }
}

/// Observations on a shared, finite input grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(x: Vec<T>, y: Vec<T>) -> Result<Self> {
        let d = Self { x, y };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(DgpError::DimensionMismatch(format!(
                "{} inputs, {} observations",
                self.x.len(),
                self.y.len()
            )));
        }
        if self.x.len() < 3 {
            return Err(DgpError::InvalidParameter("need at least 3 observations".into()));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(DgpError::NonFinite("dataset"));
        }
        Ok(())
    }

    pub fn y_mean(&self) -> T {
        stats::mean(&self.y)
    }

    pub fn centered(&self) -> Vec<T> {
        let m = self.y_mean();
        self.y.iter().map(|&v| v - m).collect()
    }
}

/// Sampler bookkeeping attached to a set of posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DrawMetadata<T: Real> {
    pub seed: u64,
    pub subject: usize,
    /// MH acceptance fraction in the final sampling run.
    pub accept_rate: f64,
    /// Proposals whose likelihood could not be evaluated (counted as rejections).
    pub failed_proposals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub config: McemConfig<T>,
}

/// Paired posterior draws `{t_d, σ²_d}` with the MML estimate `θ*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PosteriorDraws<T: Real> {
    /// Coordinates per `t` draw (1 for single mode, 0 for GPR).
    pub dim: usize,
    /// Row-major `len × dim`.
    pub t: Vec<T>,
    pub sigma_sq: Vec<T>,
    pub theta_star: Theta<T>,
    pub meta: DrawMetadata<T>,
}

impl<T: Real> PosteriorDraws<T> {
    pub fn len(&self) -> usize {
        self.sigma_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_sq.is_empty()
    }

    pub fn t_draw(&self, d: usize) -> &[T] {
        &self.t[d * self.dim..(d + 1) * self.dim]
    }

    /// All draws of coordinate `k`.
    pub fn coordinate(&self, k: usize) -> Vec<T> {
        assert!(k < self.dim, "coordinate {k} out of range");
        (0..self.len()).map(|d| self.t[d * self.dim + k]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct McemState<T: Real> {
    pub theta_hat: Theta<T>,
    pub iteration: usize,
    /// Chain position per subject at the end of the run.
    pub last_t: Vec<Vec<T>>,
    pub last_sigma_sq: Vec<T>,
    pub theta_trace: Vec<Theta<T>>,
    /// MH acceptance fraction over every E-step.
    pub accept_rate: f64,
    pub converged: bool,
    /// Final `‖θ̂⁽ⁱ⁺¹⁾ − θ̂⁽ⁱ⁾‖`.
    pub last_step: T,
    /// M-steps whose optimizer hit its evaluation budget.
    pub mstep_budget_hits: usize,
}

const FINAL_PHASE: u64 = 0xFF_FFFF;

/// Random stream for `(subject, phase, purpose)` under a run seed.
pub(crate) fn stream_rng(seed: u64, subject: usize, phase: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((subject as u64) << 32) | (phase << 8) | purpose);
    rng
}

fn estep_rngs(seed: u64, subject: usize, phase: u64) -> EStepRngs {
    EStepRngs {
        proposal: stream_rng(seed, subject, phase, 0),
        accept: stream_rng(seed, subject, phase, 1),
        gamma: stream_rng(seed, subject, phase, 2),
    }
}

fn subsample_draws<T: Real, R: Rng + ?Sized>(draws: &DrawSet<T>, j: usize, rng: &mut R) -> DrawSet<T> {
    let mut idx = index::sample(rng, draws.len(), j).into_vec();
    idx.sort_unstable();
    let mut out = DrawSet::with_dim(draws.dim);
    for d in idx {
        out.push(draws.t_draw(d), draws.sigma_sq[d]);
    }
    out
}

fn initial_theta<T: Real>(config: &McemConfig<T>, x: &[T], bounds: &ThetaBounds<T>) -> Theta<T> {
    let th = config.theta_init.unwrap_or_else(|| {
        let (lo, hi) = x.iter().fold((T::infinity(), T::neg_infinity()), |(l, h), &v| (l.min(v), h.max(v)));
        Theta {
            tau0: T::one(),
            h: (hi - lo) / T::lit(10.0),
        }
    });
    bounds.project(th)
}

fn initial_position<T: Real>(mode: &Mode<T>, prior: &TPrior<T>, y: &[T]) -> (Vec<T>, T) {
    let t = match mode {
        Mode::Oracle(p) => p.clone(),
        _ => mode
            .domains(prior)
            .iter()
            .map(|&(lo, hi)| T::lit(0.5) * (lo + hi))
            .collect(),
    };
    let v = stats::variance(y);
    let s2 = if v.is_finite() && v > T::zero() { T::lit(0.5) * v } else { T::one() };
    (t, s2)
}

/// Single-dataset MCEM in any [`Mode`].
pub fn run_mcem<T: Real>(config: &McemConfig<T>, data: &Dataset<T>) -> Result<(PosteriorDraws<T>, McemState<T>)> {
    let (mut draws, state) = run_mcem_pooled(config, &data.x, std::slice::from_ref(&data.y))?;
    Ok((draws.remove(0), state))
}

/// [`run_mcem`] restricted to [`Mode::Multiple`].
pub fn run_mcem_multiple<T: Real>(
    config: &McemConfig<T>,
    data: &Dataset<T>,
) -> Result<(PosteriorDraws<T>, McemState<T>)> {
    if !matches!(config.mode, Mode::Multiple(_)) {
        return Err(DgpError::InvalidParameter("run_mcem_multiple needs Mode::Multiple".into()));
    }
    run_mcem(config, data)
}

type FinalChain<T> = (DrawSet<T>, Vec<T>, T);

struct Subject<T: Real> {
    y: Vec<T>,
    t: Vec<T>,
    sigma_sq: T,
}

/// MCEM for `S` curves on a shared grid with a shared `θ`.
///
/// Each subject runs its own `(t, σ²)` chain on its own random streams; the
/// M-step maximizes the sum of the per-subject `Q̂`.
pub fn run_mcem_pooled<T: Real>(
    config: &McemConfig<T>,
    x: &[T],
    ys: &[Vec<T>],
) -> Result<(Vec<PosteriorDraws<T>>, McemState<T>)> {
    config.validate()?;
    if ys.is_empty() {
        return Err(DgpError::InvalidParameter("no subjects".into()));
    }
    for y in ys {
        Dataset::new(x.to_vec(), y.clone())?;
    }
    let bounds = config.theta_bounds.unwrap_or_else(|| ThetaBounds::for_inputs(x));
    let mut theta = initial_theta(config, x, &bounds);
    if let Mode::Oracle(p) = &config.mode {
        check_separation(p, theta.h)?;
    }
    let domains = config.mode.domains(&config.t_prior);

    let mut subjects: Vec<Subject<T>> = ys
        .iter()
        .map(|y| {
            let centered = Dataset {
                x: x.to_vec(),
                y: y.clone(),
            }
            .centered();
            let (t, sigma_sq) = initial_position(&config.mode, &config.t_prior, &centered);
            Subject {
                y: centered,
                t,
                sigma_sq,
            }
        })
        .collect();

    let mut trace = vec![theta];
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    let mut converged = false;
    let mut last_step = T::infinity();
    let mut budget_hits = 0usize;
    let mut iteration = 0usize;

    for iter in 1..=config.max_iter {
        iteration = iter;
        let evaluator = MarginalEvaluator::new(x, theta)?;
        let phase = if config.common_random_numbers { iter.min(2) as u64 } else { iter as u64 };
        let from_prior = iter == 1;
        let chains: Vec<Result<DrawSet<T>>> = subjects
            .par_iter_mut()
            .enumerate()
            .map(|(s, subj)| {
                let ctx = StepContext::new(&evaluator, &subj.y, &config.t_prior, &domains, config.a_sigma, config.b_sigma)?;
                let mut pos = ChainPosition::new(subj.t.clone(), subj.sigma_sq, &ctx).or_else(|_| {
                    // The carried-over point can become degenerate after h shrinks.
                    let (t, s2) = initial_position(&config.mode, &config.t_prior, &subj.y);
                    ChainPosition::new(t, s2, &ctx)
                })?;
                let mut rngs = estep_rngs(config.seed, s, phase);
                let out = e_step(&mut pos, &ctx, config.draws_per_iter, from_prior, &mut rngs)
                    .map_err(|e| annotate(e, iter))?;
                subj.t = pos.t.clone();
                subj.sigma_sq = pos.sigma_sq;
                Ok(out)
            })
            .collect();
        let chains = chains.into_iter().collect::<Result<Vec<_>>>()?;
        for c in &chains {
            accepted += c.accepted;
            proposed += c.proposed;
        }

        let picked: Vec<DrawSet<T>> = chains
            .iter()
            .enumerate()
            .map(|(s, c)| {
                let mut rng = stream_rng(config.seed, s, phase, 3);
                subsample_draws(c, config.subsample, &mut rng)
            })
            .collect();
        let inputs: Vec<(&[T], &DrawSet<T>)> = subjects.iter().map(|s| s.y.as_slice()).zip(picked.iter()).collect();
        let ms = m_step(&inputs, x, theta, &bounds)?;
        if !ms.converged {
            budget_hits += 1;
        }
        last_step = ms.theta.distance(&theta);
        theta = ms.theta;
        trace.push(theta);
        if last_step < config.tol {
            converged = true;
            break;
        }
    }

    // Final sampling run at θ*.
    let evaluator = MarginalEvaluator::new(x, theta)?;
    let total = config.burn_in + config.final_draws * config.thin;
    // Per subject: kept chain and final (t, σ²).
    let finals: Vec<Result<FinalChain<T>>> = subjects
        .par_iter()
        .enumerate()
        .map(|(s, subj)| {
            let ctx = StepContext::new(&evaluator, &subj.y, &config.t_prior, &domains, config.a_sigma, config.b_sigma)?;
            let mut pos = ChainPosition::new(subj.t.clone(), subj.sigma_sq, &ctx).or_else(|_| {
                let (t, s2) = initial_position(&config.mode, &config.t_prior, &subj.y);
                ChainPosition::new(t, s2, &ctx)
            })?;
            let mut rngs = estep_rngs(config.seed, s, FINAL_PHASE);
            let chain = e_step(&mut pos, &ctx, total, false, &mut rngs).map_err(|e| annotate(e, iteration + 1))?;
            Ok((chain, pos.t.clone(), pos.sigma_sq))
        })
        .collect();
    let finals = finals.into_iter().collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(finals.len());
    let mut last_t = Vec::new();
    let mut last_sigma_sq = Vec::new();
    for (s, (chain, t, s2)) in finals.into_iter().enumerate() {
        accepted += chain.accepted;
        proposed += chain.proposed;
        let kept = chain.thinned(config.burn_in, config.thin);
        out.push(PosteriorDraws {
            dim: kept.dim,
            t: kept.t,
            sigma_sq: kept.sigma_sq,
            theta_star: theta,
            meta: DrawMetadata {
                seed: config.seed,
                subject: s,
                accept_rate: ratio(chain.accepted, chain.proposed),
                failed_proposals: chain.failed,
                iterations: iteration,
                converged,
                config: config.clone(),
            },
        });
        last_t.push(t);
        last_sigma_sq.push(s2);
    }
    let state = McemState {
        theta_hat: theta,
        iteration,
        last_t,
        last_sigma_sq,
        theta_trace: trace,
        accept_rate: ratio(accepted, proposed),
        converged,
        last_step,
        mstep_budget_hits: budget_hits,
    };
    Ok((out, state))
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

fn annotate(e: DgpError, iteration: usize) -> DgpError {
    match e {
        DgpError::EStep { index, reason, .. } => DgpError::EStep {
            iteration,
            index,
            reason,
        },
        other => other,
    }
}

/// Inverse-gamma `(a, b)` whose mean is the pooled residual variance around a
/// centred running mean and whose standard deviation equals that mean.
pub fn moment_matched_ig_prior<T: Real>(ys: &[Vec<T>], window: usize) -> Result<(T, T)> {
    let half = window.max(3) / 2;
    let mut ss = T::zero();
    let mut count = 0usize;
    for y in ys {
        let n = y.len();
        for i in 0..n {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let m = stats::mean(&y[lo..hi]);
            ss += (y[i] - m) * (y[i] - m);
            count += 1;
        }
    }
    if count == 0 {
        return Err(DgpError::InvalidParameter("no observations for the noise prior".into()));
    }
    let v = ss / T::lit(count as f64);
    if !(v > T::zero()) {
        return Err(DgpError::InvalidParameter("zero residual variance".into()));
    }
    // mean = b / (a − 1), sd = mean  ⇒  a = 3, b = 2 v.
    Ok((T::lit(3.0), T::lit(2.0) * v))
}

/// Minimum spacing enforced between constraint points at length scale `h`.
pub fn min_separation<T: Real>(h: T) -> T {
    T::lit(MIN_SEPARATION_FACTOR) * h
}
