//! E-step kernels: independence Metropolis–Hastings on `t` and the conjugate
//! inverse-gamma update of `σ²`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::TPrior;
use crate::dgp::{log_marginal_likelihood, marginal_cov_a, Evidence, MarginalEvaluator, Whitened};
use crate::error::{DgpError, Result};
use crate::kernel::Theta;
use crate::linalg::jittered_cholesky;
use crate::scalar::Real;

/// Independent streams for proposals, acceptance uniforms and gamma variates.
///
/// Keeping them apart means a change in one accept/reject decision does not
/// shift the random numbers seen by the other updates.
#[derive(Debug, Clone)]
pub struct EStepRngs {
    pub proposal: ChaCha8Rng,
    pub accept: ChaCha8Rng,
    pub gamma: ChaCha8Rng,
}

/// Everything one chain needs at the current `θ̂`.
pub struct StepContext<'a, T: Real> {
    pub evaluator: &'a MarginalEvaluator<T>,
    pub y: Whitened<T>,
    pub prior: &'a TPrior<T>,
    /// Proposal interval of each free coordinate; empty when `t` is fixed.
    pub domains: &'a [(T, T)],
    pub a_sigma: T,
    pub b_sigma: T,
}

impl<'a, T: Real> StepContext<'a, T> {
    pub fn new(
        evaluator: &'a MarginalEvaluator<T>,
        y: &[T],
        prior: &'a TPrior<T>,
        domains: &'a [(T, T)],
        a_sigma: T,
        b_sigma: T,
    ) -> Result<Self> {
        Ok(Self {
            evaluator,
            y: evaluator.whiten(y)?,
            prior,
            domains,
            a_sigma,
            b_sigma,
        })
    }

    fn n(&self) -> usize {
        self.evaluator.n()
    }

    fn log_prior(&self, t: &[T]) -> T {
        if self.domains.is_empty() {
            return T::zero();
        }
        t.iter().map(|&v| self.prior.log_density(v)).sum()
    }
}

/// Current `(t, σ²)` together with the evidence terms at `t`.
#[derive(Debug, Clone)]
pub struct ChainPosition<T> {
    pub t: Vec<T>,
    pub sigma_sq: T,
    pub evidence: Evidence<T>,
}

impl<T: Real> ChainPosition<T> {
    pub fn new(t: Vec<T>, sigma_sq: T, ctx: &StepContext<'_, T>) -> Result<Self> {
        let evidence = ctx.evaluator.evidence(&t, &ctx.y)?;
        Ok(Self { t, sigma_sq, evidence })
    }

    fn log_target(&self, ev: &Evidence<T>, ctx: &StepContext<'_, T>, t: &[T]) -> T {
        // Terms constant in t cancel in the MH ratio.
        let half = T::lit(0.5);
        -half * ev.log_det - ev.quad / (T::lit(2.0) * self.sigma_sq) + ctx.log_prior(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MhOutcome {
    Accepted,
    Rejected,
    /// The proposal's likelihood could not be evaluated; treated as a rejection.
    Failed,
}

/// One independence-MH update of coordinate `coord` of `t`.
///
/// The proposal is uniform on the coordinate's domain; acceptance uses
/// `min(1, p(y|t*)π(t*) / p(y|t)π(t))` in log space.
pub fn mh_step_t<T: Real>(pos: &mut ChainPosition<T>, ctx: &StepContext<'_, T>, coord: usize, rngs: &mut EStepRngs) -> MhOutcome {
    let (lo, hi) = ctx.domains[coord];
    let proposal = lo + (hi - lo) * T::sample_unit(&mut rngs.proposal);
    let u = T::sample_unit(&mut rngs.accept);

    let mut candidate = pos.t.clone();
    candidate[coord] = proposal;
    let ev = match ctx.evaluator.evidence(&candidate, &ctx.y) {
        Ok(ev) => ev,
        Err(_) => return MhOutcome::Failed,
    };
    let log_ratio = pos.log_target(&ev, ctx, &candidate) - pos.log_target(&pos.evidence, ctx, &pos.t);
    if u.ln() < log_ratio {
        pos.t = candidate;
        pos.evidence = ev;
        MhOutcome::Accepted
    } else {
        MhOutcome::Rejected
    }
}

/// `IG(shape, scale)` with density `∝ x^{−shape−1} exp(−scale / x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGamma<T> {
    pub shape: T,
    pub scale: T,
}

impl<T: Real> InverseGamma<T> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        self.scale / T::sample_gamma(self.shape, rng)
    }

    /// Defined for `shape > 1`.
    pub fn mean(&self) -> T {
        self.scale / (self.shape - T::one())
    }

    /// Defined for `shape > 2`.
    pub fn variance(&self) -> T {
        let s1 = self.shape - T::one();
        self.scale * self.scale / (s1 * s1 * (self.shape - T::lit(2.0)))
    }
}

/// Full conditional `IG(n/2 + a_σ, ½ yᵀA⁻¹(t)y + b_σ)` from the quadratic form.
pub fn gibbs_sigma_sq<T: Real, R: Rng + ?Sized>(quad: T, n: usize, a_sigma: T, b_sigma: T, rng: &mut R) -> T {
    InverseGamma {
        shape: T::lit(n as f64) * T::lit(0.5) + a_sigma,
        scale: T::lit(0.5) * quad + b_sigma,
    }
    .sample(rng)
}

/// The `σ²` full conditional at `(t, θ)`, computed through a dense factorization of `A(t)`.
pub fn sigma_sq_full_conditional<T: Real>(
    t: &[T],
    theta: &Theta<T>,
    x: &[T],
    y: &[T],
    a_sigma: T,
    b_sigma: T,
) -> Result<InverseGamma<T>> {
    // Validates the inputs the same way the likelihood does.
    log_marginal_likelihood(y, t, T::one(), theta, x)?;
    let a = marginal_cov_a(t, theta, x)?;
    let quad = jittered_cholesky(&a)?.factor.quad_form(y);
    Ok(InverseGamma {
        shape: T::lit(y.len() as f64) * T::lit(0.5) + a_sigma,
        scale: T::lit(0.5) * quad + b_sigma,
    })
}

/// A run of paired `(t, σ²)` draws.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSet<T> {
    pub dim: usize,
    /// Row-major `len × dim`.
    pub t: Vec<T>,
    pub sigma_sq: Vec<T>,
    pub accepted: usize,
    pub proposed: usize,
    pub failed: usize,
}

impl<T: Real> DrawSet<T> {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            t: Vec::new(),
            sigma_sq: Vec::new(),
            accepted: 0,
            proposed: 0,
            failed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.sigma_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_sq.is_empty()
    }

    pub fn push(&mut self, t: &[T], sigma_sq: T) {
        debug_assert_eq!(t.len(), self.dim);
        self.t.extend_from_slice(t);
        self.sigma_sq.push(sigma_sq);
    }

    pub fn t_draw(&self, d: usize) -> &[T] {
        &self.t[d * self.dim..(d + 1) * self.dim]
    }

    /// Drops the first `burn_in` draws and keeps every `thin`-th of the rest.
    pub fn thinned(&self, burn_in: usize, thin: usize) -> Self {
        let mut out = Self::with_dim(self.dim);
        let mut d = burn_in + thin - 1;
        while d < self.len() {
            out.push(self.t_draw(d), self.sigma_sq[d]);
            d += thin;
        }
        out.accepted = self.accepted;
        out.proposed = self.proposed;
        out.failed = self.failed;
        out
    }
}

const MAX_PRIOR_REDRAWS: usize = 1000;

/// `len` paired draws.
///
/// With `from_prior` every `t` is drawn afresh from the prior (restricted to
/// each coordinate's domain) and `σ²` from its full conditional; otherwise
/// each draw is one MH sweep over the free coordinates followed by the Gibbs
/// update, continuing from `pos`.
pub fn e_step<T: Real>(
    pos: &mut ChainPosition<T>,
    ctx: &StepContext<'_, T>,
    len: usize,
    from_prior: bool,
    rngs: &mut EStepRngs,
) -> Result<DrawSet<T>> {
    let dim = pos.t.len();
    let mut out = DrawSet::with_dim(dim);
    let free = ctx.domains.len();
    for d in 0..len {
        if free > 0 {
            if from_prior {
                let mut tries = 0;
                loop {
                    let t: Vec<T> = ctx
                        .domains
                        .iter()
                        .map(|&(lo, hi)| ctx.prior.sample_within(lo, hi, &mut rngs.proposal))
                        .collect();
                    match ctx.evaluator.evidence(&t, &ctx.y) {
                        Ok(ev) => {
                            pos.t = t;
                            pos.evidence = ev;
                            break;
                        }
                        Err(e) => {
                            tries += 1;
                            if tries >= MAX_PRIOR_REDRAWS {
                                return Err(DgpError::EStep {
                                    iteration: 0,
                                    index: d,
                                    reason: e.to_string(),
                                });
                            }
                        }
                    }
                }
            } else {
                for k in 0..free {
                    out.proposed += 1;
                    match mh_step_t(pos, ctx, k, rngs) {
                        MhOutcome::Accepted => out.accepted += 1,
                        MhOutcome::Rejected => {}
                        MhOutcome::Failed => out.failed += 1,
                    }
                }
            }
        }
        pos.sigma_sq = gibbs_sigma_sq(pos.evidence.quad, ctx.n(), ctx.a_sigma, ctx.b_sigma, &mut rngs.gamma);
        out.push(&pos.t, pos.sigma_sq);
    }
    if out.proposed > 0 && out.failed == out.proposed {
        return Err(DgpError::EStep {
            iteration: 0,
            index: len.saturating_sub(1),
            reason: "every proposal failed to evaluate".into(),
        });
    }
    Ok(out)
}
