//! Marginal-maximum-likelihood update of `θ = (τ₀, h)`.

use super::{DrawSet, ThetaBounds};
use crate::dgp::MarginalEvaluator;
use crate::error::Result;
use crate::kernel::Theta;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::scalar::Real;

/// `Σ_s (1/J) Σ_j log p(y_s | t_j, σ²_j, θ)` over each subject's draws.
pub fn q_hat<T: Real>(theta: Theta<T>, x: &[T], subjects: &[(&[T], &DrawSet<T>)]) -> Result<T> {
    let ev = MarginalEvaluator::new(x, theta)?;
    let n = x.len();
    let mut total = T::zero();
    for (y, draws) in subjects {
        let w = ev.whiten(y)?;
        let mut acc = T::zero();
        for d in 0..draws.len() {
            acc += ev.evidence(draws.t_draw(d), &w)?.log_lik(draws.sigma_sq[d], n);
        }
        total += acc / T::lit(draws.len() as f64);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepResult<T: Real> {
    pub theta: Theta<T>,
    /// `Q̂` at the returned `θ`.
    pub q_new: T,
    /// `Q̂` at the warm start.
    pub q_start: T,
    pub evals: usize,
    /// False when the optimizer stopped on its evaluation budget.
    pub converged: bool,
}

/// Maximizes [`q_hat`] over `(log τ₀, log h)` inside `bounds`, warm-started at
/// `theta_current` and restarted once from the best point found.
pub fn m_step<T: Real>(
    subjects: &[(&[T], &DrawSet<T>)],
    x: &[T],
    theta_current: Theta<T>,
    bounds: &ThetaBounds<T>,
) -> Result<MStepResult<T>> {
    let start = bounds.project(theta_current);
    let q_start = q_hat(start, x, subjects)?;
    let objective = |u: &[T]| match q_hat(Theta::from_log(u[0], u[1]), x, subjects) {
        Ok(q) => -q,
        Err(_) => T::infinity(),
    };
    let lower = bounds.lower();
    let upper = bounds.upper();
    let first = nelder_mead(objective, &start.to_log(), &lower, &upper, &NelderMeadOptions::default());
    let restart_opts = NelderMeadOptions {
        initial_step: T::lit(0.05),
        ..NelderMeadOptions::default()
    };
    let second = nelder_mead(objective, &first.x, &lower, &upper, &restart_opts);
    let best = if second.value <= first.value { &second } else { &first };

    let evals = first.evals + second.evals;
    let converged = first.converged || second.converged;
    if -best.value < q_start {
        return Ok(MStepResult {
            theta: start,
            q_new: q_start,
            q_start,
            evals,
            converged,
        });
    }
    Ok(MStepResult {
        theta: Theta::from_log(best.x[0], best.x[1]),
        q_new: -best.value,
        q_start,
        evals,
        converged,
    })
}
