use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::scaled_predictive;
use crate::error::{DgpError, Result};
use crate::linalg::jittered_cholesky;
use crate::mcem::PosteriorDraws;
use crate::scalar::Real;
use crate::stats;

/// Pointwise posterior mean and 95% band of the regression curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CurveEstimate<T: Real> {
    pub grid: Vec<T>,
    pub mean: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Draws whose predictive could not be factorized.
    pub skipped: usize,
}

impl<T: Real> CurveEstimate<T> {
    pub fn width(&self) -> Vec<T> {
        self.upper.iter().zip(&self.lower).map(|(&u, &l)| u - l).collect()
    }
}

/// One predictive path per posterior draw at `θ*`, summarized pointwise.
///
/// `y` is the raw response; its mean is removed before conditioning and added
/// back to the paths. Runs of identical `t` draws share one factorization.
/// More than 1% of draws failing to factorize is an error.
pub fn curve_bands<T: Real, R: Rng + ?Sized>(
    draws: &PosteriorDraws<T>,
    x: &[T],
    y: &[T],
    grid: &[T],
    rng: &mut R,
) -> Result<CurveEstimate<T>> {
    if draws.is_empty() {
        return Err(DgpError::InvalidParameter("no posterior draws".into()));
    }
    if grid.is_empty() {
        return Err(DgpError::InvalidParameter("empty prediction grid".into()));
    }
    let y_mean = stats::mean(y);
    let centered: Vec<T> = y.iter().map(|&v| v - y_mean).collect();
    let g = grid.len();

    let mut paths: Vec<Vec<T>> = vec![Vec::with_capacity(draws.len()); g];
    let mut skipped = 0usize;
    let mut z = vec![T::zero(); g];
    let mut d = 0;
    while d < draws.len() {
        let t = draws.t_draw(d);
        let mut end = d + 1;
        while end < draws.len() && draws.t_draw(end) == t {
            end += 1;
        }
        let factor = scaled_predictive(&centered, x, t, &draws.theta_star, grid)
            .and_then(|sp| Ok((jittered_cholesky(&sp.unit_cov)?.factor, sp.mean)));
        match factor {
            Ok((chol, mean)) => {
                for k in d..end {
                    let s = draws.sigma_sq[k].sqrt();
                    z.iter_mut().for_each(|v| *v = T::sample_standard_normal(rng));
                    let dev = chol.lower_mul(&z);
                    for (i, p) in paths.iter_mut().enumerate() {
                        p.push(mean[i] + s * dev[i] + y_mean);
                    }
                }
            }
            Err(_) => skipped += end - d,
        }
        d = end;
    }
    if T::lit(skipped as f64) > T::lit(0.01) * T::lit(draws.len() as f64) {
        return Err(DgpError::NotPositiveDefinite { eta: 1e-6 });
    }
    let mut mean = Vec::with_capacity(g);
    let mut lower = Vec::with_capacity(g);
    let mut upper = Vec::with_capacity(g);
    for p in &mut paths {
        mean.push(stats::mean(p));
        p.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower.push(stats::quantile_sorted(p, T::lit(0.025)));
        upper.push(stats::quantile_sorted(p, T::lit(0.975)));
    }
    Ok(CurveEstimate {
        grid: grid.to_vec(),
        mean,
        lower,
        upper,
        skipped,
    })
}
