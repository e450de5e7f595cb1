use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DgpError, Result};
use crate::scalar::Real;
use crate::stats;

/// Two-component univariate Gaussian mixture, components ordered by mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GmmFit<T: Real> {
    pub weights: [T; 2],
    pub means: [T; 2],
    pub sds: [T; 2],
    pub loglik: T,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GmmOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 50,
            tol: 1e-4,
        }
    }
}

pub fn fit_gmm2<T: Real, R: Rng + ?Sized>(draws: &[T], rng: &mut R) -> Result<GmmFit<T>> {
    fit_gmm2_with(draws, &GmmOptions::default(), rng)
}

/// Best of several short EM runs, each started from two random draw quantiles.
///
/// A run whose component collapses is restarted from fresh quantiles; if every
/// run collapses the best collapsed fit is returned with `converged = false`.
/// The flag is also cleared when a single Gaussian has the better BIC, since
/// the two components are then not identified.
pub fn fit_gmm2_with<T: Real, R: Rng + ?Sized>(draws: &[T], opts: &GmmOptions, rng: &mut R) -> Result<GmmFit<T>> {
    if draws.len() < 20 {
        return Err(DgpError::InvalidParameter(format!("mixture fit needs at least 20 draws, got {}", draws.len())));
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(DgpError::NonFinite("mixture draws"));
    }
    let sorted = stats::sorted(draws);
    let range = sorted[sorted.len() - 1] - sorted[0];
    if !(range > T::zero()) {
        return Err(DgpError::DegenerateDensity("all draws are identical".into()));
    }
    let floor = T::lit(1e-6) * range;
    let n = T::lit(draws.len() as f64);
    let sd0 = stats::std_dev(draws);

    let mut best: Option<GmmFit<T>> = None;
    let mut attempts = 0;
    let mut finished = 0;
    while finished < opts.restarts && attempts < 3 * opts.restarts {
        attempts += 1;
        let q1 = T::sample_unit(rng);
        let q2 = T::sample_unit(rng);
        let m1 = stats::quantile_sorted(&sorted, q1);
        let m2 = stats::quantile_sorted(&sorted, q2);
        let mut fit = em_run(draws, [m1, m2], sd0, floor, opts);
        if fit.sds.iter().any(|&s| !(s >= floor)) || !fit.loglik.is_finite() {
            fit.converged = false;
            if attempts < 3 * opts.restarts {
                best.get_or_insert(fit);
                continue;
            }
        }
        finished += 1;
        if best.as_ref().is_none_or(|b| (fit.converged, fit.loglik) > (b.converged, b.loglik)) {
            best = Some(fit);
        }
    }
    let mut best = best.expect("at least one EM run");
    if best.converged && single_gaussian_bic(draws) <= -T::lit(2.0) * best.loglik + T::lit(5.0) * n.ln() {
        best.converged = false;
    }
    Ok(best)
}

fn single_gaussian_bic<T: Real>(draws: &[T]) -> T {
    let n = T::lit(draws.len() as f64);
    let m = stats::mean(draws);
    let var = draws.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / n;
    let loglik = -T::lit(0.5) * n * ((T::TAU() * var).ln() + T::one());
    -T::lit(2.0) * loglik + T::lit(2.0) * n.ln()
}

fn normal_pdf<T: Real>(x: T, m: T, s: T) -> T {
    let z = (x - m) / s;
    (-T::lit(0.5) * z * z).exp() / (s * T::TAU().sqrt())
}

fn em_run<T: Real>(draws: &[T], init: [T; 2], sd0: T, floor: T, opts: &GmmOptions) -> GmmFit<T> {
    let n = T::lit(draws.len() as f64);
    let mut w = [T::lit(0.5); 2];
    let mut m = init;
    let mut s = [sd0; 2];
    let mut resp = vec![T::zero(); draws.len()];
    let mut prev = T::neg_infinity();
    let mut loglik = T::neg_infinity();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        loglik = T::zero();
        for (r, &x) in resp.iter_mut().zip(draws) {
            let p0 = w[0] * normal_pdf(x, m[0], s[0]);
            let p1 = w[1] * normal_pdf(x, m[1], s[1]);
            let tot = p0 + p1;
            *r = if tot > T::zero() { p1 / tot } else { T::lit(0.5) };
            loglik += tot.max(T::min_positive_value()).ln();
        }
        if (loglik - prev).abs() < T::lit(opts.tol) {
            converged = true;
            break;
        }
        prev = loglik;
        let n1: T = resp.iter().copied().sum();
        let n0 = n - n1;
        if !(n0 > T::zero() && n1 > T::zero()) {
            break;
        }
        w = [n0 / n, n1 / n];
        m = [
            draws.iter().zip(&resp).map(|(&x, &r)| (T::one() - r) * x).sum::<T>() / n0,
            draws.iter().zip(&resp).map(|(&x, &r)| r * x).sum::<T>() / n1,
        ];
        let v0 = draws.iter().zip(&resp).map(|(&x, &r)| (T::one() - r) * (x - m[0]) * (x - m[0])).sum::<T>() / n0;
        let v1 = draws.iter().zip(&resp).map(|(&x, &r)| r * (x - m[1]) * (x - m[1])).sum::<T>() / n1;
        s = [v0.sqrt(), v1.sqrt()];
        if s.iter().any(|&v| !(v >= floor)) {
            break;
        }
    }
    if m[1] < m[0] {
        w.swap(0, 1);
        m.swap(0, 1);
        s.swap(0, 1);
    }
    GmmFit {
        weights: w,
        means: m,
        sds: s,
        loglik,
        converged,
    }
}
