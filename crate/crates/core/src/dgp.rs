//! Derivative-constrained GP: constrained moments, path sampling, the
//! marginal likelihood of the observations and the posterior predictive.
//!
//! Throughout, `θ = (τ₀, h)` and the signal variance is `τ² = τ₀² σ²`, so the
//! observations have covariance `σ² A(t)` with `A(t) = τ₀² K̃(t) + I` and `K̃`
//! the constrained covariance of a unit-variance kernel.

use rand::Rng;

use crate::error::{DgpError, Result};
use crate::kernel::{check_separation, KernelParams, Theta};
use crate::linalg::{dot, jittered_cholesky, Cholesky, Matrix};
use crate::scalar::Real;

/// Constant-mean GP conditioned on `f'(t) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpPrior<T: Real> {
    pub mean: T,
    pub params: KernelParams<T>,
    t: Vec<T>,
}

impl<T: Real> DgpPrior<T> {
    pub fn new(mean: T, params: KernelParams<T>, t: Vec<T>) -> Result<Self> {
        if !mean.is_finite() {
            return Err(DgpError::NonFinite("prior mean"));
        }
        check_separation(&t, params.h())?;
        Ok(Self { mean, params, t })
    }

    pub fn constraints(&self) -> &[T] {
        &self.t
    }
}

/// `k(a, b) − k01(a, t) k11⁻¹(t, t) k10(t, b)`.
pub fn constrained_cov<T: Real>(
    params: &KernelParams<T>,
    t: &[T],
    a: &[T],
    b: &[T],
) -> Result<Matrix<T>> {
    check_separation(t, params.h())?;
    let mut out = params.cov_matrix(a, b);
    if t.is_empty() {
        return Ok(out);
    }
    let chol = jittered_cholesky(&params.deriv_matrix(t, t))?.factor;
    // Rows of these are L⁻¹ k10(t, ·) transposed: one row per evaluation point.
    let wa = chol.solve_lower_matrix(&params.cross_matrix(a, t).transpose()).transpose();
    let wb = chol.solve_lower_matrix(&params.cross_matrix(b, t).transpose()).transpose();
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[(i, j)] -= dot(wa.row(i), wb.row(j));
        }
    }
    Ok(out)
}

fn symmetrize<T: Real>(m: &mut Matrix<T>) {
    let half = T::lit(0.5);
    for i in 0..m.rows() {
        for j in 0..i {
            let v = half * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Mean and covariance of the constrained process at `x`.
///
/// With a constant mean the derivative mean vanishes, so the constrained
/// mean is the constant itself.
pub fn constrained_moments<T: Real>(prior: &DgpPrior<T>, x: &[T]) -> Result<(Vec<T>, Matrix<T>)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DgpError::NonFinite("evaluation points"));
    }
    let mut cov = constrained_cov(&prior.params, &prior.t, x, x)?;
    symmetrize(&mut cov);
    Ok((vec![prior.mean; x.len()], cov))
}

/// Draws `count` sample paths of the constrained process on `grid`.
pub fn sample_dgp_paths<T: Real, R: Rng + ?Sized>(
    prior: &DgpPrior<T>,
    grid: &[T],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<T>>> {
    if count == 0 {
        return Err(DgpError::InvalidParameter("path count must be at least 1".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DgpError::InvalidParameter("grid must be strictly increasing".into()));
    }
    let (mean, cov) = constrained_moments(prior, grid)?;
    let chol = jittered_cholesky(&cov)?.factor;
    let mut z = vec![T::zero(); grid.len()];
    Ok((0..count)
        .map(|_| {
            z.iter_mut().for_each(|v| *v = T::sample_standard_normal(rng));
            chol.lower_mul(&z)
                .into_iter()
                .zip(&mean)
                .map(|(d, &m)| m + d)
                .collect()
        })
        .collect())
}

/// `A(t) = τ₀² K̃(t) + I`, the observation covariance divided by `σ²`.
pub fn marginal_cov_a<T: Real>(t: &[T], theta: &Theta<T>, x: &[T]) -> Result<Matrix<T>> {
    let unit = KernelParams::unit(theta.h)?;
    let mut a = constrained_cov(&unit, t, x, x)?;
    symmetrize(&mut a);
    a.scale(theta.tau0 * theta.tau0);
    a.add_diag(T::one());
    Ok(a)
}

fn check_data<T: Real>(y: &[T], x: &[T], sigma_sq: T) -> Result<()> {
    if y.len() != x.len() {
        return Err(DgpError::DimensionMismatch(format!(
            "{} observations for {} inputs",
            y.len(),
            x.len()
        )));
    }
    if y.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(DgpError::NonFinite("observations"));
    }
    if !(sigma_sq > T::zero()) || !sigma_sq.is_finite() {
        return Err(DgpError::InvalidParameter(format!("sigma_sq must be positive, got {sigma_sq}")));
    }
    Ok(())
}

/// Log-density components of `N(0, σ² A)` that depend on `t` and `θ`:
/// `log det A` and `yᵀ A⁻¹ y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evidence<T> {
    pub log_det: T,
    pub quad: T,
}

impl<T: Real> Evidence<T> {
    /// `−(n/2) log(2πσ²) − ½ log det A − yᵀA⁻¹y / (2σ²)`.
    pub fn log_lik(&self, sigma_sq: T, n: usize) -> T {
        let half = T::lit(0.5);
        let nn = T::lit(n as f64);
        -half * nn * (T::TAU() * sigma_sq).ln() - half * self.log_det - self.quad / (T::lit(2.0) * sigma_sq)
    }
}

/// `log p(y | t, σ², θ)` through a jittered Cholesky of `A(t)`.
pub fn log_marginal_likelihood<T: Real>(
    y: &[T],
    t: &[T],
    sigma_sq: T,
    theta: &Theta<T>,
    x: &[T],
) -> Result<T> {
    check_data(y, x, sigma_sq)?;
    let ev = direct_evidence(y, t, theta, x)?;
    let v = ev.log_lik(sigma_sq, y.len());
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DgpError::NonFinite("log marginal likelihood"))
    }
}

fn direct_evidence<T: Real>(y: &[T], t: &[T], theta: &Theta<T>, x: &[T]) -> Result<Evidence<T>> {
    let a = marginal_cov_a(t, theta, x)?;
    let chol = jittered_cholesky(&a)?.factor;
    Ok(Evidence {
        log_det: chol.log_det(),
        quad: chol.quad_form(y),
    })
}

/// Observations whitened against `B = τ₀² K + I`.
#[derive(Debug, Clone)]
pub struct Whitened<T> {
    y: Vec<T>,
    z: Vec<T>,
    zz: T,
}

impl<T: Real> Whitened<T> {
    pub fn observations(&self) -> &[T] {
        &self.y
    }
}

/// Evaluates `log det A(t)` and `yᵀA(t)⁻¹y` for many `t` at a fixed `θ`.
///
/// `A(t)` is a rank-`m` downdate of `B = τ₀² K + I`, so after one
/// factorization of `B` each evaluation only needs `m` triangular solves and
/// an `m × m` capacitance matrix. Falls back to the dense route if the
/// capacitance matrix loses definiteness.
#[derive(Debug, Clone)]
pub struct MarginalEvaluator<T: Real> {
    x: Vec<T>,
    theta: Theta<T>,
    unit: KernelParams<T>,
    chol_b: Cholesky<T>,
    log_det_b: T,
}

impl<T: Real> MarginalEvaluator<T> {
    pub fn new(x: &[T], theta: Theta<T>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DgpError::NonFinite("inputs"));
        }
        let unit = KernelParams::unit(theta.h)?;
        let mut b = unit.gram(x);
        b.scale(theta.tau0 * theta.tau0);
        b.add_diag(T::one());
        let chol_b = jittered_cholesky(&b)?.factor;
        let log_det_b = chol_b.log_det();
        Ok(Self {
            x: x.to_vec(),
            theta,
            unit,
            chol_b,
            log_det_b,
        })
    }

    pub fn theta(&self) -> Theta<T> {
        self.theta
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn inputs(&self) -> &[T] {
        &self.x
    }

    pub fn whiten(&self, y: &[T]) -> Result<Whitened<T>> {
        check_data(y, &self.x, T::one())?;
        let z = self.chol_b.solve_lower(y);
        let zz = dot(&z, &z);
        Ok(Whitened { y: y.to_vec(), z, zz })
    }

    pub fn evidence(&self, t: &[T], y: &Whitened<T>) -> Result<Evidence<T>> {
        if t.is_empty() {
            return Ok(Evidence {
                log_det: self.log_det_b,
                quad: y.zz,
            });
        }
        check_separation(t, self.theta.h)?;
        match self.woodbury(t, y) {
            Some(ev) => Ok(ev),
            None => direct_evidence(&y.y, t, &self.theta, &self.x),
        }
    }

    fn woodbury(&self, t: &[T], y: &Whitened<T>) -> Option<Evidence<T>> {
        let m = t.len();
        let tau0_sq = self.theta.tau0 * self.theta.tau0;
        // Columns of L⁻¹ k01(x, t), stored as rows.
        let mut u = Matrix::zeros(m, self.n());
        for (j, &tj) in t.iter().enumerate() {
            let row = u.row_mut(j);
            for (r, &xi) in row.iter_mut().zip(&self.x) {
                *r = self.unit.cov01(xi, tj);
            }
            self.chol_b.solve_lower_in_place(row);
        }
        let k11 = self.unit.deriv_matrix(t, t);
        let mut s = k11.clone();
        s.scale(T::one() / tau0_sq);
        for i in 0..m {
            for j in 0..m {
                s[(i, j)] -= dot(u.row(i), u.row(j));
            }
        }
        let chol_s = Cholesky::new(&s).ok()?;
        let chol_k11 = Cholesky::new(&k11).ok()?;
        let uz: Vec<T> = (0..m).map(|j| dot(u.row(j), &y.z)).collect();
        let log_det = self.log_det_b + chol_s.log_det() - chol_k11.log_det() + T::lit(m as f64) * tau0_sq.ln();
        let quad = y.zz + chol_s.quad_form(&uz);
        (log_det.is_finite() && quad.is_finite() && quad >= T::zero()).then_some(Evidence { log_det, quad })
    }
}

/// Posterior predictive of `f(x*)` given the data and `f'(t) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution<T> {
    pub grid: Vec<T>,
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

/// Predictive moments with the `σ²` factor pulled out of the covariance.
///
/// Under `τ = τ₀σ` the predictive mean does not depend on `σ²` and the
/// covariance is `σ²` times `unit_cov`.
#[derive(Debug, Clone)]
pub struct ScaledPredictive<T> {
    pub mean: Vec<T>,
    pub unit_cov: Matrix<T>,
}

pub fn scaled_predictive<T: Real>(
    y: &[T],
    x: &[T],
    t: &[T],
    theta: &Theta<T>,
    grid: &[T],
) -> Result<ScaledPredictive<T>> {
    check_data(y, x, T::one())?;
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(DgpError::NonFinite("prediction grid"));
    }
    let unit = KernelParams::unit(theta.h)?;
    check_separation(t, theta.h)?;
    let n = x.len();
    let m = t.len();
    let tau0_sq = theta.tau0 * theta.tau0;

    let mut g = Matrix::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = tau0_sq * unit.cov(x[i], x[j]);
        }
        g[(i, i)] += T::one();
        for j in 0..m {
            let v = tau0_sq * unit.cov01(x[i], t[j]);
            g[(i, n + j)] = v;
            g[(n + j, i)] = v;
        }
    }
    for i in 0..m {
        for j in 0..m {
            g[(n + i, n + j)] = tau0_sq * unit.cov11(t[i], t[j]);
        }
    }
    let chol = jittered_cholesky(&g)?.factor;

    let mut rhs = y.to_vec();
    rhs.resize(n + m, T::zero());
    chol.solve_lower_in_place(&mut rhs);

    // One whitened cross-covariance row per grid point.
    let mut w = Matrix::zeros(grid.len(), n + m);
    for (r, &gs) in grid.iter().enumerate() {
        let row = w.row_mut(r);
        for i in 0..n {
            row[i] = tau0_sq * unit.cov(gs, x[i]);
        }
        for j in 0..m {
            row[n + j] = tau0_sq * unit.cov01(gs, t[j]);
        }
        chol.solve_lower_in_place(row);
    }
    let mean = (0..grid.len()).map(|r| dot(w.row(r), &rhs)).collect();
    let mut unit_cov = Matrix::zeros(grid.len(), grid.len());
    for i in 0..grid.len() {
        for j in 0..=i {
            let v = tau0_sq * unit.cov(grid[i], grid[j]) - dot(w.row(i), w.row(j));
            unit_cov[(i, j)] = v;
            unit_cov[(j, i)] = v;
        }
    }
    Ok(ScaledPredictive { mean, unit_cov })
}

/// `f(x*) | y, f'(t) = 0` under `τ² = τ₀² σ²` with noise `σ² I` on `y`.
pub fn posterior_predictive<T: Real>(
    y: &[T],
    x: &[T],
    t: &[T],
    sigma_sq: T,
    theta: &Theta<T>,
    grid: &[T],
) -> Result<PredictiveDistribution<T>> {
    check_data(y, x, sigma_sq)?;
    let sp = scaled_predictive(y, x, t, theta, grid)?;
    let mut cov = sp.unit_cov;
    cov.scale(sigma_sq);
    Ok(PredictiveDistribution {
        grid: grid.to_vec(),
        mean: sp.mean,
        cov,
    })
}
