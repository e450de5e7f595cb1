//! Squared-exponential covariance and its derivative cross-covariances.
//!
//! For `k(x, x') = τ² exp(−(x − x')² / 2h²)` the joint process
//! `(f, f')` has
//!
//! * `k01(x, t) = Cov(f(x), f'(t)) = k(x, t) (x − t) / h²`
//! * `k10(t, x) = k01(x, t)`
//! * `k11(s, t) = Cov(f'(s), f'(t)) = k(s, t) (1 − (s − t)² / h²) / h²`

use serde::{Deserialize, Serialize};

use crate::error::{DgpError, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Constraint points closer than this multiple of `h` are rejected.
pub const MIN_SEPARATION_FACTOR: f64 = 1e-3;

/// Squared-exponential hyperparameters `(τ², h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct KernelParams<T: Real> {
    tau_sq: T,
    h: T,
}

impl<T: Real> KernelParams<T> {
    pub fn new(tau_sq: T, h: T) -> Result<Self> {
        if !tau_sq.is_finite() || !h.is_finite() {
            return Err(DgpError::NonFinite("kernel parameters"));
        }
        if tau_sq <= T::zero() || h <= T::zero() {
            return Err(DgpError::InvalidParameter(format!(
                "kernel needs tau_sq > 0 and h > 0, got ({tau_sq}, {h})"
            )));
        }
        Ok(Self { tau_sq, h })
    }

    /// Unit-variance kernel with length scale `h`.
    pub fn unit(h: T) -> Result<Self> {
        Self::new(T::one(), h)
    }

    #[inline]
    pub fn tau_sq(&self) -> T {
        self.tau_sq
    }

    #[inline]
    pub fn h(&self) -> T {
        self.h
    }

    #[inline]
    pub fn cov(&self, a: T, b: T) -> T {
        let d = a - b;
        self.tau_sq * (-(d * d) / (T::lit(2.0) * self.h * self.h)).exp()
    }

    #[inline]
    pub fn cov01(&self, x: T, t: T) -> T {
        let h2 = self.h * self.h;
        self.cov(x, t) * (x - t) / h2
    }

    #[inline]
    pub fn cov10(&self, t: T, x: T) -> T {
        self.cov01(x, t)
    }

    #[inline]
    pub fn cov11(&self, s: T, t: T) -> T {
        let h2 = self.h * self.h;
        let d = s - t;
        self.cov(s, t) * (T::one() - d * d / h2) / h2
    }

    /// `k(a, b)` over two point sets.
    pub fn cov_matrix(&self, a: &[T], b: &[T]) -> Matrix<T> {
        Matrix::from_fn(a.len(), b.len(), |i, j| self.cov(a[i], b[j]))
    }

    /// Symmetric `k(x, x)`, filling only one triangle with kernel calls.
    pub fn gram(&self, x: &[T]) -> Matrix<T> {
        let n = x.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.tau_sq;
            for j in 0..i {
                let v = self.cov(x[i], x[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// `k01(x, t)`: rows indexed by `x`, columns by `t`.
    pub fn cross_matrix(&self, x: &[T], t: &[T]) -> Matrix<T> {
        Matrix::from_fn(x.len(), t.len(), |i, j| self.cov01(x[i], t[j]))
    }

    /// `k11(s, t)`.
    pub fn deriv_matrix(&self, s: &[T], t: &[T]) -> Matrix<T> {
        Matrix::from_fn(s.len(), t.len(), |i, j| self.cov11(s[i], t[j]))
    }
}

/// Reparameterized hyperparameters `θ = (τ₀, h)` with `τ = τ₀ σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Theta<T: Real> {
    pub tau0: T,
    pub h: T,
}

impl<T: Real> Theta<T> {
    pub fn new(tau0: T, h: T) -> Result<Self> {
        if !tau0.is_finite() || !h.is_finite() {
            return Err(DgpError::NonFinite("theta"));
        }
        if tau0 <= T::zero() || h <= T::zero() {
            return Err(DgpError::InvalidParameter(format!(
                "theta needs tau0 > 0 and h > 0, got ({tau0}, {h})"
            )));
        }
        Ok(Self { tau0, h })
    }

    pub fn from_log(log_tau0: T, log_h: T) -> Self {
        Self {
            tau0: log_tau0.exp(),
            h: log_h.exp(),
        }
    }

    pub fn to_log(self) -> [T; 2] {
        [self.tau0.ln(), self.h.ln()]
    }

    /// Kernel in signal units for a given noise variance: `τ² = τ₀² σ²`.
    pub fn kernel_params(&self, sigma_sq: T) -> Result<KernelParams<T>> {
        KernelParams::new(self.tau0 * self.tau0 * sigma_sq, self.h)
    }

    pub fn distance(&self, other: &Self) -> T {
        let a = self.tau0 - other.tau0;
        let b = self.h - other.h;
        (a * a + b * b).sqrt()
    }
}

fn finite2<T: Real>(a: T, b: T, what: &'static str) -> Result<()> {
    if a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(DgpError::NonFinite(what))
    }
}

/// `τ² exp(−|xi − xj|² / 2h²)`.
pub fn se_cov<T: Real>(xi: T, xj: T, p: &KernelParams<T>) -> Result<T> {
    finite2(xi, xj, "se_cov inputs")?;
    Ok(p.cov(xi, xj))
}

/// `∂k(x, t)/∂t`, the covariance between `f(x)` and `f'(t)`.
pub fn se_cov01<T: Real>(x: T, t: T, p: &KernelParams<T>) -> Result<T> {
    finite2(x, t, "se_cov01 inputs")?;
    Ok(p.cov01(x, t))
}

/// `k10(t, x) = k01(x, t)`.
pub fn se_cov10<T: Real>(t: T, x: T, p: &KernelParams<T>) -> Result<T> {
    finite2(t, x, "se_cov10 inputs")?;
    Ok(p.cov10(t, x))
}

/// `∂²k(s, t)/∂s∂t`, the covariance of the derivative process.
pub fn se_cov11<T: Real>(ti: T, tj: T, p: &KernelParams<T>) -> Result<T> {
    finite2(ti, tj, "se_cov11 inputs")?;
    Ok(p.cov11(ti, tj))
}

/// Rejects constraint vectors with a pair closer than `1e-3·h`.
pub fn check_separation<T: Real>(t: &[T], h: T) -> Result<()> {
    if t.iter().any(|v| !v.is_finite()) {
        return Err(DgpError::NonFinite("constraint points"));
    }
    let min_sep = T::lit(MIN_SEPARATION_FACTOR) * h;
    for i in 0..t.len() {
        for j in 0..i {
            if (t[i] - t[j]).abs() < min_sep {
                return Err(DgpError::DegenerateConstraint {
                    first: t[j].to_f64_lossy(),
                    second: t[i].to_f64_lossy(),
                    min_separation: min_sep.to_f64_lossy(),
                });
            }
        }
    }
    Ok(())
}

/// Covariance blocks of `(f(x), f'(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovBlocks<T> {
    /// `k(x, x)`, `n × n`.
    pub k: Matrix<T>,
    /// `k01(x, t)`, `n × m`.
    pub k01: Matrix<T>,
    /// `k10(t, x)`, `m × n`.
    pub k10: Matrix<T>,
    /// `k11(t, t)`, `m × m`.
    pub k11: Matrix<T>,
}

impl<T: Real> CovBlocks<T> {
    /// The joint `(n + m) × (n + m)` covariance `[[K, K01], [K10, K11]]`.
    pub fn stacked(&self) -> Matrix<T> {
        let n = self.k.rows();
        let m = self.k11.rows();
        Matrix::from_fn(n + m, n + m, |i, j| match (i < n, j < n) {
            (true, true) => self.k[(i, j)],
            (true, false) => self.k01[(i, j - n)],
            (false, true) => self.k10[(i - n, j)],
            (false, false) => self.k11[(i - n, j - n)],
        })
    }
}

pub fn build_cov_blocks<T: Real>(x: &[T], t: &[T], p: &KernelParams<T>) -> Result<CovBlocks<T>> {
    if x.is_empty() {
        return Err(DgpError::InvalidParameter("no input points".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DgpError::NonFinite("input points"));
    }
    check_separation(t, p.h())?;
    let k01 = p.cross_matrix(x, t);
    Ok(CovBlocks {
        k: p.gram(x),
        k10: k01.transpose(),
        k01,
        k11: p.deriv_matrix(t, t),
    })
}
