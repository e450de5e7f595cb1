use serde::{Deserialize, Serialize};

use crate::error::{DgpError, Result};
use crate::scalar::Real;
use crate::stats;

pub const KDE_GRID_LEN: usize = 512;

/// A density tabulated on an equispaced grid spanning `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DensityGrid<T: Real> {
    pub grid: Vec<T>,
    pub density: Vec<T>,
    pub bandwidth: T,
}

impl<T: Real> DensityGrid<T> {
    pub fn lower(&self) -> T {
        self.grid[0]
    }

    pub fn upper(&self) -> T {
        self.grid[self.grid.len() - 1]
    }

    pub fn spacing(&self) -> T {
        (self.upper() - self.lower()) / T::lit((self.grid.len() - 1) as f64)
    }

    /// Index of the grid point nearest to `v`, clamped into range.
    pub fn cell(&self, v: T) -> usize {
        let pos = ((v - self.lower()) / self.spacing()).round();
        let last = self.grid.len() - 1;
        if !(pos > T::zero()) {
            0
        } else {
            pos.to_usize().unwrap_or(last).min(last)
        }
    }

    pub fn trapezoid(&self) -> T {
        let h = self.spacing();
        let inner: T = self.density[1..self.density.len() - 1].iter().copied().sum();
        h * (inner + T::lit(0.5) * (self.density[0] + self.density[self.density.len() - 1]))
    }
}

/// `0.9 · min(sd, IQR/1.34) · n^{-1/5}`, falling back to `sd` when the IQR is zero.
pub fn silverman_bandwidth<T: Real>(draws: &[T]) -> T {
    let sd = stats::std_dev(draws);
    let sorted = stats::sorted(draws);
    let iqr = stats::quantile_sorted(&sorted, T::lit(0.75)) - stats::quantile_sorted(&sorted, T::lit(0.25));
    let spread = if iqr > T::zero() { sd.min(iqr / T::lit(1.34)) } else { sd };
    T::lit(0.9) * spread * T::lit(draws.len() as f64).powf(T::lit(-0.2))
}

/// Gaussian KDE of `draws` on a [`KDE_GRID_LEN`]-point grid over `[a, b]`,
/// renormalized to unit trapezoid mass on that interval.
pub fn kde<T: Real>(draws: &[T], a: T, b: T) -> Result<DensityGrid<T>> {
    if draws.len() < 10 {
        return Err(DgpError::InvalidParameter(format!("KDE needs at least 10 draws, got {}", draws.len())));
    }
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(DgpError::InvalidParameter("KDE domain must satisfy a < b".into()));
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(DgpError::NonFinite("KDE draws"));
    }
    let first = draws[0];
    if draws.iter().all(|&v| v == first) {
        return Err(DgpError::DegenerateDensity("all draws are identical".into()));
    }
    let bw = silverman_bandwidth(draws);
    if !(bw > T::zero()) {
        return Err(DgpError::DegenerateDensity("zero bandwidth".into()));
    }

    let step = (b - a) / T::lit((KDE_GRID_LEN - 1) as f64);
    let grid: Vec<T> = (0..KDE_GRID_LEN).map(|i| a + step * T::lit(i as f64)).collect();
    let inv_bw = T::one() / bw;
    // Contributions beyond 8 bandwidths are below f64 resolution relative to the peak.
    let cutoff = T::lit(8.0) * bw;
    let mut density = vec![T::zero(); KDE_GRID_LEN];
    let mut sorted = draws.to_vec();
    sorted.sort_by(|p, q| p.partial_cmp(q).unwrap());
    for (g, d) in grid.iter().zip(density.iter_mut()) {
        let lo = sorted.partition_point(|&v| v < *g - cutoff);
        let hi = sorted.partition_point(|&v| v <= *g + cutoff);
        let mut acc = T::zero();
        for &v in &sorted[lo..hi] {
            let z = (*g - v) * inv_bw;
            acc += (-T::lit(0.5) * z * z).exp();
        }
        *d = acc;
    }
    let mut out = DensityGrid {
        grid,
        density,
        bandwidth: bw,
    };
    let mass = out.trapezoid();
    if !(mass > T::zero()) {
        return Err(DgpError::DegenerateDensity("no draw mass inside the domain".into()));
    }
    out.density.iter_mut().for_each(|d| *d /= mass);
    Ok(out)
}
