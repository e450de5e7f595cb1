use serde::{Deserialize, Serialize};

use super::DensityGrid;
use crate::error::{DgpError, Result};
use crate::scalar::Real;

/// Runs of fewer grid cells than this are treated as KDE ripple.
pub const MIN_SEGMENT_CELLS: usize = 2;

/// Highest-density region `{t : g(t) ≥ g_α}` as a union of intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HpdRegion<T: Real> {
    pub alpha: T,
    pub threshold: T,
    pub segments: Vec<(T, T)>,
    /// Density argmax inside each segment.
    pub modes: Vec<T>,
    /// Fraction of draws inside the segments.
    pub mass: T,
}

impl<T: Real> HpdRegion<T> {
    /// Estimated number of stationary points.
    pub fn count(&self) -> usize {
        self.segments.len()
    }

    pub fn contains(&self, v: T) -> bool {
        self.segments.iter().any(|&(l, u)| l <= v && v <= u)
    }
}

/// Builds the HPD region of `draws` at level `1 − alpha` from their tabulated density.
///
/// Grid cells are added in order of decreasing density until they hold at
/// least `1 − alpha` of the draws; every cell at or above the resulting
/// threshold is kept. Gaps and runs shorter than [`MIN_SEGMENT_CELLS`] are
/// treated as ripple: such gaps are bridged, and such runs are merged into a
/// neighbouring run within that many cells or else dropped.
pub fn hpd<T: Real>(density: &DensityGrid<T>, draws: &[T], alpha: T) -> Result<HpdRegion<T>> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(DgpError::InvalidParameter("alpha must lie in (0, 1)".into()));
    }
    if draws.is_empty() {
        return Err(DgpError::InvalidParameter("no draws".into()));
    }
    let len = density.grid.len();
    if len < 2 || density.density.len() != len {
        return Err(DgpError::DimensionMismatch("density grid".into()));
    }
    let mut counts = vec![0usize; len];
    for &d in draws {
        counts[density.cell(d)] += 1;
    }

    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&i, &j| density.density[j].partial_cmp(&density.density[i]).unwrap().then(i.cmp(&j)));
    let needed = (T::one() - alpha) * T::lit(draws.len() as f64);
    let mut acc = 0usize;
    let mut threshold = density.density[order[len - 1]];
    for &i in &order {
        acc += counts[i];
        if T::lit(acc as f64) >= needed {
            threshold = density.density[i];
            break;
        }
    }
    let inside: Vec<bool> = density.density.iter().map(|&g| g >= threshold).collect();

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < len {
        if inside[i] {
            let start = i;
            while i + 1 < len && inside[i + 1] {
                i += 1;
            }
            runs.push((start, i));
        }
        i += 1;
    }
    let runs = merge_short_runs(bridge_gaps(runs));

    let step = density.spacing();
    let half = T::lit(0.5) * step;
    let mut segments = Vec::with_capacity(runs.len());
    let mut modes = Vec::with_capacity(runs.len());
    let mut kept = 0usize;
    for &(s, e) in &runs {
        let lo = (density.grid[s] - half).max(density.lower());
        let hi = (density.grid[e] + half).min(density.upper());
        segments.push((lo, hi));
        let arg = (s..=e)
            .max_by(|&p, &q| density.density[p].partial_cmp(&density.density[q]).unwrap().then(q.cmp(&p)))
            .unwrap();
        modes.push(density.grid[arg]);
        kept += counts[s..=e].iter().sum::<usize>();
    }
    Ok(HpdRegion {
        alpha,
        threshold,
        segments,
        modes,
        mass: T::lit(kept as f64) / T::lit(draws.len() as f64),
    })
}

/// Joins runs separated by fewer than [`MIN_SEGMENT_CELLS`] cells.
fn bridge_gaps(runs: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for r in runs {
        match out.last_mut() {
            Some(p) if r.0 - p.1 - 1 < MIN_SEGMENT_CELLS => p.1 = r.1,
            _ => out.push(r),
        }
    }
    out
}

fn merge_short_runs(mut runs: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let gap = |a: (usize, usize), b: (usize, usize)| b.0 - a.1 - 1;
    while let Some(k) = runs.iter().position(|r| r.1 - r.0 + 1 < MIN_SEGMENT_CELLS) {
        let prev = (k > 0).then(|| gap(runs[k - 1], runs[k]));
        let next = runs.get(k + 1).map(|&n| gap(runs[k], n));
        let target = match (prev, next) {
            (Some(p), Some(n)) if p <= MIN_SEGMENT_CELLS || n <= MIN_SEGMENT_CELLS => Some(if p <= n { k - 1 } else { k + 1 }),
            (Some(p), None) if p <= MIN_SEGMENT_CELLS => Some(k - 1),
            (None, Some(n)) if n <= MIN_SEGMENT_CELLS => Some(k + 1),
            _ => None,
        };
        let run = runs.remove(k);
        match target {
            Some(t) if t < k => runs[t].1 = run.1,
            Some(_) => runs[k].0 = run.0,
            None => {}
        }
    }
    runs
}
