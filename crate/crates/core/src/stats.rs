//! Descriptive statistics over slices.

use crate::scalar::Real;

pub fn mean<T: Real>(v: &[T]) -> T {
    if v.is_empty() {
        return T::nan();
    }
    v.iter().copied().sum::<T>() / T::lit(v.len() as f64)
}

/// Unbiased sample variance.
pub fn variance<T: Real>(v: &[T]) -> T {
    if v.len() < 2 {
        return T::nan();
    }
    let m = mean(v);
    v.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::lit((v.len() - 1) as f64)
}

pub fn std_dev<T: Real>(v: &[T]) -> T {
    variance(v).sqrt()
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted<T: Real>(sorted: &[T], p: T) -> T {
    if sorted.is_empty() {
        return T::nan();
    }
    let n = sorted.len();
    let pos = p.max(T::zero()).min(T::one()) * T::lit((n - 1) as f64);
    let lo = pos.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = pos - T::lit(lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn sorted<T: Real>(v: &[T]) -> Vec<T> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    s
}

pub fn quantile<T: Real>(v: &[T], p: T) -> T {
    quantile_sorted(&sorted(v), p)
}
