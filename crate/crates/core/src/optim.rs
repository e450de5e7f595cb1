//! Derivative-free minimization on a box.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions<T> {
    pub initial_step: T,
    /// Stop once every vertex lies within this distance of the best one.
    pub x_tol: T,
    /// ...and the objective spread across vertices is below this.
    pub f_tol: T,
    pub max_evals: usize,
}

impl<T: Real> Default for NelderMeadOptions<T> {
    fn default() -> Self {
        Self {
            initial_step: T::lit(0.1),
            x_tol: T::lit(1e-8),
            f_tol: T::lit(1e-12),
            max_evals: 600,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub evals: usize,
    pub converged: bool,
}

fn project<T: Real>(x: &mut [T], lower: &[T], upper: &[T]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.max(lo).min(hi);
    }
}

/// Nelder–Mead with trial points clamped into `[lower, upper]`.
///
/// Non-finite objective values are treated as `+∞`.
pub fn nelder_mead<T: Real>(
    mut f: impl FnMut(&[T]) -> T,
    x0: &[T],
    lower: &[T],
    upper: &[T],
    opts: &NelderMeadOptions<T>,
) -> Minimum<T> {
    let dim = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[T], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            T::infinity()
        }
    };

    let mut start = x0.to_vec();
    project(&mut start, lower, upper);
    let mut simplex: Vec<Vec<T>> = vec![start.clone()];
    for k in 0..dim {
        let mut v = start.clone();
        // Step away from the nearer bound so the vertex stays distinct.
        let step = opts.initial_step;
        v[k] = if v[k] + step <= upper[k] { v[k] + step } else { v[k] - step };
        project(&mut v, lower, upper);
        simplex.push(v);
    }
    let mut values: Vec<T> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut converged = false;
    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = &simplex[0];
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(best).map(|(a, b)| (*a - *b).abs()))
            .fold(T::zero(), T::max);
        let spread_f = (values[dim] - values[0]).abs();
        if spread_x <= opts.x_tol && spread_f <= opts.f_tol * (T::one() + values[0].abs()) {
            converged = true;
            break;
        }

        let mut centroid = vec![T::zero(); dim];
        for v in &simplex[..dim] {
            for (c, &x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        let inv = T::one() / T::lit(dim as f64);
        centroid.iter_mut().for_each(|c| *c *= inv);

        let along = |coef: T| -> Vec<T> {
            let mut p: Vec<T> = centroid
                .iter()
                .zip(&simplex[dim])
                .map(|(&c, &w)| c + coef * (c - w))
                .collect();
            project(&mut p, lower, upper);
            p
        };

        let reflected = along(T::one());
        let fr = eval(&reflected, &mut evals);
        if fr < values[0] {
            let expanded = along(two);
            let fe = eval(&expanded, &mut evals);
            if fe < fr {
                simplex[dim] = expanded;
                values[dim] = fe;
            } else {
                simplex[dim] = reflected;
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[dim] {
            let p = along(half);
            let v = eval(&p, &mut evals);
            (p, v)
        } else {
            let p = along(-half);
            let v = eval(&p, &mut evals);
            (p, v)
        };
        if fc < values[dim].min(fr) {
            simplex[dim] = contracted;
            values[dim] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        for i in 1..=dim {
            let shrunk: Vec<T> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(&b, &v)| b + half * (v - b))
                .collect();
            values[i] = eval(&shrunk, &mut evals);
            simplex[i] = shrunk;
        }
    }

    let (ib, _) = values
        .iter()
        .enumerate()
        .fold((0, T::infinity()), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    Minimum {
        x: simplex[ib].clone(),
        value: values[ib],
        evals,
        converged,
    }
}
