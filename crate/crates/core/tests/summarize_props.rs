use dgp_core::kernel::Theta;
use dgp_core::mcem::{DrawMetadata, McemConfig, Mode, PosteriorDraws, TPrior};
use dgp_core::summarize::*;
use dgp_core::Real;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn normals(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| mean + sd * f64::sample_standard_normal(&mut rng)).collect()
}

fn mixture(n: usize, a: f64, b: f64, sd: f64, seed: u64) -> Vec<f64> {
    let mut v = normals(n / 2, a, sd, seed);
    v.extend(normals(n - n / 2, b, sd, seed + 1));
    v
}

#[test]
fn kde_of_standard_normal_at_zero() {
    let d = normals(100_000, 0.0, 1.0, 1);
    let g = kde(&d, -5.0, 5.0).unwrap();
    let at0 = g.density[g.cell(0.0)];
    assert!((at0 - 0.398_942_3).abs() < 0.02, "{at0}");
    assert!((g.trapezoid() - 1.0).abs() < 1e-6);
}

#[test]
fn kde_of_uniform_is_flat_inside() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d: Vec<f64> = (0..50_000).map(|_| f64::sample_unit(&mut rng)).collect();
    let g = kde(&d, 0.0, 1.0).unwrap();
    let inner: Vec<f64> = g
        .grid
        .iter()
        .zip(&g.density)
        .filter(|(x, _)| **x > 0.1 && **x < 0.9)
        .map(|(_, v)| *v)
        .collect();
    let max = inner.iter().cloned().fold(f64::MIN, f64::max);
    let min = inner.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max / min <= 1.3, "{max} / {min}");
}

#[test]
fn hpd_of_normal_is_central_interval() {
    let d = normals(20_000, 0.0, 1.0, 3);
    let r = hpd(&kde(&d, -5.0, 5.0).unwrap(), &d, 0.05).unwrap();
    assert_eq!(r.count(), 1);
    let (l, u) = r.segments[0];
    assert!((l + 1.96).abs() < 0.1 && (u - 1.96).abs() < 0.1, "{l}, {u}");
    assert!(r.mass >= 0.94);
}

#[test]
fn hpd_splits_separated_mixture() {
    let d = mixture(20_000, 0.0, 2.0, 0.1, 4);
    let r = hpd(&kde(&d, -1.0, 3.0).unwrap(), &d, 0.05).unwrap();
    assert_eq!(r.count(), 2);
    assert!((r.modes[0]).abs() < 0.05 && (r.modes[1] - 2.0).abs() < 0.05, "{:?}", r.modes);
}

#[test]
fn hpd_regions_nest() {
    let d = mixture(10_000, 0.0, 1.5, 0.4, 5);
    let g = kde(&d, -2.0, 3.5).unwrap();
    let wide = hpd(&g, &d, 0.05).unwrap();
    let narrow = hpd(&g, &d, 0.5).unwrap();
    for &(l, u) in &narrow.segments {
        assert!(wide.segments.iter().any(|&(a, b)| a <= l && u <= b));
    }
}

#[test]
fn hpd_rejects_bad_alpha() {
    let d = normals(100, 0.0, 1.0, 6);
    let g = kde(&d, -4.0, 4.0).unwrap();
    assert!(hpd(&g, &d, 0.0).is_err());
    assert!(hpd(&g, &d, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hpd_invariants(seed in 0u64..10_000, sep in 0.0f64..3.0, sd in 0.1f64..1.0, alpha in 0.02f64..0.5) {
        let d = mixture(2_000, 0.0, sep, sd, seed);
        let g = kde(&d, -4.0, 7.0).unwrap();
        let r = hpd(&g, &d, alpha).unwrap();
        // Mass, with one grid cell of slack.
        let cell = 1.0 / d.len() as f64 + g.density.iter().cloned().fold(0.0, f64::max) * g.spacing();
        prop_assert!(r.mass >= 1.0 - alpha - cell);
        // Sorted, disjoint segments with their modes inside.
        for w in r.segments.windows(2) {
            prop_assert!(w[0].1 < w[1].0);
        }
        for (&(l, u), &m) in r.segments.iter().zip(&r.modes) {
            prop_assert!(l <= m && m <= u);
            let i = g.cell(m);
            let left = if i > 0 { g.density[i - 1] } else { f64::MIN };
            let right = if i + 1 < g.density.len() { g.density[i + 1] } else { f64::MIN };
            prop_assert!(g.density[i] >= left && g.density[i] >= right);
        }
        // Threshold maximality: the next density level up holds too little mass.
        let next = g.density.iter().cloned().filter(|&v| v > r.threshold).fold(f64::MAX, f64::min);
        if next < f64::MAX {
            let inside = d.iter().filter(|&&v| g.density[g.cell(v)] >= next).count() as f64 / d.len() as f64;
            prop_assert!(inside < 1.0 - alpha);
        }
    }

    #[test]
    fn gmm_means_ignore_input_order(seed in 0u64..1000) {
        let d = mixture(400, 100.0, 170.0, 5.0, seed);
        let mut rev = d.clone();
        rev.reverse();
        let a = fit_gmm2(&d, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = fit_gmm2(&rev, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        prop_assert!((a.means[0] - b.means[0]).abs() < 1e-6 && (a.means[1] - b.means[1]).abs() < 1e-6);
    }
}

#[test]
fn gmm_recovers_separated_components() {
    let d = mixture(4_000, 100.0, 170.0, 5.0, 7);
    let f = fit_gmm2(&d, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert!((f.means[0] - 100.0).abs() < 2.0 && (f.means[1] - 170.0).abs() < 2.0, "{:?}", f.means);
    assert!((f.weights[0] + f.weights[1] - 1.0).abs() < 1e-12);
    assert!(f.weights.iter().all(|&w| w > 0.0) && f.sds.iter().all(|&s| s > 0.0));
    assert!(f.means[0] <= f.means[1]);
}

#[test]
fn gmm_on_one_mode_concentrates_or_flags() {
    let d = normals(2_000, 50.0, 3.0, 8);
    let f = fit_gmm2(&d, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let heavy = f.weights[0].max(f.weights[1]);
    assert!(heavy >= 0.95 || !f.converged, "{f:?}");
}

fn draws(t: Vec<f64>, s2: Vec<f64>, theta: Theta<f64>) -> PosteriorDraws<f64> {
    let config = McemConfig::new(TPrior::uniform(0.0, 2.0).unwrap(), Mode::Single, 0);
    PosteriorDraws {
        dim: 1,
        t,
        sigma_sq: s2,
        theta_star: theta,
        meta: DrawMetadata {
            seed: 0,
            subject: 0,
            accept_rate: 1.0,
            failed_proposals: 0,
            iterations: 1,
            converged: true,
            config,
        },
    }
}

#[test]
fn bands_widen_with_inflated_noise() {
    let x: Vec<f64> = (0..30).map(|i| i as f64 / 15.0).collect();
    let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin()).collect();
    let grid: Vec<f64> = (0..100).map(|i| 2.0 * i as f64 / 99.0).collect();
    let theta = Theta::new(2.0, 0.4).unwrap();
    let t: Vec<f64> = (0..400).map(|i| 0.45 + 0.1 * (i % 7) as f64 / 7.0).collect();
    let base = draws(t.clone(), vec![0.05; 400], theta);
    let wide = draws(t, vec![0.2; 400], theta);
    let a = curve_bands(&base, &x, &y, &grid, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = curve_bands(&wide, &x, &y, &grid, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let wider = a.width().iter().zip(b.width()).filter(|(u, v)| v > *u).count();
    assert!(wider as f64 >= 0.95 * grid.len() as f64, "{wider}");
    assert_eq!((b.grid.len(), b.mean.len(), b.lower.len(), b.upper.len()), (100, 100, 100, 100));
    for i in 0..100 {
        assert!(b.lower[i] <= b.mean[i] && b.mean[i] <= b.upper[i]);
    }
}

#[test]
fn mean_curve_interpolates_dense_precise_data() {
    let x: Vec<f64> = (0..40).map(|i| i as f64 / 20.0).collect();
    let y: Vec<f64> = x.iter().map(|v| 1.0 + (2.0 * v).sin()).collect();
    let s2 = 1e-6;
    let d = draws(vec![0.785; 200], vec![s2; 200], Theta::new(1e3, 0.5).unwrap());
    let c = curve_bands(&d, &x, &y, &x, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for i in 0..x.len() {
        assert!((c.mean[i] - y[i]).abs() <= 2.0 * s2.sqrt(), "{} vs {}", c.mean[i], y[i]);
    }
}
