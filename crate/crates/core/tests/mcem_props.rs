use dgp_core::dgp::{sample_dgp_paths, DgpPrior, MarginalEvaluator};
use dgp_core::kernel::{KernelParams, Theta};
use dgp_core::log_marginal_likelihood;
use dgp_core::mcem::*;
use dgp_core::summarize::{hpd, kde};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rngs(seed: u64) -> EStepRngs {
    let mk = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(k);
        r
    };
    EStepRngs {
        proposal: mk(0),
        accept: mk(1),
        gamma: mk(2),
    }
}

fn toy(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin() + 0.2 * rng.random_range(-1.0..1.0)).collect();
    let m = y.iter().sum::<f64>() / n as f64;
    (x, y.iter().map(|v| v - m).collect())
}

fn small_config(mode: Mode<f64>, seed: u64) -> McemConfig<f64> {
    let mut c = McemConfig::new(TPrior::uniform(0.0, 2.0).unwrap(), mode, seed);
    c.draws_per_iter = 300;
    c.subsample = 60;
    c.burn_in = 100;
    c.final_draws = 400;
    c.thin = 1;
    c.max_iter = 30;
    c
}

#[test]
fn sigma_sq_draws_match_inverse_gamma_mean() {
    let (x, y) = toy(20, 1);
    let theta = Theta::new(1.5, 0.4).unwrap();
    let ig = sigma_sq_full_conditional(&[0.6], &theta, &x, &y, 0.5, 0.5).unwrap();
    assert_eq!(ig.shape, 10.5);
    let quad = 2.0 * (ig.scale - 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| gibbs_sigma_sq(quad, 20, 0.5, 0.5, &mut rng)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let se = (ig.variance() / n as f64).sqrt();
    assert!((mean - ig.mean()).abs() < 3.0 * se, "{mean} vs {}", ig.mean());
}

#[test]
fn zero_data_scale_is_prior_scale() {
    let x = [0.0, 0.5, 1.0, 1.5];
    let ig = sigma_sq_full_conditional(&[0.7], &Theta::new(1.0, 0.5).unwrap(), &x, &[0.0; 4], 0.5, 0.8).unwrap();
    assert_eq!(ig.scale, 0.8);
    assert_eq!(ig.shape, 2.5);
}

/// Normalized likelihood of `t` integrated over each of `bins` equal cells.
fn grid_posterior(x: &[f64], y: &[f64], theta: Theta<f64>, s2: f64, bins: usize) -> Vec<f64> {
    let sub = 10;
    let mut mass = vec![0.0; bins];
    let mut logs = Vec::new();
    for b in 0..bins {
        for k in 0..sub {
            let t = 2.0 * (b as f64 + (k as f64 + 0.5) / sub as f64) / bins as f64;
            logs.push(log_marginal_likelihood(y, &[t], s2, &theta, x).unwrap());
        }
    }
    let top = logs.iter().cloned().fold(f64::MIN, f64::max);
    for (i, l) in logs.iter().enumerate() {
        mass[i / sub] += (l - top).exp();
    }
    let s: f64 = mass.iter().sum();
    mass.iter().map(|m| m / s).collect()
}

#[test]
fn mh_chain_targets_likelihood() {
    let (x, y) = toy(20, 4);
    let theta = Theta::new(1.0, 0.5).unwrap();
    let s2 = 0.3;
    let ev = MarginalEvaluator::new(&x, theta).unwrap();
    let prior = TPrior::uniform(0.0, 2.0).unwrap();
    let domains = [(0.0, 2.0)];
    let ctx = StepContext::new(&ev, &y, &prior, &domains, 0.5, 0.5).unwrap();
    let mut pos = ChainPosition::new(vec![1.0], s2, &ctx).unwrap();
    let mut r = rngs(21);
    let bins = 200;
    let n = 100_000;
    let mut hist = vec![0.0; bins];
    for _ in 0..n {
        mh_step_t(&mut pos, &ctx, 0, &mut r);
        hist[((pos.t[0] / 2.0 * bins as f64) as usize).min(bins - 1)] += 1.0 / n as f64;
    }
    let target = grid_posterior(&x, &y, theta, s2, bins);
    let tv: f64 = hist.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
    assert!(tv <= 0.05, "total variation {tv}");
}

#[test]
fn flat_likelihood_accepts_everything() {
    let (x, y) = toy(10, 2);
    let ev = MarginalEvaluator::new(&x, Theta::new(1e-7, 0.5).unwrap()).unwrap();
    let prior = TPrior::uniform(0.0, 2.0).unwrap();
    let domains = [(0.0, 2.0)];
    let ctx = StepContext::new(&ev, &y, &prior, &domains, 0.5, 0.5).unwrap();
    let mut pos = ChainPosition::new(vec![1.0], 0.2, &ctx).unwrap();
    let mut r = rngs(3);
    let accepted = (0..10_000).filter(|_| mh_step_t(&mut pos, &ctx, 0, &mut r) == MhOutcome::Accepted).count();
    assert!(accepted as f64 / 10_000.0 > 0.99, "{accepted}");
}

#[test]
fn first_iteration_draws_are_uniform() {
    let (x, y) = toy(10, 2);
    let ev = MarginalEvaluator::new(&x, Theta::new(1.0, 0.5).unwrap()).unwrap();
    let prior = TPrior::uniform(0.0, 2.0).unwrap();
    let domains = [(0.0, 2.0)];
    let ctx = StepContext::new(&ev, &y, &prior, &domains, 0.5, 0.5).unwrap();
    let mut pos = ChainPosition::new(vec![1.0], 0.2, &ctx).unwrap();
    let draws = e_step(&mut pos, &ctx, 10_000, true, &mut rngs(8)).unwrap();
    assert_eq!(draws.len(), 10_000);
    let mut t = draws.t.clone();
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = t.len() as f64;
    let ks = t
        .iter()
        .enumerate()
        .map(|(i, v)| ((i as f64 + 1.0) / n - v / 2.0).abs().max((v / 2.0 - i as f64 / n).abs()))
        .fold(0.0, f64::max);
    // Critical value of the one-sample KS statistic at level 0.01.
    assert!(ks < 1.628 / n.sqrt(), "{ks}");
}

#[test]
fn e_step_count_and_determinism() {
    let (x, y) = toy(15, 5);
    let ev = MarginalEvaluator::new(&x, Theta::new(1.0, 0.5).unwrap()).unwrap();
    let prior = TPrior::uniform(0.0, 2.0).unwrap();
    let domains = [(0.0, 2.0)];
    let ctx = StepContext::new(&ev, &y, &prior, &domains, 0.5, 0.5).unwrap();
    let run = || {
        let mut pos = ChainPosition::new(vec![1.0], 0.2, &ctx).unwrap();
        e_step(&mut pos, &ctx, 100, false, &mut rngs(1)).unwrap()
    };
    let a = run();
    assert_eq!(a.len(), 100);
    assert_eq!(a, run());
    assert!(a.sigma_sq.iter().all(|&s| s > 0.0));
}

#[test]
fn m_step_matches_grid_search_for_one_draw() {
    let (x, y) = toy(20, 6);
    let mut draws = DrawSet::with_dim(1);
    draws.push(&[0.5], 0.05);
    let bounds = ThetaBounds::for_inputs(&x);
    let res = m_step(&[(y.as_slice(), &draws)], &x, Theta::new(1.0, 0.3).unwrap(), &bounds).unwrap();

    let q = |lt: f64, lh: f64| q_hat(Theta::from_log(lt, lh), &x, &[(y.as_slice(), &draws)]).unwrap();
    // Coarse scan to locate the basin, then a 0.01 grid around it.
    let mut best = (f64::MIN, 0.0, 0.0);
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let mut lt = lo[0];
    while lt <= hi[0] {
        let mut lh = lo[1];
        while lh <= hi[1] {
            let v = q(lt, lh);
            if v > best.0 {
                best = (v, lt, lh);
            }
            lh += 0.1;
        }
        lt += 0.1;
    }
    let (c0, c1) = (best.1, best.2);
    for i in -20..=20 {
        for j in -20..=20 {
            let (lt, lh) = (c0 + 0.01 * i as f64, c1 + 0.01 * j as f64);
            if lt < lo[0] || lt > hi[0] || lh < lo[1] || lh > hi[1] {
                continue;
            }
            let v = q(lt, lh);
            if v > best.0 {
                best = (v, lt, lh);
            }
        }
    }
    let got = res.theta.to_log();
    assert!((got[0] - best.1).abs() < 0.05 && (got[1] - best.2).abs() < 0.05, "{got:?} vs {best:?}");
    assert!(res.q_new >= res.q_start - 1e-9);
}

#[test]
fn m_step_never_degrades_and_respects_bounds() {
    let (x, y) = toy(20, 7);
    let mut draws = DrawSet::with_dim(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        draws.push(&[rng.random_range(0.0..2.0)], rng.random_range(0.02..0.2));
    }
    let tight = ThetaBounds {
        log_tau0: (-0.5, 0.5),
        log_h: (-1.0, -0.9),
    };
    let start = Theta::new(5.0, 2.0).unwrap();
    let res = m_step(&[(y.as_slice(), &draws)], &x, start, &tight).unwrap();
    let [lt, lh] = res.theta.to_log();
    assert!((-0.5..=0.5).contains(&lt) && (-1.0 - 1e-12..=-0.9 + 1e-12).contains(&lh));
    let q_start = q_hat(tight.project(start), &x, &[(y.as_slice(), &draws)]).unwrap();
    assert!(res.q_new >= q_start - 1e-9);
}

#[test]
fn oracle_mode_keeps_t_fixed() {
    let (x, y) = toy(25, 8);
    let cfg = small_config(Mode::Oracle(vec![0.5, 1.5]), 4);
    let (draws, state) = run_mcem(&cfg, &Dataset::new(x, y).unwrap()).unwrap();
    assert_eq!(draws.dim, 2);
    assert!((0..draws.len()).all(|d| draws.t_draw(d) == [0.5, 1.5]));
    assert_eq!(state.accept_rate, 1.0);
    assert!(draws.sigma_sq.iter().all(|&s| s > 0.0));
}

#[test]
fn one_interval_multiple_reduces_to_single() {
    let (x, y) = toy(25, 9);
    let data = Dataset::new(x, y).unwrap();
    let (a, sa) = run_mcem(&small_config(Mode::Single, 10), &data).unwrap();
    let (b, sb) = run_mcem_multiple(&small_config(Mode::Multiple(vec![(0.0, 2.0)]), 10), &data).unwrap();
    assert_eq!(a.t, b.t);
    assert_eq!(a.sigma_sq, b.sigma_sq);
    assert_eq!(sa.theta_trace, sb.theta_trace);
}

#[test]
fn pooled_with_one_subject_is_run_mcem() {
    let (x, y) = toy(25, 10);
    let cfg = small_config(Mode::Single, 11);
    let (a, sa) = run_mcem(&cfg, &Dataset::new(x.clone(), y.clone()).unwrap()).unwrap();
    let (b, sb) = run_mcem_pooled(&cfg, &x, &[y]).unwrap();
    assert_eq!(a.t, b[0].t);
    assert_eq!(sa, sb);
}

#[test]
fn runs_are_deterministic() {
    let (x, y) = toy(25, 12);
    let data = Dataset::new(x, y).unwrap();
    let cfg = small_config(Mode::Single, 77);
    let (a, sa) = run_mcem(&cfg, &data).unwrap();
    let (b, sb) = run_mcem(&cfg, &data).unwrap();
    assert_eq!(a.t, b.t);
    assert_eq!(sa, sb);
    let (c, _) = run_mcem(&small_config(Mode::Single, 78), &data).unwrap();
    assert_ne!(a.t, c.t);
}

#[test]
fn theta_trace_stays_in_bounds() {
    let (x, y) = toy(25, 13);
    let cfg = small_config(Mode::Single, 5);
    let bounds = ThetaBounds::for_inputs(&x);
    let (_, state) = run_mcem(&cfg, &Dataset::new(x, y).unwrap()).unwrap();
    for th in &state.theta_trace {
        let [lt, lh] = th.to_log();
        assert!(lt >= bounds.log_tau0.0 - 1e-12 && lt <= bounds.log_tau0.1 + 1e-12);
        assert!(lh >= bounds.log_h.0 - 1e-12 && lh <= bounds.log_h.1 + 1e-12);
    }
    assert!((0.0..=1.0).contains(&state.accept_rate));
}

#[test]
fn multiple_mode_recovers_both_stationary_points() {
    use dgp_core::simstudy::{generate_dataset, SyntheticSpec};
    let spec = SyntheticSpec::<f64>::default();
    let data = generate_dataset(&spec, 3).unwrap();
    let cfg = McemConfig::new(
        TPrior::uniform(0.0, 2.0).unwrap(),
        Mode::Multiple(vec![(0.0, 1.0), (1.0, 2.0)]),
        31,
    );
    let (draws, _) = run_mcem(&cfg, &data).unwrap();
    let mean = |k: usize| {
        let v = draws.coordinate(k);
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!((mean(0) - 0.436).abs() < 0.08, "{}", mean(0));
    assert!((mean(1) - 1.459).abs() < 0.08, "{}", mean(1));
}

#[test]
fn length_scale_is_recovered_from_prior_draws() {
    let h_true = 0.4;
    let mut ratios = Vec::new();
    for rep in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + rep);
        let n = 40;
        let x: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect();
        let prior = DgpPrior::new(0.0, KernelParams::new(1.0, h_true).unwrap(), vec![1.0]).unwrap();
        let f = sample_dgp_paths(&prior, &x, 1, &mut rng).unwrap().remove(0);
        let y: Vec<f64> = f.iter().map(|v| v + 0.2 * <f64 as dgp_core::Real>::sample_standard_normal(&mut rng)).collect();
        let (_, state) = run_mcem(&small_config(Mode::Single, rep), &Dataset::new(x, y).unwrap()).unwrap();
        ratios.push(state.theta_hat.h / h_true);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = 0.5 * (ratios[9] + ratios[10]);
    assert!((0.5..=2.0).contains(&median), "{ratios:?}");
}

#[test]
fn beta_prior_draws_stay_inside() {
    let n = 40;
    let x: Vec<f64> = (0..n).map(|i| 50.0 + 5.0 * i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| ((v - 50.0) / 30.0).sin()).collect();
    let mut cfg = McemConfig::new(TPrior::beta(50.0, 250.0, 3.0, 3.0).unwrap(), Mode::Single, 3);
    cfg.draws_per_iter = 200;
    cfg.subsample = 50;
    cfg.final_draws = 300;
    cfg.burn_in = 50;
    cfg.max_iter = 5;
    let (draws, _) = run_mcem(&cfg, &Dataset::new(x, y).unwrap()).unwrap();
    assert!(draws.t.iter().all(|&t| t > 50.0 && t < 250.0));
}

/// Dip at `t1` and peak at `t1 + 70` on a 2 ms grid.
fn erp_subject(t1: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let t2 = t1 + 70.0;
    (0..101)
        .map(|i| {
            let x = 50.0 + 2.0 * i as f64;
            let phase = if x <= t2 {
                -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (x - t1) / (t2 - t1)
            } else {
                std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (x - t2) / 100.0
            };
            phase.sin() + 0.35 * <f64 as dgp_core::Real>::sample_standard_normal(rng)
        })
        .collect()
}

#[test]
fn two_subject_dips_are_recovered() {
    let x: Vec<f64> = (0..101).map(|i| 50.0 + 2.0 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ys = vec![erp_subject(100.0, &mut rng), erp_subject(110.0, &mut rng)];
    let cfg = McemConfig::new(TPrior::beta(50.0, 250.0, 3.0, 3.0).unwrap(), Mode::Single, 9);
    let (draws, _) = run_mcem_pooled(&cfg, &x, &ys).unwrap();
    for (d, truth) in draws.iter().zip([100.0, 110.0]) {
        let t = d.coordinate(0);
        let region = hpd(&kde(&t, 50.0, 250.0).unwrap(), &t, 0.05).unwrap();
        let nearest = region.modes.iter().map(|m| (m - truth).abs()).fold(f64::MAX, f64::min);
        assert!(nearest <= 6.0, "modes {:?} truth {truth}", region.modes);
    }
}

#[test]
fn identical_subjects_share_posteriors() {
    let x: Vec<f64> = (0..101).map(|i| 50.0 + 2.0 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = erp_subject(100.0, &mut rng);
    let mut cfg = McemConfig::new(TPrior::beta(50.0, 250.0, 3.0, 3.0).unwrap(), Mode::Single, 5);
    cfg.final_draws = 4000;
    let (draws, _) = run_mcem_pooled(&cfg, &x, &[y.clone(), y]).unwrap();
    assert_ne!(draws[0].t, draws[1].t);
    assert_eq!(draws[0].theta_star, draws[1].theta_star);
    let modes: Vec<Vec<f64>> = draws
        .iter()
        .map(|d| {
            let t = d.coordinate(0);
            hpd(&kde(&t, 50.0, 250.0).unwrap(), &t, 0.05).unwrap().modes
        })
        .collect();
    assert_eq!(modes[0].len(), modes[1].len(), "{modes:?}");
    for (a, b) in modes[0].iter().zip(&modes[1]) {
        assert!((a - b).abs() < 4.0, "{modes:?}");
    }
}
