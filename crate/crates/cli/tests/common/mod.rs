#![allow(dead_code)]

use std::f64::consts::PI;
use dgp_cli::config::{RunConfig, SamplerSettings};
use dgp_cli::{SubjectLabel, SubjectTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Smooth increasing warp of the time axis, fastest at 135 ms.
fn warp(x: f64) -> f64 {
    ((x - 135.0) / 100.0).atan()
}

fn warp_slope(x: f64) -> f64 {
    let z = (x - 135.0) / 100.0;
    1.0 / (100.0 * (1.0 + z * z))
}

fn phase(x: f64, t1: f64, t2: f64) -> f64 {
    -PI / 2.0 + PI * (warp(x) - warp(t1)) / (warp(t2) - warp(t1))
}

/// `amp · sin(φ(x))` with `φ(t1) = −π/2` and `φ(t2) = π/2`: a dip at `t1`, a
/// peak at `t2` and, for centres near 100 and 170, no other stationary point
/// on `[50, 250]`.
pub fn erp_curve(x: f64, t1: f64, t2: f64, amp: f64) -> f64 {
    amp * phase(x, t1, t2).sin()
}

pub fn erp_slope(x: f64, t1: f64, t2: f64, amp: f64) -> f64 {
    amp * phase(x, t1, t2).cos() * PI * warp_slope(x) / (warp(t2) - warp(t1))
}

pub struct ErpTable {
    pub table: SubjectTable,
    /// True (dip, peak) latency per subject.
    pub truth: Vec<[f64; 2]>,
}

/// Subjects on a 2 ms grid over `[50, 250]` with latencies jittered
/// by up to 4 ms around 100 and 170 and noise sd half the signal sd.
pub fn erp_table(subjects: usize, seed: u64) -> ErpTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..=100).map(|i| 50.0 + 2.0 * i as f64).collect();
    let mut labels = Vec::new();
    let mut ys = Vec::new();
    let mut truth = Vec::new();
    for s in 0..subjects {
        let t1 = 100.0 + rng.random_range(-4.0..=4.0);
        let t2 = 170.0 + rng.random_range(-4.0..=4.0);
        let amp = rng.random_range(3.0..6.0);
        let f: Vec<f64> = x.iter().map(|&v| erp_curve(v, t1, t2, amp)).collect();
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64).sqrt();
        let noise = Normal::new(0.0, sd / 2.0).unwrap();
        ys.push(f.iter().map(|&v| v + noise.sample(&mut rng)).collect());
        let group = if s % 2 == 0 { "young" } else { "older" };
        labels.push(SubjectLabel {
            id: format!("s{:02}", s + 1),
            group: Some(group.into()),
            condition: Some("voiced".into()),
        });
        truth.push([t1, t2]);
    }
    ErpTable {
        table: SubjectTable { x, labels, y: ys },
        truth,
    }
}

/// Short chains for tests that check plumbing rather than statistics.
pub fn quick_sampler() -> SamplerSettings {
    SamplerSettings {
        draws_per_iter: 300,
        subsample: 40,
        max_iter: 8,
        final_draws: 400,
        burn_in: 100,
        thin: 1,
        ..SamplerSettings::default()
    }
}

pub fn quick_config() -> RunConfig {
    RunConfig {
        sampler: quick_sampler(),
        grid_len: 25,
        ..RunConfig::default()
    }
}
