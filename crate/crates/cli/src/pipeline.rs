//! Orchestration of fits and emission of run artifacts.
//!
//! Every run directory gets `meta.json`. Fits add `draws.csv`, `curve.csv`,
//! `hpd.json` and `gmm.json` according to the emit flags; simulation studies
//! add `summary.json`, `rmse_curve.csv` and `replicates.csv`. Numeric output
//! depends only on the configuration, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dgp_core::mcem::moment_matched_ig_prior;
use dgp_core::simstudy::{run_replicates, MethodSummary, RmseReport, SimOptions, SyntheticSpec};
use dgp_core::summarize::{curve_bands, fit_gmm2, hpd, kde, CurveEstimate};
use dgp_core::{run_mcem, run_mcem_pooled, Dataset, McemConfig, Mode, PosteriorDraws, TPrior, Theta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GroupCol, RunConfig, Task};
use crate::ingest::{ingest_csv, SubjectLabel, SubjectTable};

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_FLAGGED: i32 = 2;

pub const META_FILE: &str = "meta.json";
pub const DRAWS_FILE: &str = "draws.csv";
pub const HPD_FILE: &str = "hpd.json";
pub const GMM_FILE: &str = "gmm.json";
pub const CURVE_FILE: &str = "curve.csv";

/// Residual window of the moment-matched noise prior in multi-subject runs.
const NOISE_WINDOW: usize = 5;

// Far from the low stream ids the sampler uses.
const CURVE_STREAM: u64 = u64::MAX;
const GMM_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Clean,
    Flagged,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Human-readable reasons for a flagged run.
    pub flags: Vec<String>,
}

impl RunOutcome {
    fn from_flags(flags: Vec<String>) -> Self {
        let status = if flags.is_empty() { RunStatus::Clean } else { RunStatus::Flagged };
        Self { status, flags }
    }

    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Clean => EXIT_CLEAN,
            RunStatus::Flagged => EXIT_FLAGGED,
            RunStatus::Failed => EXIT_FAILED,
        }
    }
}

/// What `summarize` needs to rebuild `hpd.json` and `gmm.json` from `draws.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySettings {
    pub alpha: f64,
    pub prior_domain: (f64, f64),
    pub mode: Mode<f64>,
}

impl SummarySettings {
    fn domains(&self) -> Vec<(f64, f64)> {
        match &self.mode {
            Mode::Single => vec![self.prior_domain],
            Mode::Multiple(iv) => iv.clone(),
            Mode::Oracle(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub id: String,
    pub group: Option<String>,
    pub condition: Option<String>,
    pub pool: String,
    /// Seed of the curve-band and mixture random streams.
    pub seed: u64,
    pub theta_star: Theta<f64>,
    pub accept_rate: f64,
    pub failed_proposals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub skipped_curve_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMeta {
    pub name: String,
    pub subjects: Vec<String>,
    pub seed: u64,
    pub theta_star: Theta<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub last_step: f64,
    pub accept_rate: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub task: Task,
    pub status: RunStatus,
    pub flags: Vec<String>,
    pub error: Option<String>,
    pub seed: u64,
    pub config: RunConfig,
    pub summary: Option<SummarySettings>,
    pub pools: Vec<PoolMeta>,
    pub subjects: Vec<SubjectMeta>,
}

impl Meta {
    fn new(config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: dgp_core::VERSION.into(),
            task: config.task,
            status: RunStatus::Failed,
            flags: Vec::new(),
            error: None,
            seed: config.seed,
            config: config.clone(),
            summary: None,
            pools: Vec::new(),
            subjects: Vec::new(),
        }
    }
}

/// Validates `config`, runs its task and writes artifacts under `config.out`.
///
/// Errors before the output directory exists are returned without artifacts;
/// later errors also leave a `meta.json` with status `failed`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let out = config.out_dir()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut meta = Meta::new(config);
    let result = match config.task {
        Task::Fit => run_fit(config, out, &mut meta),
        Task::Multisubject => run_multisubject(config, out, &mut meta),
        Task::Simstudy => run_simstudy(config, out, &mut meta),
    };
    match result {
        Ok(outcome) => {
            meta.status = outcome.status;
            meta.flags = outcome.flags.clone();
            write_json(&out.join(META_FILE), &meta)?;
            Ok(outcome)
        }
        Err(e) => {
            meta.status = RunStatus::Failed;
            meta.error = Some(format!("{e:#}"));
            write_json(&out.join(META_FILE), &meta)?;
            Err(e)
        }
    }
}

/// Splitmix64 finalizer over `(seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Prepared {
    table: SubjectTable,
    prior: TPrior<f64>,
    mode: Mode<f64>,
}

fn prepare(config: &RunConfig) -> Result<Prepared> {
    let table = ingest_csv(config.data_path()?)?;
    let prior = config.t_prior(table.x_range())?;
    let mode = config.t_mode(&prior)?;
    Ok(Prepared { table, prior, mode })
}

/// One fitted subject, before summaries.
struct Fitted {
    draws: PosteriorDraws<f64>,
    curve: Option<CurveEstimate<f64>>,
}

fn curve_for(config: &RunConfig, table: &SubjectTable, s: usize, draws: &PosteriorDraws<f64>) -> Result<Option<CurveEstimate<f64>>> {
    if !config.emit.curves {
        return Ok(None);
    }
    let (lo, hi) = table.x_range();
    let m = config.grid_len;
    let grid: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
    let mut rng = stream_rng(derive_seed(config.seed, s as u64), CURVE_STREAM);
    let curve = curve_bands(draws, &table.x, &table.y[s], &grid, &mut rng)
        .with_context(|| format!("curve bands for subject {}", table.labels[s].id))?;
    Ok(Some(curve))
}

/// Each subject column is fitted on its own.
fn run_fit(config: &RunConfig, out: &Path, meta: &mut Meta) -> Result<RunOutcome> {
    let Prepared { table, prior, mode } = prepare(config)?;
    let results: Vec<(Fitted, PoolMeta)> = (0..table.len())
        .into_par_iter()
        .map(|s| {
            let label = &table.labels[s];
            let seed = derive_seed(config.seed, s as u64);
            let mcem = config.sampler.mcem_config(prior, mode.clone(), seed);
            let data = Dataset::new(table.x.clone(), table.y[s].clone())?;
            let (draws, state) = run_mcem(&mcem, &data).with_context(|| format!("fitting subject {}", label.id))?;
            let curve = curve_for(config, &table, s, &draws)?;
            let pool = PoolMeta {
                name: label.id.clone(),
                subjects: vec![label.id.clone()],
                seed,
                theta_star: state.theta_hat,
                iterations: state.iteration,
                converged: state.converged,
                last_step: state.last_step,
                accept_rate: state.accept_rate,
                a_sigma: mcem.a_sigma,
                b_sigma: mcem.b_sigma,
            };
            Ok((Fitted { draws, curve }, pool))
        })
        .collect::<Result<_>>()?;

    let (fitted, pools): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let pool_of: Vec<String> = pools.iter().map(|p| p.name.clone()).collect();
    meta.pools = pools;
    finish_fits(config, out, meta, &table, &prior, mode, fitted, &pool_of)
}

fn pool_key(label: &SubjectLabel, col: GroupCol) -> String {
    let tag = |t: &Option<String>| t.clone().unwrap_or_else(|| "-".into());
    match col {
        GroupCol::Group => tag(&label.group),
        GroupCol::Condition => tag(&label.condition),
        GroupCol::Both => format!("{}/{}", tag(&label.group), tag(&label.condition)),
        GroupCol::None => "all".into(),
    }
}

/// Subjects sharing a pool key share `θ` and the noise prior.
fn run_multisubject(config: &RunConfig, out: &Path, meta: &mut Meta) -> Result<RunOutcome> {
    let Prepared { table, prior, mode } = prepare(config)?;
    let mut pools: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (s, l) in table.labels.iter().enumerate() {
        pools.entry(pool_key(l, config.group_col)).or_default().push(s);
    }
    let pools: Vec<(String, Vec<usize>)> = pools.into_iter().collect();

    let mut slots: Vec<Option<Fitted>> = (0..table.len()).map(|_| None).collect();
    let mut pool_meta = Vec::with_capacity(pools.len());
    for (p, (name, members)) in pools.iter().enumerate() {
        let ys: Vec<Vec<f64>> = members.iter().map(|&s| table.y[s].clone()).collect();
        let seed = derive_seed(config.seed, (1u64 << 32) + p as u64);
        let mut mcem: McemConfig<f64> = config.sampler.mcem_config(prior, mode.clone(), seed);
        if config.sampler.a_sigma.is_none() || config.sampler.b_sigma.is_none() {
            let (a, b) = moment_matched_ig_prior(&ys, NOISE_WINDOW)?;
            mcem.a_sigma = config.sampler.a_sigma.unwrap_or(a);
            mcem.b_sigma = config.sampler.b_sigma.unwrap_or(b);
        }
        let (draws, state) = run_mcem_pooled(&mcem, &table.x, &ys).with_context(|| format!("fitting pool {name}"))?;
        let curves: Vec<Option<CurveEstimate<f64>>> = members
            .par_iter()
            .zip(draws.par_iter())
            .map(|(&s, d)| curve_for(config, &table, s, d))
            .collect::<Result<_>>()?;
        for ((&s, d), c) in members.iter().zip(draws).zip(curves) {
            slots[s] = Some(Fitted { draws: d, curve: c });
        }
        pool_meta.push(PoolMeta {
            name: name.clone(),
            subjects: members.iter().map(|&s| table.labels[s].id.clone()).collect(),
            seed,
            theta_star: state.theta_hat,
            iterations: state.iteration,
            converged: state.converged,
            last_step: state.last_step,
            accept_rate: state.accept_rate,
            a_sigma: mcem.a_sigma,
            b_sigma: mcem.b_sigma,
        });
    }
    let fitted: Vec<Fitted> = slots.into_iter().map(|f| f.expect("every subject belongs to a pool")).collect();
    let pool_of: Vec<String> = table.labels.iter().map(|l| pool_key(l, config.group_col)).collect();
    meta.pools = pool_meta;
    finish_fits(config, out, meta, &table, &prior, mode, fitted, &pool_of)
}

#[allow(clippy::too_many_arguments)]
fn finish_fits(
    config: &RunConfig,
    out: &Path,
    meta: &mut Meta,
    table: &SubjectTable,
    prior: &TPrior<f64>,
    mode: Mode<f64>,
    fitted: Vec<Fitted>,
    pool_of: &[String],
) -> Result<RunOutcome> {
    let mut flags = Vec::new();
    for p in &meta.pools {
        if !p.converged {
            flags.push(format!("pool {} did not converge in {} iterations", p.name, p.iterations));
        }
    }
    meta.subjects = fitted
        .iter()
        .enumerate()
        .map(|(s, f)| {
            let l = &table.labels[s];
            SubjectMeta {
                id: l.id.clone(),
                group: l.group.clone(),
                condition: l.condition.clone(),
                pool: pool_of[s].clone(),
                seed: derive_seed(config.seed, s as u64),
                theta_star: f.draws.theta_star,
                accept_rate: f.draws.meta.accept_rate,
                failed_proposals: f.draws.meta.failed_proposals,
                iterations: f.draws.meta.iterations,
                converged: f.draws.meta.converged,
                skipped_curve_draws: f.curve.as_ref().map(|c| c.skipped),
            }
        })
        .collect();
    for (m, f) in meta.subjects.iter().zip(&fitted) {
        if let Some(c) = &f.curve {
            if c.skipped > 0 {
                flags.push(format!("subject {}: {} curve draws skipped", m.id, c.skipped));
            }
        }
    }
    let settings = SummarySettings {
        alpha: config.alpha,
        prior_domain: (prior.a, prior.b),
        mode,
    };
    meta.summary = Some(settings.clone());

    let table_draws = DrawsTable::from_fits(meta.subjects.iter().map(|m| m.id.clone()).zip(fitted.iter().map(|f| &f.draws)))?;
    if config.emit.draws {
        fs::write(out.join(DRAWS_FILE), table_draws.to_csv()).context("writing draws")?;
    }
    if config.emit.curves {
        let curves: Vec<(&str, &CurveEstimate<f64>)> = meta
            .subjects
            .iter()
            .zip(&fitted)
            .filter_map(|(m, f)| f.curve.as_ref().map(|c| (m.id.as_str(), c)))
            .collect();
        fs::write(out.join(CURVE_FILE), curve_csv(&curves)).context("writing curves")?;
    }
    let summaries = summarize_draws(&table_draws, &settings, &meta.subjects)?;
    flags.extend(summaries.flags.iter().cloned());
    write_summaries(config, out, &summaries)?;
    Ok(RunOutcome::from_flags(flags))
}

fn write_summaries(config: &RunConfig, out: &Path, s: &Summaries) -> Result<()> {
    if config.emit.hpd {
        write_json(&out.join(HPD_FILE), &s.hpd)?;
    }
    if config.emit.gmm {
        if let Some(g) = &s.gmm {
            write_json(&out.join(GMM_FILE), g)?;
        }
    }
    Ok(())
}

/// Rebuilds `hpd.json` and `gmm.json` of a finished fit from its `draws.csv`
/// and `meta.json`.
pub fn summarize(run_dir: &Path) -> Result<RunOutcome> {
    let meta: Meta = serde_json::from_str(
        &fs::read_to_string(run_dir.join(META_FILE)).with_context(|| format!("reading {}", run_dir.join(META_FILE).display()))?,
    )
    .context("parsing meta.json")?;
    let settings = meta.summary.as_ref().ok_or_else(|| anyhow!("run has no draws to summarize (task {:?})", meta.task))?;
    let text = fs::read_to_string(run_dir.join(DRAWS_FILE)).context("reading draws.csv")?;
    let draws = DrawsTable::from_csv(&text)?;
    let ids: Vec<&str> = draws.subjects.iter().map(|s| s.id.as_str()).collect();
    let listed: Vec<&str> = meta.subjects.iter().map(|s| s.id.as_str()).collect();
    if ids != listed {
        bail!("draws.csv subjects {ids:?} do not match meta.json {listed:?}");
    }
    let summaries = summarize_draws(&draws, settings, &meta.subjects)?;
    let mut config = meta.config.clone();
    config.emit.hpd = true;
    config.emit.gmm = true;
    write_summaries(&config, run_dir, &summaries)?;
    Ok(RunOutcome::from_flags(summaries.flags))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDraws {
    pub id: String,
    /// Row-major `len × dim`.
    pub t: Vec<f64>,
    pub sigma_sq: Vec<f64>,
}

impl SubjectDraws {
    pub fn coordinate(&self, k: usize, dim: usize) -> Vec<f64> {
        self.t.chunks(dim).map(|row| row[k]).collect()
    }
}

/// Contents of `draws.csv`: `subject,draw,t1..t<dim>,sigma_sq`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawsTable {
    pub dim: usize,
    pub subjects: Vec<SubjectDraws>,
}

impl DrawsTable {
    fn from_fits<'a>(fits: impl Iterator<Item = (String, &'a PosteriorDraws<f64>)>) -> Result<Self> {
        let mut dim = None;
        let mut subjects = Vec::new();
        for (id, d) in fits {
            if *dim.get_or_insert(d.dim) != d.dim {
                bail!("subjects have different draw dimensions");
            }
            subjects.push(SubjectDraws {
                id,
                t: d.t.clone(),
                sigma_sq: d.sigma_sq.clone(),
            });
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            subjects,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,draw");
        for k in 1..=self.dim {
            let _ = write!(out, ",t{k}");
        }
        out.push_str(",sigma_sq\n");
        for s in &self.subjects {
            for (d, &v) in s.sigma_sq.iter().enumerate() {
                let _ = write!(out, "{},{d}", s.id);
                for k in 0..self.dim {
                    let _ = write!(out, ",{}", s.t[d * self.dim + k]);
                }
                let _ = writeln!(out, ",{v}");
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers().context("draws.csv header")?.clone();
        let width = header.len();
        if width < 3 || &header[0] != "subject" || &header[1] != "draw" || &header[width - 1] != "sigma_sq" {
            bail!("draws.csv header must be subject,draw,t1..,sigma_sq");
        }
        let dim = width - 3;
        let mut subjects: Vec<SubjectDraws> = Vec::new();
        for rec in reader.records() {
            let rec = rec.context("draws.csv")?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().with_context(|| format!("draws.csv line {line}: bad number `{}`", &rec[i]))
            };
            let id = &rec[0];
            if subjects.last().is_none_or(|s| s.id != id) {
                if subjects.iter().any(|s| s.id == id) {
                    bail!("draws.csv line {line}: rows of subject {id} are not contiguous");
                }
                subjects.push(SubjectDraws {
                    id: id.to_string(),
                    t: Vec::new(),
                    sigma_sq: Vec::new(),
                });
            }
            let s = subjects.last_mut().unwrap();
            for k in 0..dim {
                s.t.push(num(2 + k)?);
            }
            s.sigma_sq.push(num(width - 1)?);
        }
        Ok(Self { dim, subjects })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateHpd {
    pub coordinate: usize,
    pub domain: (f64, f64),
    pub bandwidth: f64,
    pub threshold: f64,
    pub segments: Vec<(f64, f64)>,
    pub modes: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HpdEntry {
    pub subject: String,
    pub group: Option<String>,
    pub condition: Option<String>,
    /// Total HPD segment count over all coordinates.
    pub m_hat: Option<usize>,
    pub coordinates: Vec<CoordinateHpd>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HpdReport {
    pub alpha: f64,
    pub subjects: Vec<HpdEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmEntry {
    pub subject: String,
    pub group: Option<String>,
    pub condition: Option<String>,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

/// Across-subject averages of per-subject component means and sds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: Option<String>,
    pub condition: Option<String>,
    pub subjects: usize,
    /// Subjects whose mixture fit converged; all error-free fits are averaged.
    pub converged: usize,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmReport {
    /// `gmm2` for single mode, `moments` (per-coordinate mean and sd) for multiple mode.
    pub method: String,
    pub subjects: Vec<GmmEntry>,
    pub groups: Vec<GroupSummary>,
}

pub struct Summaries {
    pub hpd: HpdReport,
    pub gmm: Option<GmmReport>,
    pub flags: Vec<String>,
}

fn coordinate_hpd(t: &[f64], k: usize, domain: (f64, f64), alpha: f64) -> Result<CoordinateHpd> {
    let dens = kde(t, domain.0, domain.1)?;
    let region = hpd(&dens, t, alpha)?;
    Ok(CoordinateHpd {
        coordinate: k,
        domain,
        bandwidth: dens.bandwidth,
        threshold: region.threshold,
        segments: region.segments,
        modes: region.modes,
        mass: region.mass,
    })
}

pub fn summarize_draws(draws: &DrawsTable, settings: &SummarySettings, subjects: &[SubjectMeta]) -> Result<Summaries> {
    let domains = settings.domains();
    if !domains.is_empty() && domains.len() != draws.dim {
        bail!("draws have {} coordinates but the mode has {}", draws.dim, domains.len());
    }
    let mut flags = Vec::new();
    let mut entries = Vec::with_capacity(draws.subjects.len());
    for (sd, m) in draws.subjects.iter().zip(subjects) {
        let mut entry = HpdEntry {
            subject: m.id.clone(),
            group: m.group.clone(),
            condition: m.condition.clone(),
            m_hat: None,
            coordinates: Vec::new(),
            error: None,
        };
        let coords: Result<Vec<CoordinateHpd>> = domains
            .iter()
            .enumerate()
            .map(|(k, &dom)| coordinate_hpd(&sd.coordinate(k, draws.dim), k, dom, settings.alpha))
            .collect();
        match coords {
            Ok(c) => {
                if !c.is_empty() {
                    entry.m_hat = Some(c.iter().map(|h| h.segments.len()).sum());
                }
                entry.coordinates = c;
            }
            Err(e) => {
                flags.push(format!("subject {}: HPD failed: {e:#}", m.id));
                entry.error = Some(format!("{e:#}"));
            }
        }
        entries.push(entry);
    }
    let hpd = HpdReport {
        alpha: settings.alpha,
        subjects: entries,
    };

    let gmm = match &settings.mode {
        Mode::Oracle(_) => None,
        mode => {
            let single = matches!(mode, Mode::Single);
            let subjects_gmm: Vec<GmmEntry> = draws
                .subjects
                .iter()
                .zip(subjects)
                .map(|(sd, m)| gmm_entry(sd, draws.dim, m, single))
                .collect();
            let groups = group_summaries(&subjects_gmm);
            Some(GmmReport {
                method: if single { "gmm2" } else { "moments" }.into(),
                subjects: subjects_gmm,
                groups,
            })
        }
    };
    Ok(Summaries { hpd, gmm, flags })
}

fn gmm_entry(sd: &SubjectDraws, dim: usize, m: &SubjectMeta, single: bool) -> GmmEntry {
    let mut e = GmmEntry {
        subject: m.id.clone(),
        group: m.group.clone(),
        condition: m.condition.clone(),
        weights: Vec::new(),
        means: Vec::new(),
        sds: Vec::new(),
        converged: false,
        error: None,
    };
    if single {
        let mut rng = stream_rng(m.seed, GMM_STREAM);
        match fit_gmm2(&sd.coordinate(0, dim), &mut rng) {
            Ok(f) => {
                e.weights = f.weights.to_vec();
                e.means = f.means.to_vec();
                e.sds = f.sds.to_vec();
                e.converged = f.converged;
            }
            Err(err) => e.error = Some(err.to_string()),
        }
    } else {
        for k in 0..dim {
            let c = sd.coordinate(k, dim);
            let n = c.len() as f64;
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            e.weights.push(1.0);
            e.means.push(mean);
            e.sds.push(var.sqrt());
        }
        e.converged = true;
    }
    e
}

fn group_summaries(entries: &[GmmEntry]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(Option<String>, Option<String>), Vec<&GmmEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry((e.group.clone(), e.condition.clone())).or_default().push(e);
    }
    groups
        .into_iter()
        .map(|((group, condition), members)| {
            let ok: Vec<&&GmmEntry> = members.iter().filter(|e| e.error.is_none()).collect();
            let k = ok.first().map_or(0, |e| e.means.len());
            let avg = |f: &dyn Fn(&GmmEntry) -> &Vec<f64>| -> Vec<f64> {
                (0..k).map(|j| ok.iter().map(|e| f(e)[j]).sum::<f64>() / ok.len() as f64).collect()
            };
            GroupSummary {
                group,
                condition,
                subjects: members.len(),
                converged: members.iter().filter(|e| e.converged).count(),
                means: avg(&|e| &e.means),
                sds: avg(&|e| &e.sds),
            }
        })
        .collect()
}

fn curve_csv(curves: &[(&str, &CurveEstimate<f64>)]) -> String {
    let mut out = String::from("subject,x,mean,lower,upper\n");
    for (id, c) in curves {
        for i in 0..c.grid.len() {
            let _ = writeln!(out, "{id},{},{},{},{}", c.grid[i], c.mean[i], c.lower[i], c.upper[i]);
        }
    }
    out
}

#[derive(Serialize)]
struct SimSummary<'a> {
    spec: &'a SyntheticSpec<f64>,
    grid: &'a [f64],
    truth: &'a [f64],
    methods: &'a [MethodSummary<f64>],
}

fn run_simstudy(config: &RunConfig, out: &Path, meta: &mut Meta) -> Result<RunOutcome> {
    let spec = config.synthetic_spec();
    let methods = config.parsed_methods()?;
    let mut opts = SimOptions::new(spec, methods)?;
    let prior = opts.mcem.t_prior;
    opts.mcem = config.sampler.mcem_config(prior, Mode::Single, config.seed);
    opts.alpha = config.alpha;
    let report = run_replicates(&opts)?;
    write_simstudy(out, &report)?;

    let mut flags = Vec::new();
    for s in &report.methods {
        if s.failed_replicates > 0 {
            flags.push(format!("{}: {} replicate fits failed", s.method, s.failed_replicates));
        }
        if s.converged_fraction < 1.0 {
            flags.push(format!("{}: converged in {:.3} of fits", s.method, s.converged_fraction));
        }
    }
    meta.flags = flags.clone();
    Ok(RunOutcome::from_flags(flags))
}

fn write_simstudy(out: &Path, report: &RmseReport<f64>) -> Result<()> {
    let summary = SimSummary {
        spec: &report.spec,
        grid: &report.grid,
        truth: &report.truth,
        methods: &report.methods,
    };
    write_json(&out.join("summary.json"), &summary)?;

    let mut curve = String::from("method,x,truth,rmse,band_width\n");
    for (m, x, truth, rmse, width) in report.curve_rows() {
        let _ = writeln!(curve, "{m},{x},{truth},{rmse},{width}");
    }
    fs::write(out.join("rmse_curve.csv"), curve).context("writing rmse_curve.csv")?;

    let mut reps = String::from("replicate,method,tau0,h,iterations,converged,t1,t2,m_hat,error\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in &report.replicates {
        for f in &r.fits {
            let _ = writeln!(
                reps,
                "{},{},{},{},{},{},{},{},{},",
                r.index,
                f.method,
                f.tau0,
                f.h,
                f.iterations,
                f.converged,
                opt(f.t_hat[0]),
                opt(f.t_hat[1]),
                f.m_hat.map_or(String::new(), |m| m.to_string()),
            );
        }
        for (m, e) in &r.failures {
            let _ = writeln!(reps, "{},{m},,,,,,,,\"{}\"", r.index, e.replace('"', "'"));
        }
    }
    fs::write(out.join("replicates.csv"), reps).context("writing replicates.csv")?;
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
