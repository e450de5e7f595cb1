//! Command-line flags. Each subcommand can start from a JSON config file;
//! flags given on the command line override its values.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_interval, GroupCol, RunConfig, Task};

#[derive(Debug, Parser)]
#[command(name = "dgp", version, about = "Stationary-point inference with derivative-constrained Gaussian processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit every subject column of a CSV independently.
    Fit(FitArgs),
    /// Run the synthetic benchmark.
    Simstudy(SimArgs),
    /// Fit subjects pooled by group with shared hyperparameters.
    Multisubject(MultiArgs),
    /// Rebuild hpd.json and gmm.json from a run's draws.csv.
    Summarize {
        /// Output directory of a previous fit or multisubject run.
        run_dir: PathBuf,
    },
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// HPD level is 1 - alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Points in the curve prediction grid.
    #[arg(long)]
    pub grid_len: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// E-step chain length per iteration.
    #[arg(long)]
    pub draws_per_iter: Option<usize>,
    /// M-step subsample size.
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub final_draws: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Prior domain `a,b` of the stationary points.
    #[arg(long, value_parser = parse_interval)]
    pub interval: Option<[f64; 2]>,
    /// `uniform` or `beta:<a>,<b>`.
    #[arg(long)]
    pub prior: Option<String>,
    /// `single`, `multiple:<breaks>` or `oracle:<points>`.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct MultiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Header tag defining the pools: group, condition, both or none.
    #[arg(long)]
    pub group_col: Option<GroupCol>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Comma-separated subset of gpr,single,multiple,oracle.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[command(flatten)]
    pub common: Common,
}

fn base(common: &Common, task: Task) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    c.task = task;
    macro_rules! set {
        ($($src:expr => $dst:expr),* $(,)?) => {
            $(if let Some(v) = $src.clone() { $dst = v; })*
        };
    }
    set! {
        common.seed => c.seed,
        common.alpha => c.alpha,
        common.grid_len => c.grid_len,
        common.max_iter => c.sampler.max_iter,
        common.draws_per_iter => c.sampler.draws_per_iter,
        common.subsample => c.sampler.subsample,
        common.final_draws => c.sampler.final_draws,
        common.tol => c.sampler.tol,
    }
    if common.out.is_some() {
        c.out = common.out.clone();
    }
    Ok(c)
}

fn apply_data(c: &mut RunConfig, d: &DataArgs) {
    if d.data.is_some() {
        c.data = d.data.clone();
    }
    if d.interval.is_some() {
        c.interval = d.interval;
    }
    if let Some(p) = &d.prior {
        c.prior = p.clone();
    }
    if let Some(m) = &d.mode {
        c.mode = m.clone();
    }
}

impl Command {
    /// Resolved configuration; `None` for `summarize`.
    pub fn to_config(&self) -> Result<Option<RunConfig>> {
        let c = match self {
            Command::Fit(a) => {
                let mut c = base(&a.common, Task::Fit)?;
                apply_data(&mut c, &a.data);
                c
            }
            Command::Multisubject(a) => {
                let mut c = base(&a.common, Task::Multisubject)?;
                apply_data(&mut c, &a.data);
                if let Some(g) = a.group_col {
                    c.group_col = g;
                }
                c
            }
            Command::Simstudy(a) => {
                let mut c = base(&a.common, Task::Simstudy)?;
                if let Some(r) = a.replicates {
                    c.replicates = r;
                }
                if let Some(n) = a.n {
                    c.n = n;
                }
                if let Some(s) = a.sigma {
                    c.sigma = s;
                }
                if let Some(m) = &a.methods {
                    c.methods = m.clone();
                }
                c
            }
            Command::Summarize { .. } => return Ok(None),
        };
        Ok(Some(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> RunConfig {
        let cli = Cli::try_parse_from(std::iter::once("dgp").chain(args.iter().copied())).unwrap();
        cli.command.to_config().unwrap().unwrap()
    }

    #[test]
    fn fit_flags() {
        let c = parse(&["fit", "--data", "d.csv", "--interval", "50,250", "--prior", "beta:3,3", "--mode", "multiple:50,150,250", "--out", "o", "--seed", "9"]);
        assert_eq!(c.task, Task::Fit);
        assert_eq!(c.interval, Some([50.0, 250.0]));
        assert_eq!(c.prior, "beta:3,3");
        assert_eq!(c.mode, "multiple:50,150,250");
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn simstudy_methods_list() {
        let c = parse(&["simstudy", "--replicates", "3", "--methods", "gpr,oracle", "--out", "o"]);
        assert_eq!(c.replicates, 3);
        assert_eq!(c.methods, vec!["gpr", "oracle"]);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 5, "prior": "beta:2,2", "sampler": {"max_iter": 9}, "group_col": "condition"}"#).unwrap();
        let p = path.to_str().unwrap();
        let c = parse(&["multisubject", "--config", p, "--seed", "6", "--out", "o"]);
        assert_eq!(c.seed, 6);
        assert_eq!(c.prior, "beta:2,2");
        assert_eq!(c.sampler.max_iter, 9);
        assert_eq!(c.group_col, GroupCol::Condition);
        assert_eq!(c.task, Task::Multisubject);
    }
}
