use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use resilient_lqg::harness::{self, Adversary, Estimate};
use resilient_lqg::model::ValidatedScenario;
use resilient_lqg::Vector;

#[derive(Parser)]
#[command(name = "resilient-lqg", version, about = "Attack-resilient LQG tracking: simulation, certification and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run one closed-loop simulation and write its trace.
    Simulate(SimulateArgs),
    /// Monte Carlo statistics for one controller.
    Montecarlo(MonteCarloArgs),
    /// Proposed policy against the LQG baselines on common random numbers.
    Compare(CompareArgs),
    /// Barrier-certificate radius selection.
    Certify(CertifyArgs),
    /// Multiplier sweep of the single-pattern dual controller.
    Dual(DualArgs),
    /// Attack-free and attacked comparisons with figure data.
    Casestudy(CaseStudyArgs),
    /// QCQP utilities.
    Qcqp {
        #[command(subcommand)]
        command: QcqpCommand,
    },
}

#[derive(Subcommand)]
pub enum QcqpCommand {
    /// Random-instance comparison against reference solvers.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args)]
pub struct Common {
    #[arg(long, default_value = "scenarios/case_study.json")]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the scenario's step size.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Also write SVG plots where the command produces figure data.
    #[arg(long)]
    pub plot: bool,
}

impl Common {
    pub fn workers(&self) -> usize {
        self.workers.unwrap_or_else(harness::default_workers)
    }
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// `proposed`, `lqg-full` or `lqg-excluding-N` (1-based pattern).
    #[arg(long, default_value = "proposed")]
    pub controller: String,
    /// `none`, `case-study`, or `SENSOR=VALUE,...` with 1-based sensors.
    #[arg(long, default_value = "case-study")]
    pub attack: String,
    /// Comma-separated radii; selected by certification when omitted.
    #[arg(long)]
    pub gammas: Option<String>,
    /// Write the gain schedules to this CSV file.
    #[arg(long)]
    pub dump_gains: Option<PathBuf>,
}

#[derive(Args)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "proposed")]
    pub controller: String,
    #[arg(long, default_value = "case-study")]
    pub attack: String,
    #[arg(long)]
    pub gammas: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub runs: usize,
}

#[derive(Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "case-study")]
    pub attack: String,
    #[arg(long)]
    pub gammas: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
}

#[derive(Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub eps_s: Option<f64>,
    #[arg(long)]
    pub eps_r: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub gamma0: f64,
    /// Bisection width (defaults to 1e-3 * gamma0).
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub iter_times: usize,
    /// Runs per strategy for the Monte Carlo check of each certificate (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub mc_runs: usize,
}

#[derive(Args)]
pub struct DualArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated multipliers; defaults to 0 and 15 log-spaced values in [1e-4, 10].
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    /// Ball radius; selected by certification when omitted.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value = "none")]
    pub attack: String,
}

#[derive(Args)]
pub struct CaseStudyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    #[arg(long)]
    pub gammas: Option<String>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 4)]
    pub max_dim: usize,
    #[arg(long, default_value_t = 20000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub enum ControllerChoice {
    Proposed,
    Lqg(Estimate),
}

pub fn parse_controller(name: &str, patterns: usize) -> Result<ControllerChoice> {
    match name {
        "proposed" => Ok(ControllerChoice::Proposed),
        "lqg-full" => Ok(ControllerChoice::Lqg(Estimate::Full)),
        other => {
            let idx: usize = other
                .strip_prefix("lqg-excluding-")
                .and_then(|s| s.parse().ok())
                .with_context(|| format!("unknown controller `{other}`"))?;
            if idx == 0 || idx > patterns {
                bail!("pattern {idx} out of range 1..={patterns}");
            }
            Ok(ControllerChoice::Lqg(Estimate::Pattern(idx - 1)))
        }
    }
}

pub fn parse_floats(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("not a number: `{s}`")))
        .collect()
}

pub fn parse_attack(text: &str, scenario: &ValidatedScenario) -> Result<Adversary> {
    match text {
        "none" => Ok(Adversary::none()),
        "case-study" => Ok(harness::case_study_attack(scenario)),
        list => {
            let mut a = Vector::zeros(scenario.p);
            let mut support = Vec::new();
            for item in list.split(',') {
                let (s, v) = item.split_once('=').with_context(|| format!("expected SENSOR=VALUE, got `{item}`"))?;
                let sensor: usize = s.trim().parse().with_context(|| format!("bad sensor `{s}`"))?;
                if sensor == 0 || sensor > scenario.p {
                    bail!("sensor {sensor} out of range 1..={}", scenario.p);
                }
                a[sensor - 1] = v.trim().parse().with_context(|| format!("bad value `{v}`"))?;
                support.push(sensor - 1);
            }
            Ok(Adversary::constant(a, support))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use resilient_lqg::model::{validate_scenario, ScenarioConfig};

    #[test]
    fn controller_names() {
        assert!(matches!(parse_controller("proposed", 2).unwrap(), ControllerChoice::Proposed));
        assert!(matches!(parse_controller("lqg-full", 2).unwrap(), ControllerChoice::Lqg(Estimate::Full)));
        assert!(matches!(parse_controller("lqg-excluding-2", 2).unwrap(), ControllerChoice::Lqg(Estimate::Pattern(1))));
        assert!(parse_controller("lqg-excluding-0", 2).is_err());
        assert!(parse_controller("lqg-excluding-3", 2).is_err());
        assert!(parse_controller("pid", 2).is_err());
    }

    #[test]
    fn float_lists() {
        assert_eq!(parse_floats("0, 1e-3,10").unwrap(), vec![0.0, 1e-3, 10.0]);
        assert!(parse_floats("1,,2").is_err());
    }

    #[test]
    fn attack_lists_are_one_based() {
        let sc = validate_scenario(&ScenarioConfig::case_study()).unwrap();
        let adv = parse_attack("2=0.5,4=-1", &sc).unwrap();
        assert_eq!(adv.signal(0, 0.0, 4).unwrap().as_slice(), &[0.0, 0.5, 0.0, -1.0]);
        assert_eq!(parse_attack("case-study", &sc).unwrap().signal(0, 0.0, 4).unwrap().as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        assert!(parse_attack("5=1", &sc).is_err());
        assert!(parse_attack("4", &sc).is_err());
    }
}
