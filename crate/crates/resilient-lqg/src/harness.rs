//! Closed-loop stochastic simulation, adversaries, metrics and Monte Carlo batches.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dual::{dual_control, DualSolution};
use crate::gains::{compute_gains, nominal_input, GainSchedule, GainsError};
use crate::model::ValidatedScenario;
use crate::numerics::{cumulative_trapezoid, psd_sqrt};
use crate::policy::{control_step, FilterBank, PolicyError, SelectionState};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone)]
pub enum HarnessError {
    #[error(transparent)]
    Gains(#[from] GainsError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },
    #[error("attack on sensor {sensor} is outside the declared support")]
    AttackSupport { sensor: usize },
    #[error("invalid setup: {0}")]
    Invalid(String),
}

/// Scenario plus everything precomputed from it.
#[derive(Clone, Debug)]
pub struct SimContext {
    pub scenario: ValidatedScenario,
    pub gains: GainSchedule,
    noise_w: DMatrix<f64>,
    noise_v: DMatrix<f64>,
}

impl SimContext {
    pub fn new(scenario: ValidatedScenario) -> Result<Self, HarnessError> {
        let gains = compute_gains(&scenario)?;
        Self::with_gains(scenario, gains)
    }

    pub fn with_gains(scenario: ValidatedScenario, gains: GainSchedule) -> Result<Self, HarnessError> {
        let noise_w = psd_sqrt(&scenario.sigma_w).map_err(|e| HarnessError::Invalid(e.to_string()))?;
        let noise_v = psd_sqrt(&scenario.sigma_v).map_err(|e| HarnessError::Invalid(e.to_string()))?;
        Ok(Self { scenario, gains, noise_w, noise_v })
    }
}

/// Which estimate a plain LQG controller feeds into the nominal input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimate {
    Full,
    Pattern(usize),
}

#[derive(Clone, Debug)]
pub enum Controller {
    /// Ball-constrained policy with per-pattern radii.
    Proposed { gammas: Vec<f64> },
    /// Certainty-equivalent LQG on one filter's estimate.
    Lqg(Estimate),
    /// Single-pattern dual controller for a fixed multiplier.
    Dual(Arc<DualSolution>),
}

impl Controller {
    pub fn name(&self) -> String {
        match self {
            Controller::Proposed { .. } => "proposed".into(),
            Controller::Lqg(Estimate::Full) => "lqg_full".into(),
            Controller::Lqg(Estimate::Pattern(i)) => format!("lqg_excluding_{}", i + 1),
            Controller::Dual(sol) => format!("dual_lambda_{}", sol.lambda),
        }
    }
}

pub type AttackFn = Arc<dyn Fn(usize, f64) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
pub enum AdversaryKind {
    None,
    Constant(DVector<f64>),
    /// Piecewise-constant attack vectors; each entry starts at the given time.
    BoundaryPush(Vec<(f64, DVector<f64>)>),
    /// Arbitrary attack as a function of step and time.
    Custom(AttackFn),
}

impl std::fmt::Debug for AdversaryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AdversaryKind::None => write!(f, "None"),
            AdversaryKind::Constant(a) => write!(f, "Constant({:?})", a.as_slice()),
            AdversaryKind::BoundaryPush(s) => write!(f, "BoundaryPush({} segments)", s.len()),
            AdversaryKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Attack signal together with the sensor subset it may touch (0-based).
#[derive(Clone, Debug)]
pub struct Adversary {
    pub kind: AdversaryKind,
    pub support: Vec<usize>,
}

impl Adversary {
    pub fn none() -> Self {
        Self { kind: AdversaryKind::None, support: Vec::new() }
    }

    pub fn constant(a: DVector<f64>, support: Vec<usize>) -> Self {
        Self { kind: AdversaryKind::Constant(a), support }
    }

    pub fn signal(&self, step: usize, t: f64, p: usize) -> Result<DVector<f64>, HarnessError> {
        let a = match &self.kind {
            AdversaryKind::None => return Ok(DVector::zeros(p)),
            AdversaryKind::Constant(a) => a.clone(),
            AdversaryKind::BoundaryPush(segments) => segments
                .iter()
                .rev()
                .find(|(start, _)| *start <= t)
                .map_or_else(|| DVector::zeros(p), |(_, a)| a.clone()),
            AdversaryKind::Custom(f) => f(step, t),
        };
        if a.len() != p {
            return Err(HarnessError::Invalid(format!("attack has {} entries for {p} sensors", a.len())));
        }
        if let Some(s) = (0..p).find(|s| a[*s] != 0.0 && !self.support.contains(s)) {
            return Err(HarnessError::AttackSupport { sensor: s });
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SimTrace {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub a: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub xhat_full: Vec<DVector<f64>>,
    /// Indexed `[pattern][step]`.
    pub xhat_patterns: Vec<Vec<DVector<f64>>>,
    /// Indexed `[pair][step]`, pairs ordered like the scenario's pair sets.
    pub xhat_pairs: Vec<Vec<DVector<f64>>>,
    pub surviving: Vec<Vec<usize>>,
    /// Running integral of the stage cost (trapezoid), without the terminal term.
    pub running_cost: Vec<f64>,
    /// Steps at which the policy found the ball intersection empty, with whether the
    /// split condition held there.
    pub empty_steps: Vec<(usize, bool)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunMetrics {
    pub total_cost: f64,
    pub safety_violated: bool,
    pub first_violation_step: Option<usize>,
    pub reached_goal: bool,
    /// RMS of `‖x - r‖` over the first `RMS_WINDOW` steps.
    pub rms_tracking_error: f64,
    pub eliminated: Vec<usize>,
    pub max_ball_excess: f64,
}

/// Window (in steps) for the headline tracking-error metric.
pub const RMS_WINDOW: usize = 500;

pub fn stage_costs(trace: &SimTrace, scenario: &ValidatedScenario) -> Vec<f64> {
    trace
        .x
        .iter()
        .zip(&trace.u)
        .enumerate()
        .map(|(k, (x, u))| {
            let e = x - scenario.reference_step(k);
            e.dot(&(&scenario.q * &e)) + u.dot(&(&scenario.r * u))
        })
        .collect()
}

/// Trapezoidal stage cost plus `(x(T) - r(T))ᵀ F (x(T) - r(T))`.
pub fn cost(trace: &SimTrace, scenario: &ValidatedScenario) -> f64 {
    let running = cumulative_trapezoid(&stage_costs(trace, scenario), scenario.dt);
    running.last().copied().unwrap_or(0.0) + terminal_cost(trace, scenario)
}

fn terminal_cost(trace: &SimTrace, scenario: &ValidatedScenario) -> f64 {
    let k = trace.x.len() - 1;
    let e = &trace.x[k] - scenario.reference_step(k);
    e.dot(&(&scenario.f * &e))
}

pub fn rms_tracking_error(trace: &SimTrace, scenario: &ValidatedScenario, window: usize) -> f64 {
    let len = window.min(trace.x.len());
    if len == 0 {
        return 0.0;
    }
    let sum: f64 = (0..len).map(|k| (&trace.x[k] - scenario.reference_step(k)).norm_squared()).sum();
    (sum / len as f64).sqrt()
}

/// Per-run random stream derived from `(seed, run)`.
pub fn run_rng(seed: u64, run: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

fn normals<G: Rng>(rng: &mut G, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// One closed-loop run, reproducible from `(seed, run)`.
pub fn simulate_run(
    ctx: &SimContext,
    controller: &Controller,
    adversary: &Adversary,
    seed: u64,
    run: u64,
) -> Result<(SimTrace, RunMetrics), HarnessError> {
    let sc = &ctx.scenario;
    let gains = &ctx.gains;
    let steps = sc.steps;
    let dt = sc.dt;
    let sqrt_dt = dt.sqrt();
    let mut rng = run_rng(seed, run);

    let mut policy_state = match controller {
        Controller::Proposed { gammas } => {
            if gammas.len() != sc.num_patterns() {
                return Err(HarnessError::Invalid(format!("{} radii for {} patterns", gammas.len(), sc.num_patterns())));
            }
            Some(SelectionState::new(gammas.clone()))
        }
        Controller::Lqg(Estimate::Pattern(i)) if *i >= sc.num_patterns() => {
            return Err(HarnessError::Invalid(format!("pattern {i} does not exist")));
        }
        _ => None,
    };

    let mut tr = SimTrace {
        xhat_patterns: vec![Vec::with_capacity(steps + 1); sc.num_patterns()],
        xhat_pairs: vec![Vec::with_capacity(steps + 1); sc.pair_sets.len()],
        ..SimTrace::default()
    };
    let mut bank = FilterBank::new(sc);
    let mut x = sc.x0.clone();
    let mut max_excess = f64::NEG_INFINITY;

    for k in 0..=steps {
        let t = sc.time(k);
        let a = adversary.signal(k, t, sc.p)?;
        let zeta = normals(&mut rng, sc.p);
        let xi = normals(&mut rng, sc.n);
        let y = &sc.c * &x + &ctx.noise_v * zeta / sqrt_dt + &a;

        let u = match controller {
            Controller::Lqg(Estimate::Full) => nominal_input(&gains.tracking, &bank.full.xhat, k)?,
            Controller::Lqg(Estimate::Pattern(i)) => nominal_input(&gains.tracking, bank.pattern(*i), k)?,
            Controller::Dual(sol) => {
                let xt = sol.augmented_state(&bank.full.xhat, bank.pattern(0), k);
                dual_control(sol, &xt, k).map_err(|e| HarnessError::Invalid(e.to_string()))?
            }
            Controller::Proposed { .. } => {
                let state = policy_state.as_ref().expect("policy state");
                let (u, next, info) = control_step(sc, &bank, state, &gains.tracking)?;
                if info.empty_detected {
                    tr.empty_steps.push((k, info.split_holds));
                }
                for s in &info.slack {
                    max_excess = max_excess.max(-s);
                }
                policy_state = Some(next);
                u
            }
        };

        tr.t.push(t);
        tr.x.push(x.clone());
        tr.y.push(y.clone());
        tr.a.push(a);
        tr.u.push(u.clone());
        tr.xhat_full.push(bank.full.xhat.clone());
        for (i, est) in bank.patterns.iter().enumerate() {
            tr.xhat_patterns[i].push(est.xhat.clone());
        }
        for (i, est) in bank.pairs.iter().enumerate() {
            tr.xhat_pairs[i].push(est.xhat.clone());
        }
        tr.surviving.push(policy_state.as_ref().map_or_else(Vec::new, |s| s.surviving.clone()));

        if k < steps {
            x = &x + (&sc.a * &x + &sc.b * &u) * dt + &ctx.noise_w * xi * sqrt_dt;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(HarnessError::NonFiniteState { step: k + 1 });
            }
            bank.update(sc, gains, &y, &u)?;
        }
    }

    tr.running_cost = cumulative_trapezoid(&stage_costs(&tr, sc), dt);
    let first_violation_step = tr.x.iter().position(|x| sc.in_unsafe(x));
    let metrics = RunMetrics {
        total_cost: tr.running_cost[steps] + terminal_cost(&tr, sc),
        safety_violated: first_violation_step.is_some(),
        first_violation_step,
        reached_goal: sc.in_goal(&tr.x[steps]),
        rms_tracking_error: rms_tracking_error(&tr, sc, RMS_WINDOW),
        eliminated: policy_state.map_or_else(Vec::new, |s| s.eliminated_log.iter().map(|e| e.index).collect()),
        max_ball_excess: max_excess.max(0.0),
    };
    Ok((tr, metrics))
}

/// Run `0` of the stream for `seed`.
pub fn simulate(ctx: &SimContext, controller: &Controller, adversary: &Adversary, seed: u64) -> Result<(SimTrace, RunMetrics), HarnessError> {
    simulate_run(ctx, controller, adversary, seed, 0)
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Estimate95 {
    pub mean: f64,
    pub half_width: f64,
}

impl Estimate95 {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self { mean, half_width: f64::INFINITY };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { mean, half_width: Z95 * (var / n).sqrt() }
    }

    /// Normal-approximation interval for a binomial frequency.
    pub fn binomial(successes: usize, trials: usize) -> Self {
        let n = trials as f64;
        let p = successes as f64 / n;
        Self { mean: p, half_width: Z95 * (p * (1.0 - p) / n).sqrt() }
    }

    /// Standard error `sqrt(p(1-p)/n)` of a binomial frequency.
    pub fn binomial_sigma(p: f64, trials: usize) -> f64 {
        (p * (1.0 - p) / trials as f64).sqrt()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloSummary {
    pub controller: String,
    pub runs: usize,
    pub cost: Estimate95,
    pub violation: Estimate95,
    pub goal_miss: Estimate95,
    pub metrics: Vec<RunMetrics>,
}

/// Runs `f(run)` for every run on a pool of `workers` threads; results come back in run order.
pub fn parallel_runs<T, F>(runs: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| (0..runs as u64).into_par_iter().map(&f).collect())
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn summarize(controller: String, metrics: Vec<RunMetrics>) -> MonteCarloSummary {
    let runs = metrics.len();
    let costs: Vec<f64> = metrics.iter().map(|m| m.total_cost).collect();
    let violations = metrics.iter().filter(|m| m.safety_violated).count();
    let misses = metrics.iter().filter(|m| !m.reached_goal).count();
    MonteCarloSummary {
        controller,
        runs,
        cost: Estimate95::from_samples(&costs),
        violation: Estimate95::binomial(violations, runs),
        goal_miss: Estimate95::binomial(misses, runs),
        metrics,
    }
}

pub fn monte_carlo(
    ctx: &SimContext,
    controller: &Controller,
    adversary: &Adversary,
    runs: usize,
    seed: u64,
    workers: usize,
) -> Result<MonteCarloSummary, HarnessError> {
    if runs == 0 {
        return Err(HarnessError::Invalid("runs must be at least 1".into()));
    }
    let results = parallel_runs(runs, workers, |run| simulate_run(ctx, controller, adversary, seed, run).map(|(_, m)| m));
    let metrics = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(controller.name(), metrics))
}

/// Per-step series for one controller, averaged over runs except the trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct FigureSeries {
    pub controller: String,
    /// Mean of `‖x - r‖` per step.
    pub tracking_error: Vec<f64>,
    /// Mean of `ln(running cost)` per step; the first entry is `-inf` when the cost starts at zero.
    pub ln_running_cost: Vec<f64>,
    /// State trajectory of run 0.
    pub trajectory: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub summaries: Vec<MonteCarloSummary>,
    pub series: Vec<FigureSeries>,
}

/// The four reference controllers: proposed, full-sensor LQG and one LQG per pattern.
pub fn standard_controllers(scenario: &ValidatedScenario, gammas: Vec<f64>) -> Vec<Controller> {
    let mut out = vec![Controller::Proposed { gammas }, Controller::Lqg(Estimate::Full)];
    out.extend((0..scenario.num_patterns()).map(|i| Controller::Lqg(Estimate::Pattern(i))));
    out
}

/// Runs every controller on the same `(seed, run)` noise streams.
pub fn compare_controllers(
    ctx: &SimContext,
    controllers: &[Controller],
    adversary: &Adversary,
    runs: usize,
    seed: u64,
    workers: usize,
) -> Result<Comparison, HarnessError> {
    let sc = &ctx.scenario;
    let mut summaries = Vec::new();
    let mut series = Vec::new();
    for c in controllers {
        let results = parallel_runs(runs, workers, |run| {
            simulate_run(ctx, c, adversary, seed, run).map(|(tr, m)| {
                let err: Vec<f64> = (0..tr.x.len()).map(|k| (&tr.x[k] - sc.reference_step(k)).norm()).collect();
                let lnc: Vec<f64> = tr.running_cost.iter().map(|v| v.ln()).collect();
                let traj = if run == 0 { tr.x.iter().map(|x| x.as_slice().to_vec()).collect() } else { Vec::new() };
                (m, err, lnc, traj)
            })
        });
        let mut metrics = Vec::with_capacity(runs);
        let mut err_sum = vec![0.0; sc.steps + 1];
        let mut lnc_sum = vec![0.0; sc.steps + 1];
        let mut trajectory = Vec::new();
        for r in results {
            let (m, err, lnc, traj) = r?;
            for k in 0..=sc.steps {
                err_sum[k] += err[k];
                lnc_sum[k] += lnc[k];
            }
            if !traj.is_empty() {
                trajectory = traj;
            }
            metrics.push(m);
        }
        let n = runs as f64;
        series.push(FigureSeries {
            controller: c.name(),
            tracking_error: err_sum.iter().map(|v| v / n).collect(),
            ln_running_cost: lnc_sum.iter().map(|v| v / n).collect(),
            trajectory,
        });
        summaries.push(summarize(c.name(), metrics));
    }
    Ok(Comparison { summaries, series })
}

/// The case-study attack: unit bias on sensor 4 only.
pub fn case_study_attack(scenario: &ValidatedScenario) -> Adversary {
    let mut a = DVector::zeros(scenario.p);
    a[3] = 1.0;
    Adversary::constant(a, vec![3])
}
