//! Online policy: divergence events between filters, constraint elimination and the
//! per-step ball-constrained control.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gains::{nominal_input, EstimatorState, GainSchedule, GainsError, TrackingSolution};
use crate::model::ValidatedScenario;
use crate::qcqp::{check_feasible, solve_warm, BallConstraint, QcqpError, QcqpProblem, FEASIBILITY_BAND};

#[derive(Debug, Error, Clone)]
pub enum PolicyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Gains(#[from] GainsError),
    #[error(transparent)]
    Qcqp(#[from] QcqpError),
    #[error("applied input leaves ball {index} by {excess:.3e}")]
    Postcondition { index: usize, excess: f64 },
}

fn check_dims(k: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> Result<(), PolicyError> {
    if a.len() != k.ncols() || b.len() != k.ncols() {
        return Err(PolicyError::DimensionMismatch(format!(
            "gain has {} columns, estimates have {} and {} entries",
            k.ncols(),
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `‖K (x̂_i - x̂_ij)‖`.
pub fn event_magnitude(k: &DMatrix<f64>, xhat_i: &DVector<f64>, xhat_ij: &DVector<f64>) -> Result<f64, PolicyError> {
    check_dims(k, xhat_i, xhat_ij)?;
    Ok((k * (xhat_i - xhat_ij)).norm())
}

/// True iff `‖K (x̂_i - x̂_ij)‖ > γ_min`.
pub fn omega_event(k: &DMatrix<f64>, xhat_i: &DVector<f64>, xhat_ij: &DVector<f64>, gamma_min: f64) -> Result<bool, PolicyError> {
    Ok(event_magnitude(k, xhat_i, xhat_ij)? > gamma_min)
}

/// `½ ‖K (x̂_i - x̂_j)‖`, which equals the distance between the two nominal inputs.
pub fn pair_distance(k: &DMatrix<f64>, xhat_i: &DVector<f64>, xhat_j: &DVector<f64>) -> Result<f64, PolicyError> {
    check_dims(k, xhat_i, xhat_j)?;
    Ok(0.5 * (k * (xhat_i - xhat_j)).norm())
}

/// True when an empty intersection is explained by the maximizing pair: either the
/// pair is more than `2γ_min` apart, or some center is more than `γ_min` from the
/// pair's midpoint. Always holds when the balls (radii at least `γ_min`) do not meet.
pub fn triangle_split_holds(centers: &[DVector<f64>], gamma_min: f64) -> bool {
    let Some((i, j, d)) = farthest_pair(centers) else {
        return false;
    };
    if d > 2.0 * gamma_min {
        return true;
    }
    let mid = (&centers[i] + &centers[j]) * 0.5;
    centers.iter().any(|c| (c - &mid).norm() > gamma_min)
}

/// Farthest pair, ties broken towards the lexicographically smallest `(i, j)`.
fn farthest_pair(points: &[DVector<f64>]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = (&points[i] - &points[j]).norm();
            if best.map_or(true, |(_, _, bd)| d > bd) {
                best = Some((i, j, d));
            }
        }
    }
    best
}

/// Estimates from every filter in the bank.
#[derive(Clone, Debug)]
pub struct FilterBank {
    pub full: EstimatorState,
    pub patterns: Vec<EstimatorState>,
    /// Ordered like `ValidatedScenario::pair_sets`.
    pub pairs: Vec<EstimatorState>,
    pair_keys: Vec<(usize, usize)>,
}

impl FilterBank {
    pub fn new(scenario: &ValidatedScenario) -> Self {
        let start = EstimatorState { xhat: scenario.x0.clone(), step: 0 };
        Self {
            full: start.clone(),
            patterns: vec![start.clone(); scenario.num_patterns()],
            pairs: vec![start; scenario.pair_sets.len()],
            pair_keys: scenario.pair_sets.iter().map(|(k, _)| *k).collect(),
        }
    }

    pub fn step(&self) -> usize {
        self.full.step
    }

    pub fn pattern(&self, i: usize) -> &DVector<f64> {
        &self.patterns[i].xhat
    }

    pub fn pair(&self, i: usize, j: usize) -> &DVector<f64> {
        let key = if i < j { (i, j) } else { (j, i) };
        let idx = self.pair_keys.iter().position(|k| *k == key).expect("pair filter exists");
        &self.pairs[idx].xhat
    }

    /// Advances every filter with the full measurement vector `y` and the applied input `u`.
    pub fn update(&mut self, scenario: &ValidatedScenario, gains: &GainSchedule, y: &DVector<f64>, u: &DVector<f64>) -> Result<(), GainsError> {
        self.full = gains.full.step(&self.full, &scenario.full.select(y), u)?;
        for (est, sched) in self.patterns.iter_mut().zip(&gains.patterns) {
            *est = sched.step(est, &sched.sensors.select(y), u)?;
        }
        for (est, (_, sched)) in self.pairs.iter_mut().zip(&gains.pairs) {
            *est = sched.step(est, &sched.sensors.select(y), u)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EliminationReason {
    /// `‖K (x̂_i - x̂_ij)‖` exceeded `γ_min` for the pair `(i, j)`.
    Divergence { pair: (usize, usize), magnitude: f64 },
    /// Divergence tests removed nothing yet the balls still did not meet; the index
    /// with the largest event magnitude was dropped.
    Forced { magnitude: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Elimination {
    pub step: usize,
    pub index: usize,
    pub reason: EliminationReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionState {
    /// Surviving pattern indices, ascending.
    pub surviving: Vec<usize>,
    pub eliminated_log: Vec<Elimination>,
    pub gammas: Vec<f64>,
    /// Minimum radius over all patterns, fixed at construction.
    pub gamma_min: f64,
    warm: Vec<f64>,
}

impl SelectionState {
    pub fn new(gammas: Vec<f64>) -> Self {
        assert!(!gammas.is_empty(), "at least one pattern");
        let gamma_min = gammas.iter().copied().fold(f64::INFINITY, f64::min);
        let q = gammas.len();
        Self { surviving: (0..q).collect(), eliminated_log: Vec::new(), gammas, gamma_min, warm: vec![0.0; q] }
    }

    fn eliminate(&mut self, index: usize, step: usize, reason: EliminationReason) -> bool {
        if self.surviving.len() <= 1 || !self.surviving.contains(&index) {
            return false;
        }
        self.surviving.retain(|&i| i != index);
        self.eliminated_log.push(Elimination { step, index, reason });
        true
    }
}

/// Tests `Ω_a^{ab}` and `Ω_b^{ab}` and removes whichever fire. When both fire and
/// removing both would empty the set, the one with the smaller excess is kept.
fn test_pair(
    state: &mut SelectionState,
    bank: &FilterBank,
    k: &DMatrix<f64>,
    a: usize,
    b: usize,
    step: usize,
) -> Result<bool, PolicyError> {
    let joint = bank.pair(a, b);
    let key = if a < b { (a, b) } else { (b, a) };
    let mut fired: Vec<(usize, f64)> = Vec::new();
    for idx in [a, b] {
        let mag = event_magnitude(k, bank.pattern(idx), joint)?;
        if mag > state.gamma_min {
            fired.push((idx, mag));
        }
    }
    // Largest excess first so the never-empty rule keeps the smaller one.
    fired.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut removed = false;
    for (idx, mag) in fired {
        removed |= state.eliminate(idx, step, EliminationReason::Divergence { pair: key, magnitude: mag });
    }
    Ok(removed)
}

fn surviving_argmax(state: &SelectionState, bank: &FilterBank, k: &DMatrix<f64>) -> Result<Option<(usize, usize, f64)>, PolicyError> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (x, &i) in state.surviving.iter().enumerate() {
        for &j in &state.surviving[x + 1..] {
            let d = pair_distance(k, bank.pattern(i), bank.pattern(j))?;
            if best.map_or(true, |(_, _, bd)| d > bd) {
                best = Some((i, j, d));
            }
        }
    }
    Ok(best)
}

/// Constraint selection for an empty ball intersection. Eliminations are permanent.
pub fn select_constraints(
    bank: &FilterBank,
    state: &SelectionState,
    k: &DMatrix<f64>,
) -> Result<SelectionState, PolicyError> {
    let mut s = state.clone();
    let step = bank.step();
    let gmin = s.gamma_min;

    // Far-apart pairs: at least one of the two filters disagrees with their joint filter.
    while let Some((i, j, d)) = surviving_argmax(&s, bank, k)? {
        if d <= 2.0 * gmin {
            break;
        }
        if !test_pair(&mut s, bank, k, i, j, step)? {
            break;
        }
    }

    // Split tests of each survivor against the current farthest pair.
    let candidates = s.surviving.clone();
    for i in candidates {
        let Some((hi, hj, _)) = surviving_argmax(&s, bank, k)? else {
            break;
        };
        if !s.surviving.contains(&i) {
            continue;
        }
        for hat in [hi, hj] {
            if hat == i || !s.surviving.contains(&hat) || !s.surviving.contains(&i) {
                continue;
            }
            let quarter = 0.25 * (k * (bank.pattern(i) - bank.pattern(hat))).norm();
            if quarter > 0.5 * gmin {
                test_pair(&mut s, bank, k, i, hat, step)?;
            }
        }
    }
    Ok(s)
}

/// Diagnostics from one control step.
#[derive(Clone, Debug)]
pub struct StepInfo {
    pub step: usize,
    pub surviving: Vec<usize>,
    pub d_max: f64,
    pub empty_detected: bool,
    /// Whether the split condition held when the intersection was empty (always true
    /// if nothing was empty).
    pub split_holds: bool,
    /// Multipliers from the QCQP, one per surviving ball.
    pub multipliers: Vec<f64>,
    /// `γ_i - ‖u - c_i‖` per surviving ball.
    pub slack: Vec<f64>,
    pub eliminated: Vec<Elimination>,
}

fn build_balls(state: &SelectionState, bank: &FilterBank, tracking: &TrackingSolution, k: usize) -> Result<Vec<BallConstraint>, PolicyError> {
    state
        .surviving
        .iter()
        .map(|&i| Ok(BallConstraint::new(nominal_input(tracking, bank.pattern(i), k)?, state.gammas[i], i)))
        .collect()
}

/// Computes the applied input at the bank's current step.
pub fn control_step(
    scenario: &ValidatedScenario,
    bank: &FilterBank,
    state: &SelectionState,
    tracking: &TrackingSolution,
) -> Result<(DVector<f64>, SelectionState, StepInfo), PolicyError> {
    let k = bank.step();
    let gain = tracking.gain(k);
    let mut s = state.clone();
    let log_start = s.eliminated_log.len();
    let mut balls = build_balls(&s, bank, tracking, k)?;
    let d_max = surviving_argmax(&s, bank, gain)?.map_or(0.0, |(_, _, d)| d);
    let mut empty_detected = false;
    let mut split_holds = true;

    if check_feasible(&balls).is_empty() {
        empty_detected = true;
        let centers: Vec<DVector<f64>> = balls.iter().map(|b| b.center.clone()).collect();
        split_holds = triangle_split_holds(&centers, s.gamma_min);
        s = select_constraints(bank, &s, gain)?;
        balls = build_balls(&s, bank, tracking, k)?;
        while s.surviving.len() > 1 && check_feasible(&balls).is_empty() {
            let (worst, mag) = forced_candidate(&s, bank, gain)?;
            s.eliminate(worst, k, EliminationReason::Forced { magnitude: mag });
            balls = build_balls(&s, bank, tracking, k)?;
        }
    }

    let x_full = &bank.full.xhat;
    let lin = scenario.b.transpose() * (tracking.p(k) * x_full + tracking.s(k));
    let problem = QcqpProblem { r: scenario.r.clone(), lin, balls };
    let warm: Vec<f64> = s.surviving.iter().map(|&i| s.warm[i]).collect();
    let sol = solve_warm(&problem, Some(&warm))?;
    let mut slack = Vec::with_capacity(problem.balls.len());
    for (b, &mu) in problem.balls.iter().zip(&sol.multipliers) {
        let excess = b.excess(&sol.u);
        if excess > FEASIBILITY_BAND {
            return Err(PolicyError::Postcondition { index: b.pattern_index, excess });
        }
        slack.push(-excess);
        s.warm[b.pattern_index] = mu;
    }
    let info = StepInfo {
        step: k,
        surviving: s.surviving.clone(),
        d_max,
        empty_detected,
        split_holds,
        multipliers: sol.multipliers.clone(),
        slack,
        eliminated: s.eliminated_log[log_start..].to_vec(),
    };
    Ok((sol.u, s, info))
}

fn forced_candidate(s: &SelectionState, bank: &FilterBank, k: &DMatrix<f64>) -> Result<(usize, f64), PolicyError> {
    let mut best = (s.surviving[0], f64::NEG_INFINITY);
    for &i in &s.surviving {
        let mut worst = 0.0f64;
        for &j in &s.surviving {
            if j != i {
                worst = worst.max(event_magnitude(k, bank.pattern(i), bank.pair(i, j))?);
            }
        }
        if worst > best.1 {
            best = (i, worst);
        }
    }
    Ok(best)
}
