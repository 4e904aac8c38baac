//! Single-pattern dual controller.
//!
//! With one attack pattern the ball constraint `‖u - u_α(t)‖ ≤ γ` is moved into the
//! cost with a constant multiplier `λ ≥ 0`. The augmented state `x̃ = (x, x̂_α, s)`
//! has linear dynamics, so the relaxed problem is again LQG with a cross term and
//! is solved by a Riccati system. The feedforward block `s` is a known signal, so
//! the recursion itself runs on the `2n` estimate blocks.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::gains::{nominal_input, GainSchedule};
use crate::harness::{parallel_runs, simulate_run, Adversary, Controller, Estimate95, HarnessError, SimContext};
use crate::model::ValidatedScenario;
use crate::numerics::{rk4_path, symmetrize};

const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualError {
    #[error("the dual controller needs exactly one attack pattern, scenario has {0}")]
    RequiresSinglePattern(usize),
    #[error("multiplier must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("dual Riccati solution diverged at t = {t}")]
    Divergence { t: f64 },
    #[error("step {step} is past the horizon of {steps} steps")]
    TimeBeyondHorizon { step: usize, steps: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

fn block3(n: usize, blocks: &[((usize, usize), DMatrix<f64>)]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(3 * n, 3 * n);
    for ((r, c), b) in blocks {
        out.view_mut((r * n, c * n), (n, n)).copy_from(b);
    }
    out
}

/// Augmented-system blocks. Time-varying blocks are evaluated on the half-step grid
/// of the gain schedules (fine index `j` is time `j·dt/2`).
#[derive(Clone, Debug)]
pub struct AugmentedModel {
    pub lambda: f64,
    n: usize,
    m: usize,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    /// `B̃ = [B; B; 0]`.
    pub b_tilde: DMatrix<f64>,
    /// `F̃` with `F` in the top-left block.
    pub f_tilde: DMatrix<f64>,
    /// Reference forcing with `2Q` in block (3, 1).
    pub h: DMatrix<f64>,
    /// `R + λI`.
    pub w: DMatrix<f64>,
    /// `blockdiag(Σw, Σv)` for the pattern's sensors.
    pub sigma: DMatrix<f64>,
    theta: Vec<DMatrix<f64>>,
    gain: Vec<DMatrix<f64>>,
    p: Vec<DMatrix<f64>>,
    s_fine: Vec<DVector<f64>>,
    dt: f64,
    steps: usize,
}

impl AugmentedModel {
    pub fn dim(&self) -> usize {
        3 * self.n
    }

    pub fn fine_len(&self) -> usize {
        self.theta.len()
    }

    /// `Ã(t)`: plant, filter driven by the true state, and the feedforward dynamics.
    pub fn a_tilde(&self, j: usize) -> DMatrix<f64> {
        let tc = &self.theta[j] * &self.c;
        let pbrb = &self.p[j] * &self.b * &self.r_inv * self.b.transpose();
        block3(
            self.n,
            &[
                ((0, 0), self.a.clone()),
                ((1, 0), tc.clone()),
                ((1, 1), &self.a - &tc),
                ((2, 2), -self.a.transpose() + pbrb * 0.5),
            ],
        )
    }

    /// `Q̃(t) = blockdiag(Q, 0, 0) + λ LᵀL` with `u_α = L x̃`.
    pub fn q_tilde(&self, j: usize) -> DMatrix<f64> {
        let k = &self.gain[j];
        let l = self.nominal_map(k);
        let mut out = l.transpose() * &l * self.lambda;
        out.view_mut((0, 0), (self.n, self.n)).copy_from(&self.q);
        symmetrize(&out)
    }

    /// `M(t) = [0; λKᵀ; -λ B R⁻¹]`, so the cross term in the stage cost is `-x̃ᵀ M u`.
    pub fn m_cross(&self, j: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(3 * self.n, self.m);
        out.view_mut((self.n, 0), (self.n, self.m)).copy_from(&(self.gain[j].transpose() * self.lambda));
        out.view_mut((2 * self.n, 0), (self.n, self.m)).copy_from(&(&self.b * &self.r_inv * -self.lambda));
        out
    }

    /// `Ñ(t) = [[I, 0], [0, Θ], [0, 0]]`.
    pub fn n_tilde(&self, j: usize) -> DMatrix<f64> {
        let pa = self.theta[j].ncols();
        let mut out = DMatrix::zeros(3 * self.n, self.n + pa);
        out.view_mut((0, 0), (self.n, self.n)).fill_with_identity();
        out.view_mut((self.n, self.n), (self.n, pa)).copy_from(&self.theta[j]);
        out
    }

    /// `[0, ½K, -½R⁻¹Bᵀ]`.
    fn nominal_map(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.m, 3 * self.n);
        l.view_mut((0, self.n), (self.m, self.n)).copy_from(&(k * 0.5));
        l.view_mut((0, 2 * self.n), (self.m, self.n)).copy_from(&(&self.r_inv * self.b.transpose() * -0.5));
        l
    }
}

pub fn build_augmented(scenario: &ValidatedScenario, gains: &GainSchedule, lambda: f64) -> Result<AugmentedModel, DualError> {
    if scenario.num_patterns() != 1 {
        return Err(DualError::RequiresSinglePattern(scenario.num_patterns()));
    }
    if !(lambda >= 0.0) {
        return Err(DualError::NegativeLambda(lambda));
    }
    let n = scenario.n;
    let m = scenario.m;
    let filter = &gains.patterns[0];
    let r_inv = scenario.r.clone().cholesky().expect("R positive definite").inverse();
    let mut b_tilde = DMatrix::zeros(3 * n, m);
    b_tilde.view_mut((0, 0), (n, m)).copy_from(&scenario.b);
    b_tilde.view_mut((n, 0), (n, m)).copy_from(&scenario.b);
    let f_tilde = block3(n, &[((0, 0), scenario.f.clone())]);
    let h = block3(n, &[((2, 0), &scenario.q * 2.0)]);
    let w = &scenario.r + DMatrix::identity(m, m) * lambda;
    let pa = filter.sensors.len();
    let mut sigma = DMatrix::zeros(n + pa, n + pa);
    sigma.view_mut((0, 0), (n, n)).copy_from(&scenario.sigma_w);
    sigma.view_mut((n, n), (pa, pa)).copy_from(&filter.sensors.sigma_v);
    Ok(AugmentedModel {
        lambda,
        n,
        m,
        a: scenario.a.clone(),
        b: scenario.b.clone(),
        c: filter.sensors.c.clone(),
        q: scenario.q.clone(),
        r_inv,
        b_tilde,
        f_tilde,
        h,
        w,
        sigma,
        theta: filter.theta_fine().to_vec(),
        gain: gains.tracking.gain_fine().to_vec(),
        p: gains.tracking.p_fine().to_vec(),
        s_fine: gains.tracking.s_fine().to_vec(),
        dt: scenario.dt,
        steps: scenario.steps,
    })
}

/// Solution of the λ-relaxed Riccati system on the simulation grid.
///
/// The third block of `x̃` is the deterministic feedforward `s(t)`, which runs
/// backward-stable but forward-unstable. Treating it as a free state makes the
/// quadratic value blow up like `exp(2·|eig|·(T - t))`, so the recursion is carried
/// on the first two blocks `z = (x, x̂_α)` with the `s` rows pinned to the known
/// trajectory. The `s` couplings of `Q̃` and `M` then enter as forcing terms.
#[derive(Clone, Debug)]
pub struct DualSolution {
    pub lambda: f64,
    pub gamma: f64,
    dt: f64,
    steps: usize,
    n: usize,
    /// Quadratic value on `z`, `2n × 2n`.
    p: Vec<DMatrix<f64>>,
    /// Linear value on `z`, length `2n`.
    s: Vec<DVector<f64>>,
    s0: Vec<f64>,
    beta: Vec<f64>,
    /// `M` rows for `z` and for the `s` block.
    m_z: Vec<DMatrix<f64>>,
    m_s: Vec<DMatrix<f64>>,
    b_z: DMatrix<f64>,
    w_inv: DMatrix<f64>,
    tracking_s: Vec<DVector<f64>>,
}

impl DualSolution {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Quadratic value coefficient on `(x, x̂_α)`.
    pub fn p(&self, k: usize) -> &DMatrix<f64> {
        &self.p[k]
    }

    pub fn s(&self, k: usize) -> &DVector<f64> {
        &self.s[k]
    }

    pub fn s0(&self, k: usize) -> f64 {
        self.s0[k]
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k]
    }

    /// `x̃ = (x̂, x̂_α, s(t))`. The plant block uses the full-sensor estimate.
    pub fn augmented_state(&self, xhat_full: &DVector<f64>, xhat_alpha: &DVector<f64>, k: usize) -> DVector<f64> {
        let n = self.n;
        let mut xt = DVector::zeros(3 * n);
        xt.rows_mut(0, n).copy_from(xhat_full);
        xt.rows_mut(n, n).copy_from(xhat_alpha);
        xt.rows_mut(2 * n, n).copy_from(&self.tracking_s[k]);
        xt
    }

    /// Gain of the affine map `x̃ ↦ u` at step `k`, `m × 3n`.
    pub fn feedback(&self, k: usize) -> DMatrix<f64> {
        let n = self.n;
        let g_z = self.b_z.transpose() * &self.p[k] - self.m_z[k].transpose();
        let mut g = DMatrix::zeros(self.b_z.ncols(), 3 * n);
        g.view_mut((0, 0), (g.nrows(), 2 * n)).copy_from(&g_z);
        g.view_mut((0, 2 * n), (g.nrows(), n)).copy_from(&(-self.m_s[k].transpose()));
        &self.w_inv * g * -0.5
    }

    /// Constant term of the affine map at step `k`.
    pub fn offset(&self, k: usize) -> DVector<f64> {
        &self.w_inv * (self.b_z.transpose() * &self.s[k]) * -0.5
    }
}

/// Backward RK4 integration of the relaxed Riccati system with step `dt`; the
/// time-varying blocks are sampled at the half-step grid.
pub fn solve_dual_riccati(model: &AugmentedModel, gamma: f64, reference: &(dyn Fn(f64) -> DVector<f64> + Sync)) -> Result<DualSolution, DualError> {
    let n = model.n;
    let d = 2 * n;
    let steps = model.steps;
    let dt = model.dt;
    let horizon = dt * steps as f64;
    let w_inv = model.w.clone().cholesky().expect("R + λI positive definite").inverse();
    let b_z = model.b_tilde.rows(0, d).into_owned();
    let lam = model.lambda;
    let (ip, is, is0, ib) = (0, d * d, d * d + d, d * d + d + 1);
    let fine_index = |tau: f64| -> usize {
        let j = ((horizon - tau) / (0.5 * dt)).round();
        (j.max(0.0) as usize).min(2 * steps)
    };
    // Reference restricted to z; the `x̂_α` block has no target.
    let r_z = |t: f64| {
        let mut v = DVector::zeros(d);
        v.rows_mut(0, n).copy_from(&reference(t));
        v
    };

    let rhs = |tau: f64, y: &DVector<f64>| {
        let j = fine_index(tau);
        let t = horizon - tau;
        let p = DMatrix::from_column_slice(d, d, &y.as_slice()[ip..ip + d * d]);
        let s = y.rows(is, d).into_owned();
        let at = model.a_tilde(j);
        let qt = model.q_tilde(j);
        let mc = model.m_cross(j);
        let a_z = at.view((0, 0), (d, d));
        let q_zz = qt.view((0, 0), (d, d));
        let q_zs = qt.view((0, d), (d, n));
        let q_ss = qt.view((d, d), (n, n));
        let m_z = mc.rows(0, d);
        let m_s = mc.rows(d, n);
        let nt = model.n_tilde(j);
        let n_z = nt.rows(0, d);
        let sig = &model.s_fine[j];
        let rz = r_z(t);

        let g = b_z.transpose() * &p - m_z.transpose();
        let h = b_z.transpose() * &s - m_s.transpose() * sig;
        let dp = a_z.transpose() * &p + &p * a_z + q_zz * 2.0 - g.transpose() * &w_inv * &g * 0.5;
        let ds = a_z.transpose() * &s - q_zz * &rz * 2.0 + q_zs * sig * 2.0 - g.transpose() * &w_inv * &h * 0.5;
        let ds0 = rz.dot(&(q_zz * &rz)) + sig.dot(&(q_ss * sig)) - 0.25 * h.dot(&(&w_inv * &h)) - lam * gamma * gamma;
        let dbeta = 0.5 * (&p * n_z * &model.sigma * n_z.transpose()).trace();
        // Each entry is minus the forward-time derivative, i.e. the derivative in τ = T - t.
        let mut out = DVector::zeros(y.len());
        out.as_mut_slice()[ip..ip + d * d].copy_from_slice(dp.as_slice());
        out.rows_mut(is, d).copy_from(&ds);
        out[is0] = ds0;
        out[ib] = dbeta;
        out
    };

    let f_z = model.f_tilde.view((0, 0), (d, d)).into_owned();
    let r_end = r_z(horizon);
    let mut y0 = DVector::zeros(d * d + d + 2);
    y0.as_mut_slice()[ip..ip + d * d].copy_from_slice((&f_z * 2.0).as_slice());
    y0.rows_mut(is, d).copy_from(&(&f_z * &r_end * -2.0));
    y0[is0] = r_end.dot(&(&f_z * &r_end));
    let mut path = rk4_path(rhs, 0.0, y0, dt, steps, |k, y: &mut DVector<f64>| {
        let p = symmetrize(&DMatrix::from_column_slice(d, d, &y.as_slice()[ip..ip + d * d]));
        if !y.iter().all(|v| v.is_finite()) || p.norm() > DIVERGENCE_NORM {
            return Err(DualError::Divergence { t: horizon - k as f64 * dt });
        }
        y.as_mut_slice()[ip..ip + d * d].copy_from_slice(p.as_slice());
        Ok(())
    })?;
    path.reverse();

    let m_cross: Vec<DMatrix<f64>> = (0..=steps).map(|k| model.m_cross(2 * k)).collect();
    Ok(DualSolution {
        lambda: lam,
        gamma,
        dt,
        steps,
        n,
        p: path.iter().map(|y| DMatrix::from_column_slice(d, d, &y.as_slice()[ip..ip + d * d])).collect(),
        s: path.iter().map(|y| y.rows(is, d).into_owned()).collect(),
        s0: path.iter().map(|y| y[is0]).collect(),
        beta: path.iter().map(|y| y[ib]).collect(),
        m_z: m_cross.iter().map(|m| m.rows(0, d).into_owned()).collect(),
        m_s: m_cross.iter().map(|m| m.rows(d, n).into_owned()).collect(),
        b_z,
        w_inv,
        tracking_s: (0..=steps).map(|k| model.s_fine[2 * k].clone()).collect(),
    })
}

/// Builds the model for `λ` and solves it in one call.
pub fn dual_solution(scenario: &ValidatedScenario, gains: &GainSchedule, lambda: f64, gamma: f64) -> Result<DualSolution, DualError> {
    let model = build_augmented(scenario, gains, lambda)?;
    let reference = |t: f64| scenario.reference_at(t);
    solve_dual_riccati(&model, gamma, &reference)
}

/// `u = -½ (R + λI)⁻¹ ((B̃ᵀP̃ - Mᵀ) x̃ + B̃ᵀ s̃)`, with the `s` block of `x̃` entering
/// only through `M`.
pub fn dual_control(sol: &DualSolution, xtilde: &DVector<f64>, k: usize) -> Result<DVector<f64>, DualError> {
    if k > sol.steps {
        return Err(DualError::TimeBeyondHorizon { step: k, steps: sol.steps });
    }
    if xtilde.len() != 3 * sol.n {
        return Err(DualError::DimensionMismatch(format!("x̃ has {} entries, expected {}", xtilde.len(), 3 * sol.n)));
    }
    let d = 2 * sol.n;
    let z = xtilde.rows(0, d);
    let feed = xtilde.rows(d, sol.n);
    let g = sol.b_z.transpose() * &sol.p[k] - sol.m_z[k].transpose();
    let h = sol.b_z.transpose() * &sol.s[k] - sol.m_s[k].transpose() * feed;
    Ok(&sol.w_inv * (g * z + h) * -0.5)
}

/// `{0} ∪ logspace(1e-4, 10, 15)`.
pub fn default_lambda_grid() -> Vec<f64> {
    let (lo, hi) = (1e-4f64.log10(), 10f64.log10());
    std::iter::once(0.0)
        .chain((0..15).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / 14.0)))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub v3: Estimate95,
    /// Largest `‖u - u_α‖ - γ` over all steps and runs.
    pub violation_sup: f64,
    /// Paired difference `V3(λ) - V2` over the same noise streams.
    pub diff_vs_v2: Estimate95,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub gamma: f64,
    /// Realized cost of the ball-constrained policy with the same radius.
    pub v2: Estimate95,
    pub rows: Vec<SweepRow>,
    /// Multiplier with the lowest `V3` among rows that never left the ball.
    pub best_lambda: Option<f64>,
}

/// Monte Carlo cost and constraint violation of the dual controller for each `λ`,
/// paired with the ball-constrained policy on common random numbers.
pub fn lambda_sweep(
    ctx: &SimContext,
    gamma: f64,
    lambda_grid: &[f64],
    adversary: &Adversary,
    runs: usize,
    seed: u64,
    workers: usize,
) -> Result<SweepTable, SweepError> {
    let sc = &ctx.scenario;
    let proposed = Controller::Proposed { gammas: vec![gamma] };
    let v2_costs: Vec<f64> = parallel_runs(runs, workers, |run| simulate_run(ctx, &proposed, adversary, seed, run).map(|(_, m)| m.total_cost))
        .into_iter()
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let sol = std::sync::Arc::new(dual_solution(sc, &ctx.gains, lambda, gamma)?);
        let controller = Controller::Dual(sol);
        let results: Vec<(f64, f64)> = parallel_runs(runs, workers, |run| {
            simulate_run(ctx, &controller, adversary, seed, run).map(|(tr, m)| {
                let mut worst = f64::NEG_INFINITY;
                for k in 0..tr.u.len() {
                    let center = nominal_input(&ctx.gains.tracking, &tr.xhat_patterns[0][k], k).expect("step on grid");
                    worst = worst.max((&tr.u[k] - center).norm() - gamma);
                }
                (m.total_cost, worst)
            })
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let costs: Vec<f64> = results.iter().map(|r| r.0).collect();
        let diffs: Vec<f64> = costs.iter().zip(&v2_costs).map(|(a, b)| a - b).collect();
        rows.push(SweepRow {
            lambda,
            v3: Estimate95::from_samples(&costs),
            violation_sup: results.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
            diff_vs_v2: Estimate95::from_samples(&diffs),
        });
    }
    let best_lambda = rows
        .iter()
        .filter(|r| r.violation_sup <= 0.0)
        .min_by(|a, b| a.v3.mean.total_cmp(&b.v3.mean))
        .map(|r| r.lambda);
    Ok(SweepTable { gamma, v2: Estimate95::from_samples(&v2_costs), rows, best_lambda })
}

#[derive(Debug, Error, Clone)]
pub enum SweepError {
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::compute_gains;
    use crate::model::{validate_scenario, ScenarioConfig};

    fn single_pattern(horizon: f64) -> ValidatedScenario {
        let mut cfg = ScenarioConfig::case_study();
        cfg.patterns = vec![vec![4]];
        cfg.horizon = horizon;
        validate_scenario(&cfg).unwrap()
    }

    #[test]
    fn lambda_zero_blocks() {
        let sc = single_pattern(1.0);
        let g = compute_gains(&sc).unwrap();
        let m = build_augmented(&sc, &g, 0.0).unwrap();
        let q = m.q_tilde(10);
        assert_eq!(q.view((0, 0), (2, 2)).into_owned(), sc.q);
        assert_eq!(q.view((2, 2), (4, 4)).into_owned(), DMatrix::zeros(4, 4));
        assert_eq!(m.m_cross(10), DMatrix::zeros(6, 2));
    }

    #[test]
    fn filter_block_of_a_tilde() {
        let sc = single_pattern(1.0);
        let g = compute_gains(&sc).unwrap();
        let m = build_augmented(&sc, &g, 0.5).unwrap();
        let j = 7;
        let expected = g.patterns[0].theta_fine()[j].clone() * &sc.pattern_sets[0].c;
        assert_eq!(m.a_tilde(j).view((2, 0), (2, 2)).into_owned(), expected);
        assert_eq!(m.q_tilde(j).view((0, 0), (2, 2)).into_owned(), sc.q);
    }

    #[test]
    fn multiple_patterns_are_rejected() {
        let sc = validate_scenario(&ScenarioConfig::case_study()).unwrap();
        let g = compute_gains(&sc).unwrap();
        assert!(matches!(build_augmented(&sc, &g, 0.0), Err(DualError::RequiresSinglePattern(2))));
        let single = single_pattern(1.0);
        let gs = compute_gains(&single).unwrap();
        assert!(matches!(build_augmented(&single, &gs, -1.0), Err(DualError::NegativeLambda(_))));
    }

    #[test]
    fn lambda_zero_reproduces_unconstrained_input() {
        let sc = single_pattern(1.0);
        let g = compute_gains(&sc).unwrap();
        let sol = dual_solution(&sc, &g, 0.0, 0.1).unwrap();
        let xf = DVector::from_vec(vec![0.3, 0.7]);
        let xa = DVector::from_vec(vec![0.1, -0.2]);
        for k in [0, 250, 999] {
            let u = dual_control(&sol, &sol.augmented_state(&xf, &xa, k), k).unwrap();
            let expected = nominal_input(&g.tracking, &xf, k).unwrap();
            assert!((u - &expected).norm() <= 1e-8 * (1.0 + expected.norm()), "step {k}");
        }
    }

    #[test]
    fn control_matches_affine_form() {
        let sc = single_pattern(0.5);
        let g = compute_gains(&sc).unwrap();
        let sol = dual_solution(&sc, &g, 0.3, 0.1).unwrap();
        let xt = DVector::from_vec(vec![0.2, -0.1, 0.05, 0.4, -0.3, 0.9]);
        for k in [0, 100, 500] {
            let direct = dual_control(&sol, &xt, k).unwrap();
            let affine = sol.feedback(k) * &xt + sol.offset(k);
            assert!((direct - affine).norm() < 1e-12);
        }
    }

    #[test]
    fn large_lambda_pins_input_to_center() {
        let sc = single_pattern(0.5);
        let g = compute_gains(&sc).unwrap();
        let sol = dual_solution(&sc, &g, 1e6, 0.1).unwrap();
        let xf = DVector::from_vec(vec![0.3, 0.7]);
        let xa = DVector::from_vec(vec![0.1, -0.2]);
        let k = 200;
        let u = dual_control(&sol, &sol.augmented_state(&xf, &xa, k), k).unwrap();
        let center = nominal_input(&g.tracking, &xa, k).unwrap();
        assert!((u - &center).norm() < 1e-3 * (1.0 + center.norm()));
    }

    #[test]
    fn default_grid_shape() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 16);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1e-4).abs() < 1e-18);
        assert!((g[15] - 10.0).abs() < 1e-12);
    }
}
