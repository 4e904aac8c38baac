//! Kalman filter covariance schedules, the tracking Riccati solution and nominal inputs.
//!
//! All ODEs are integrated with RK4 at half the simulation step and stored on that
//! finer grid. Simulation step `k` sits at fine index `2k`; the odd entries are the
//! midpoints other integrators (the dual Riccati) need.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{SensorSet, ValidatedScenario, OBSERVABILITY_TOL};
use crate::numerics::{max_eigenvalue, observability_matrix, rank, rk4_path, spectral_norm, sym_eig, symmetrize};

const DIVERGENCE_NORM: f64 = 1e12;
const PSD_CLIP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainsError {
    #[error("Riccati solution diverged at t = {t}")]
    Divergence { t: f64 },
    #[error("sensor subset {rows:?} does not observe the state")]
    NotObservable { rows: Vec<usize> },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("step {step} is past the horizon of {steps} steps")]
    TimeBeyondHorizon { step: usize, steps: usize },
    #[error("steady-state iteration did not converge")]
    NonConvergence,
}

fn unpack(v: &DVector<f64>, n: usize, offset: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, &v.as_slice()[offset..offset + n * n])
}

fn pack_into(v: &mut DVector<f64>, m: &DMatrix<f64>, offset: usize) {
    v.as_mut_slice()[offset..offset + m.len()].copy_from_slice(m.as_slice());
}

/// Symmetrizes and clips round-off negative eigenvalues. Larger negative
/// eigenvalues are left in place so the PSD property tests can see them.
fn clean_covariance(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(phi);
    let (vals, vecs) = match sym_eig(&sym) {
        Ok(e) => e,
        Err(_) => return sym,
    };
    if vals[0] >= 0.0 || vals[0] < -PSD_CLIP {
        return sym;
    }
    let clipped = vals.map(|v| if v < 0.0 && v >= -PSD_CLIP { 0.0 } else { v });
    &vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose()
}

fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, GainsError> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| GainsError::DimensionMismatch("noise covariance is not positive definite".into()))
}

/// Time-indexed error covariance `Φ(t)` and gain `Θ(t) = Φ Cᵀ Σv⁻¹` for one sensor subset.
#[derive(Clone, Debug)]
pub struct FilterSchedule {
    pub sensors: SensorSet,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    dt: f64,
    steps: usize,
    phi: Vec<DMatrix<f64>>,
    theta: Vec<DMatrix<f64>>,
}

/// Estimate held by one filter, indexed by simulation step.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorState {
    pub xhat: DVector<f64>,
    pub step: usize,
}

impl FilterSchedule {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn phi(&self, k: usize) -> &DMatrix<f64> {
        &self.phi[2 * k]
    }

    pub fn theta(&self, k: usize) -> &DMatrix<f64> {
        &self.theta[2 * k]
    }

    /// Samples on the half-step grid (`2 * steps + 1` entries).
    pub fn phi_fine(&self) -> &[DMatrix<f64>] {
        &self.phi
    }

    pub fn theta_fine(&self) -> &[DMatrix<f64>] {
        &self.theta
    }

    pub fn estimator(&self, x0: &DVector<f64>) -> EstimatorState {
        EstimatorState { xhat: x0.clone(), step: 0 }
    }

    /// Euler step of `dx̂ = (A x̂ + B u) dt + Θ (y - C x̂) dt` using this filter's sensors.
    pub fn step(&self, est: &EstimatorState, y: &DVector<f64>, u: &DVector<f64>) -> Result<EstimatorState, GainsError> {
        if est.step >= self.steps {
            return Err(GainsError::TimeBeyondHorizon { step: est.step + 1, steps: self.steps });
        }
        let n = self.a.nrows();
        if y.len() != self.sensors.len() || u.len() != self.b.ncols() || est.xhat.len() != n {
            return Err(GainsError::DimensionMismatch(format!(
                "y has {} entries for {} sensors, u has {} for {} inputs",
                y.len(),
                self.sensors.len(),
                u.len(),
                self.b.ncols()
            )));
        }
        let innovation = y - &self.sensors.c * &est.xhat;
        let drift = &self.a * &est.xhat + &self.b * u + self.theta(est.step) * innovation;
        Ok(EstimatorState { xhat: &est.xhat + drift * self.dt, step: est.step + 1 })
    }
}

pub fn kf_step(
    filter: &FilterSchedule,
    est: &EstimatorState,
    y_subset: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<EstimatorState, GainsError> {
    filter.step(est, y_subset, u)
}

fn check_observable(a: &DMatrix<f64>, sensors: &SensorSet) -> Result<(), GainsError> {
    if sensors.is_empty() || rank(&observability_matrix(a, &sensors.c), OBSERVABILITY_TOL) < a.nrows() {
        return Err(GainsError::NotObservable { rows: sensors.rows.clone() });
    }
    Ok(())
}

/// Filter schedule from explicit matrices, integrated from `Φ(0) = 0` over `steps` steps of `dt`.
pub fn integrate_filter_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    sensors: &SensorSet,
    dt: f64,
    steps: usize,
) -> Result<FilterSchedule, GainsError> {
    check_observable(a, sensors)?;
    let n = a.nrows();
    let sv_inv = inverse_spd(&sensors.sigma_v)?;
    let ct_sinv = sensors.c.transpose() * &sv_inv;
    let info = &ct_sinv * &sensors.c;
    let h = 0.5 * dt;
    let rhs = |_t: f64, y: &DVector<f64>| {
        let phi = unpack(y, n, 0);
        let d = a * &phi + &phi * a.transpose() + sigma_w - &phi * &info * &phi;
        DVector::from_column_slice(d.as_slice())
    };
    let path = rk4_path(rhs, 0.0, DVector::zeros(n * n), h, 2 * steps, |j, y: &mut DVector<f64>| {
        let phi = clean_covariance(&unpack(y, n, 0));
        if !phi.iter().all(|v| v.is_finite()) || phi.norm() > DIVERGENCE_NORM {
            return Err(GainsError::Divergence { t: j as f64 * h });
        }
        pack_into(y, &phi, 0);
        Ok(())
    })?;
    let phi: Vec<DMatrix<f64>> = path.iter().map(|y| unpack(y, n, 0)).collect();
    let theta = phi.iter().map(|p| p * &ct_sinv).collect();
    Ok(FilterSchedule { sensors: sensors.clone(), a: a.clone(), b: b.clone(), dt, steps, phi, theta })
}

pub fn integrate_filter(scenario: &ValidatedScenario, sensors: &SensorSet) -> Result<FilterSchedule, GainsError> {
    integrate_filter_with(&scenario.a, &scenario.b, &scenario.sigma_w, sensors, scenario.dt, scenario.steps)
}

/// Runs the filter Riccati equation until successive iterates differ by less than
/// `1e-10` relative to `‖Φ‖`; returns the fixed point `Φ∞` and `Θ∞`.
pub fn steady_state_filter(
    a: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    sensors: &SensorSet,
    h: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), GainsError> {
    check_observable(a, sensors)?;
    let n = a.nrows();
    let sv_inv = inverse_spd(&sensors.sigma_v)?;
    let ct_sinv = sensors.c.transpose() * &sv_inv;
    let info = &ct_sinv * &sensors.c;
    let rhs = |_t: f64, y: &DVector<f64>| {
        let phi = unpack(y, n, 0);
        let d = a * &phi + &phi * a.transpose() + sigma_w - &phi * &info * &phi;
        DVector::from_column_slice(d.as_slice())
    };
    let mut y = DVector::zeros(n * n);
    for _ in 0..50_000_000usize {
        let next = crate::numerics::rk4_step(&rhs, 0.0, &y, h);
        let phi = clean_covariance(&unpack(&next, n, 0));
        if !phi.iter().all(|v| v.is_finite()) || phi.norm() > DIVERGENCE_NORM {
            return Err(GainsError::Divergence { t: f64::NAN });
        }
        let prev = unpack(&y, n, 0);
        let change = (&phi - &prev).norm();
        pack_into(&mut y, &phi, 0);
        if phi.norm() > 0.0 && change <= 1e-10 * phi.norm() {
            let theta = &phi * &ct_sinv;
            return Ok((phi, theta));
        }
    }
    Err(GainsError::NonConvergence)
}

/// Backward solution of the tracking Riccati system.
///
/// The value function is `½ xᵀ P x + sᵀ x + s0 + β`, and the full-information
/// optimal input is `½ K x - ½ R⁻¹ Bᵀ s` with `K = -R⁻¹ Bᵀ P`.
#[derive(Clone, Debug)]
pub struct TrackingSolution {
    dt: f64,
    steps: usize,
    r_inv_bt: DMatrix<f64>,
    p: Vec<DMatrix<f64>>,
    k: Vec<DMatrix<f64>>,
    s: Vec<DVector<f64>>,
    s0: Vec<f64>,
    beta: Vec<f64>,
}

impl TrackingSolution {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn p(&self, k: usize) -> &DMatrix<f64> {
        &self.p[2 * k]
    }

    pub fn gain(&self, k: usize) -> &DMatrix<f64> {
        &self.k[2 * k]
    }

    pub fn s(&self, k: usize) -> &DVector<f64> {
        &self.s[2 * k]
    }

    pub fn s0(&self, k: usize) -> f64 {
        self.s0[2 * k]
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[2 * k]
    }

    pub fn p_fine(&self) -> &[DMatrix<f64>] {
        &self.p
    }

    pub fn gain_fine(&self) -> &[DMatrix<f64>] {
        &self.k
    }

    pub fn s_fine(&self) -> &[DVector<f64>] {
        &self.s
    }

    /// `R⁻¹ Bᵀ`.
    pub fn r_inv_bt(&self) -> &DMatrix<f64> {
        &self.r_inv_bt
    }

    /// `-½ R⁻¹ Bᵀ s(t)`, the part of the nominal input that does not depend on the estimate.
    pub fn feedforward(&self, k: usize) -> DVector<f64> {
        &self.r_inv_bt * self.s(k) * -0.5
    }

    /// Expected cost-to-go from state `x` at step `k` under full-state feedback.
    pub fn value(&self, x: &DVector<f64>, k: usize) -> f64 {
        0.5 * x.dot(&(self.p(k) * x)) + self.s(k).dot(x) + self.s0(k) + self.beta(k)
    }
}

/// Tracking solution from explicit matrices and a reference function of time.
#[allow(clippy::too_many_arguments)]
pub fn integrate_tracking_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    f: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    reference: &(dyn Fn(f64) -> DVector<f64> + Sync),
    dt: f64,
    steps: usize,
) -> Result<TrackingSolution, GainsError> {
    let n = a.nrows();
    let r_inv = inverse_spd(r)?;
    let r_inv_bt = &r_inv * b.transpose();
    let b_rinv_bt = b * &r_inv_bt;
    let horizon = dt * steps as f64;
    let h = 0.5 * dt;
    let (ip, is, is0, ib) = (0, n * n, n * n + n, n * n + n + 1);

    // Integrate in reversed time τ = T - t.
    let rhs = |tau: f64, y: &DVector<f64>| {
        let t = horizon - tau;
        let p = unpack(y, n, ip);
        let s = y.rows(is, n).into_owned();
        let rt = reference(t);
        let dp = a.transpose() * &p + &p * a - &p * &b_rinv_bt * &p * 0.5 + q * 2.0;
        let ds = (a.transpose() - &p * &b_rinv_bt * 0.5) * &s - q * &rt * 2.0;
        let ds0 = -(0.25 * s.dot(&(&b_rinv_bt * &s)) - rt.dot(&(q * &rt)));
        let dbeta = 0.5 * (&p * sigma_w).trace();
        let mut out = DVector::zeros(y.len());
        pack_into(&mut out, &dp, ip);
        out.rows_mut(is, n).copy_from(&ds);
        out[is0] = ds0;
        out[ib] = dbeta;
        out
    };
    let r_end = reference(horizon);
    let mut y0 = DVector::zeros(n * n + n + 2);
    pack_into(&mut y0, &(f * 2.0), ip);
    y0.rows_mut(is, n).copy_from(&(f * &r_end * -2.0));
    y0[is0] = r_end.dot(&(f * &r_end));
    let mut path = rk4_path(rhs, 0.0, y0, h, 2 * steps, |j, y: &mut DVector<f64>| {
        let p = symmetrize(&unpack(y, n, ip));
        if !y.iter().all(|v| v.is_finite()) || p.norm() > DIVERGENCE_NORM {
            return Err(GainsError::Divergence { t: horizon - j as f64 * h });
        }
        pack_into(y, &p, ip);
        Ok(())
    })?;
    path.reverse();

    let p: Vec<DMatrix<f64>> = path.iter().map(|y| unpack(y, n, ip)).collect();
    let k = p.iter().map(|pk| -(&r_inv_bt * pk)).collect();
    let s = path.iter().map(|y| y.rows(is, n).into_owned()).collect();
    let s0 = path.iter().map(|y| y[is0]).collect();
    let beta = path.iter().map(|y| y[ib]).collect();
    Ok(TrackingSolution { dt, steps, r_inv_bt, p, k, s, s0, beta })
}

pub fn integrate_tracking(scenario: &ValidatedScenario) -> Result<TrackingSolution, GainsError> {
    let reference = |t: f64| scenario.reference_at(t);
    integrate_tracking_with(
        &scenario.a,
        &scenario.b,
        &scenario.q,
        &scenario.r,
        &scenario.f,
        &scenario.sigma_w,
        &reference,
        scenario.dt,
        scenario.steps,
    )
}

/// `u = ½ K(t) x̂ - ½ R⁻¹ Bᵀ s(t)` at simulation step `k`.
pub fn nominal_input(tracking: &TrackingSolution, xhat: &DVector<f64>, k: usize) -> Result<DVector<f64>, GainsError> {
    if k > tracking.steps {
        return Err(GainsError::TimeBeyondHorizon { step: k, steps: tracking.steps });
    }
    let gain = tracking.gain(k);
    if xhat.len() != gain.ncols() {
        return Err(GainsError::DimensionMismatch(format!("estimate has {} entries, state has {}", xhat.len(), gain.ncols())));
    }
    Ok(gain * xhat * 0.5 + tracking.feedforward(k))
}

/// Largest eigenvalue of `Φ(t)` over the whole (half-step) grid.
pub fn lambda_star(schedule: &FilterSchedule) -> f64 {
    schedule
        .phi
        .iter()
        .map(|p| max_eigenvalue(p).expect("finite covariance"))
        .fold(0.0, f64::max)
}

/// Largest spectral norm of `K(t)` over the whole grid.
pub fn kbar(tracking: &TrackingSolution) -> f64 {
    tracking
        .k
        .iter()
        .map(|k| spectral_norm(k).unwrap_or_else(|_| k.clone().svd(false, false).singular_values.max()))
        .fold(0.0, f64::max)
}

/// Every schedule the online policy needs.
#[derive(Clone, Debug)]
pub struct GainSchedule {
    pub tracking: TrackingSolution,
    pub full: FilterSchedule,
    pub patterns: Vec<FilterSchedule>,
    /// Keyed like `ValidatedScenario::pair_sets`.
    pub pairs: Vec<((usize, usize), FilterSchedule)>,
}

impl GainSchedule {
    pub fn pair(&self, i: usize, j: usize) -> &FilterSchedule {
        let key = if i < j { (i, j) } else { (j, i) };
        &self.pairs.iter().find(|(k, _)| *k == key).expect("pair schedule exists").1
    }
}

pub fn compute_gains(scenario: &ValidatedScenario) -> Result<GainSchedule, GainsError> {
    let mut sets: Vec<&SensorSet> = vec![&scenario.full];
    sets.extend(scenario.pattern_sets.iter());
    sets.extend(scenario.pair_sets.iter().map(|(_, s)| s));
    let (tracking, filters) = rayon::join(
        || integrate_tracking(scenario),
        || sets.par_iter().map(|s| integrate_filter(scenario, s)).collect::<Result<Vec<_>, _>>(),
    );
    let tracking = tracking?;
    let mut filters = filters?.into_iter();
    let full = filters.next().expect("full filter");
    let patterns: Vec<FilterSchedule> = filters.by_ref().take(scenario.num_patterns()).collect();
    let pairs = scenario.pair_sets.iter().map(|(k, _)| *k).zip(filters).collect();
    Ok(GainSchedule { tracking, full, patterns, pairs })
}
