//! Convex quadratic objective over an intersection of Euclidean balls.
//!
//! `solve` maximizes the Lagrange dual over the ball multipliers with a projected
//! Newton method; the primal point is recovered in closed form from the multipliers.
//! If the dual stalls, a projected-gradient method with Dykstra projections takes over.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numerics::{max_eigenvalue, min_eigenvalue};

/// Tolerance band for the emptiness test.
pub const FEASIBILITY_BAND: f64 = 1e-9;
const MAX_DUAL_ITERS: usize = 10_000;
const MAX_FALLBACK_ITERS: usize = 100_000;
const STALL_WINDOW: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct BallConstraint {
    pub center: DVector<f64>,
    pub radius: f64,
    pub pattern_index: usize,
}

impl BallConstraint {
    pub fn new(center: DVector<f64>, radius: f64, pattern_index: usize) -> Self {
        assert!(radius >= 0.0, "ball radius must be non-negative");
        Self { center, radius, pattern_index }
    }

    /// `‖u - c‖ - γ`; positive outside the ball.
    pub fn excess(&self, u: &DVector<f64>) -> f64 {
        (u - &self.center).norm() - self.radius
    }
}

#[derive(Clone, Debug)]
pub struct QcqpProblem {
    pub r: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub balls: Vec<BallConstraint>,
}

impl QcqpProblem {
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.r * u)) + self.lin.dot(u)
    }

    /// Unconstrained minimizer `-½ R⁻¹ lin`.
    pub fn unconstrained_minimizer(&self) -> DVector<f64> {
        let ch = self.r.clone().cholesky().expect("R positive definite");
        ch.solve(&self.lin) * -0.5
    }

    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        self.balls.iter().map(|b| b.excess(u)).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    Interior,
    DualNewton,
    ProjectedGradient,
}

#[derive(Clone, Debug)]
pub struct QcqpSolution {
    pub u: DVector<f64>,
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub feasibility_violation: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Feasibility {
    /// `witness` is strictly inside every ball unless the minimax margin lies in the tolerance band.
    NonEmpty { witness: DVector<f64>, margin: f64 },
    Empty { margin: f64 },
}

impl Feasibility {
    pub fn is_empty(&self) -> bool {
        matches!(self, Feasibility::Empty { .. })
    }

    pub fn margin(&self) -> f64 {
        match self {
            Feasibility::NonEmpty { margin, .. } | Feasibility::Empty { margin } => *margin,
        }
    }
}

#[derive(Debug, Error, Clone)]
pub enum QcqpError {
    #[error("ball intersection is empty (margin {margin:.3e})")]
    Infeasible { margin: f64 },
    #[error("iteration limit reached (kkt residual {:.3e})", best.kkt_residual)]
    MaxIterations { best: Box<QcqpSolution> },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

fn minimax_value(balls: &[BallConstraint], u: &DVector<f64>) -> f64 {
    balls.iter().map(|b| b.excess(u)).fold(f64::NEG_INFINITY, f64::max)
}

/// Decides whether the balls share a point by minimizing `max_i (‖u - c_i‖ - γ_i)`.
///
/// The minimax problem is solved as `min s` subject to `‖u - c_i‖ ≤ γ_i + s` with a
/// log-barrier method on the second-order cones.
pub fn check_feasible(balls: &[BallConstraint]) -> Feasibility {
    assert!(!balls.is_empty(), "at least one ball is required");
    let m = balls[0].center.len();
    let q = balls.len();
    let mean = balls.iter().fold(DVector::zeros(m), |acc, b| acc + &b.center) / q as f64;

    // Cheap witnesses first: the centers and their mean.
    let mut best: Option<(DVector<f64>, f64)> = None;
    for cand in balls.iter().map(|b| b.center.clone()).chain(std::iter::once(mean.clone())) {
        let v = minimax_value(balls, &cand);
        if best.as_ref().map_or(true, |(_, bv)| v < *bv) {
            best = Some((cand, v));
        }
    }
    let (cand, v) = best.expect("at least one candidate");
    if v <= -FEASIBILITY_BAND {
        return Feasibility::NonEmpty { witness: cand, margin: v };
    }

    let (u, margin) = minimax_barrier(balls, &mean);
    let (u, margin) = if margin <= v { (u, margin) } else { (cand, v) };
    if margin < FEASIBILITY_BAND {
        Feasibility::NonEmpty { witness: u, margin }
    } else {
        Feasibility::Empty { margin }
    }
}

fn minimax_barrier(balls: &[BallConstraint], mean: &DVector<f64>) -> (DVector<f64>, f64) {
    let m = mean.len();
    let q = balls.len();
    let spread = balls
        .iter()
        .map(|b| (&b.center - mean).norm().max(b.radius))
        .fold(0.0, f64::max);
    if spread == 0.0 {
        return (mean.clone(), 0.0);
    }
    // Work in coordinates centered at the mean and scaled by the spread.
    let centers: Vec<DVector<f64>> = balls.iter().map(|b| (&b.center - mean) / spread).collect();
    let radii: Vec<f64> = balls.iter().map(|b| b.radius / spread).collect();
    let dim = m + 1;

    let slack = |z: &DVector<f64>, i: usize| -> Option<f64> {
        let u = z.rows(0, m);
        let a = radii[i] + z[m];
        let d2 = (u - &centers[i]).norm_squared();
        let g = a * a - d2;
        (a > 0.0 && g > 0.0).then_some(g)
    };
    let barrier = |z: &DVector<f64>, t: f64| -> Option<f64> {
        let mut f = t * z[m];
        for i in 0..q {
            f -= slack(z, i)?.ln();
        }
        Some(f)
    };

    let mut z = DVector::zeros(dim);
    z[m] = centers.iter().zip(&radii).map(|(c, r)| c.norm() - r).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let mut t = 1.0;
    loop {
        for _ in 0..200 {
            let mut grad = DVector::zeros(dim);
            grad[m] = t;
            let mut hess = DMatrix::zeros(dim, dim);
            for i in 0..q {
                let g = slack(&z, i).expect("iterate stays interior");
                let mut dg = DVector::zeros(dim);
                let diff = z.rows(0, m) - &centers[i];
                dg.rows_mut(0, m).copy_from(&(&diff * -2.0));
                dg[m] = 2.0 * (radii[i] + z[m]);
                grad -= &dg / g;
                hess += &dg * dg.transpose() / (g * g);
                for k in 0..m {
                    hess[(k, k)] += 2.0 / g;
                }
                hess[(m, m)] -= 2.0 / g;
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => -hess.clone().lu().solve(&grad).unwrap_or_else(|| grad.clone()),
            };
            let decrement = -grad.dot(&step);
            if decrement < 1e-14 {
                break;
            }
            let f0 = barrier(&z, t).expect("interior");
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &z + &step * alpha;
                if let Some(f1) = barrier(&trial, t) {
                    if f1 <= f0 - 0.25 * alpha * decrement {
                        z = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if 2.0 * q as f64 / t * spread < 1e-11 || t > 1e16 {
            break;
        }
        t *= 10.0;
    }
    let u = mean + z.rows(0, m) * spread;
    let margin = minimax_value(balls, &u);
    (u, margin)
}

/// Largest of the stationarity (relative to `1 + ‖lin‖`), primal, dual and
/// complementary-slackness residuals.
pub fn kkt_residual(problem: &QcqpProblem, u: &DVector<f64>, multipliers: &[f64]) -> Result<f64, QcqpError> {
    let m = problem.r.nrows();
    if u.len() != m || problem.lin.len() != m || multipliers.len() != problem.balls.len() {
        return Err(QcqpError::DimensionMismatch(format!(
            "u has {}, lin has {}, {} multipliers for {} balls",
            u.len(),
            problem.lin.len(),
            multipliers.len(),
            problem.balls.len()
        )));
    }
    let mut station = &problem.r * u * 2.0 + &problem.lin;
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for (b, &mu) in problem.balls.iter().zip(multipliers) {
        if b.center.len() != m {
            return Err(QcqpError::DimensionMismatch("ball center dimension".into()));
        }
        let diff = u - &b.center;
        station += &diff * (2.0 * mu);
        primal = primal.max(diff.norm() - b.radius);
        dual = dual.max(-mu);
        comp = comp.max((mu * (diff.norm_squared() - b.radius * b.radius)).abs());
    }
    let stationarity = station.norm() / (1.0 + problem.lin.norm());
    Ok(stationarity.max(primal).max(dual).max(comp))
}

fn validate(problem: &QcqpProblem) -> Result<(), QcqpError> {
    let m = problem.r.nrows();
    if !problem.r.is_square() || problem.lin.len() != m {
        return Err(QcqpError::DimensionMismatch("R must be m×m and lin an m-vector".into()));
    }
    if problem.balls.is_empty() {
        return Err(QcqpError::InvalidProblem("no ball constraints".into()));
    }
    if problem.balls.iter().any(|b| b.center.len() != m || !(b.radius >= 0.0)) {
        return Err(QcqpError::DimensionMismatch("ball centers must be m-vectors with radius ≥ 0".into()));
    }
    let lmin = min_eigenvalue(&problem.r).map_err(|e| QcqpError::InvalidProblem(e.to_string()))?;
    if lmin <= 0.0 {
        return Err(QcqpError::InvalidProblem("R is not positive definite".into()));
    }
    Ok(())
}

pub fn solve(problem: &QcqpProblem) -> Result<QcqpSolution, QcqpError> {
    solve_warm(problem, None)
}

/// Like [`solve`], starting the dual iteration from `warm` multipliers.
pub fn solve_warm(problem: &QcqpProblem, warm: Option<&[f64]>) -> Result<QcqpSolution, QcqpError> {
    validate(problem)?;
    let q = problem.balls.len();
    let u_free = problem.unconstrained_minimizer();
    if problem.balls.iter().all(|b| (&u_free - &b.center).norm() <= b.radius) {
        let mu = vec![0.0; q];
        return Ok(finish(problem, u_free, mu, 0, SolveMethod::Interior));
    }

    let mu0: Vec<f64> = match warm {
        Some(w) if w.len() == q => w.iter().map(|&v| v.max(0.0)).collect(),
        _ => vec![0.0; q],
    };
    let dual = DualNewton::new(problem);
    if let Some((u, mu, iters)) = dual.run(mu0) {
        let sol = finish(problem, u, mu, iters, SolveMethod::DualNewton);
        if sol.kkt_residual <= 1e-9 && sol.feasibility_violation <= FEASIBILITY_BAND {
            return Ok(sol);
        }
    }

    let witness = match check_feasible(&problem.balls) {
        Feasibility::Empty { margin } => return Err(QcqpError::Infeasible { margin }),
        Feasibility::NonEmpty { witness, .. } => witness,
    };
    let (u, iters, converged) = projected_gradient(problem, witness);
    let mu = estimate_multipliers(problem, &u);
    let sol = finish(problem, u, mu, iters, SolveMethod::ProjectedGradient);
    if converged && sol.feasibility_violation <= FEASIBILITY_BAND {
        Ok(sol)
    } else {
        Err(QcqpError::MaxIterations { best: Box::new(sol) })
    }
}

fn finish(problem: &QcqpProblem, u: DVector<f64>, mu: Vec<f64>, iterations: usize, method: SolveMethod) -> QcqpSolution {
    let kkt = kkt_residual(problem, &u, &mu).expect("dimensions validated");
    let feasibility_violation = problem.max_violation(&u);
    QcqpSolution { u, multipliers: mu, kkt_residual: kkt, feasibility_violation, iterations, method }
}

struct DualNewton<'a> {
    problem: &'a QcqpProblem,
    r2: DMatrix<f64>,
}

struct DualPoint {
    u: DVector<f64>,
    value: f64,
    grad: DVector<f64>,
    h_inv: DMatrix<f64>,
}

impl<'a> DualNewton<'a> {
    fn new(problem: &'a QcqpProblem) -> Self {
        Self { problem, r2: &problem.r * 2.0 }
    }

    fn eval(&self, mu: &[f64]) -> Option<DualPoint> {
        let m = self.problem.lin.len();
        let total: f64 = mu.iter().sum();
        let mut h = self.r2.clone();
        for k in 0..m {
            h[(k, k)] += 2.0 * total;
        }
        let h_inv = h.cholesky()?.inverse();
        let mut rhs = -&self.problem.lin;
        for (b, &w) in self.problem.balls.iter().zip(mu) {
            rhs += &b.center * (2.0 * w);
        }
        let u = &h_inv * rhs;
        let grad = DVector::from_iterator(
            mu.len(),
            self.problem.balls.iter().map(|b| (&u - &b.center).norm_squared() - b.radius * b.radius),
        );
        let value = self.problem.objective(&u) + grad.iter().zip(mu).map(|(g, w)| g * w).sum::<f64>();
        Some(DualPoint { u, value, grad, h_inv })
    }

    /// Projected Newton ascent on the concave dual. Returns `None` when it stalls.
    fn run(&self, mut mu: Vec<f64>) -> Option<(DVector<f64>, Vec<f64>, usize)> {
        let q = mu.len();
        let scale = 1.0
            + self
                .problem
                .balls
                .iter()
                .map(|b| b.radius * b.radius + b.center.norm_squared())
                .fold(0.0, f64::max);
        let tol = 1e-13 * scale;
        let mut point = self.eval(&mu)?;
        let mut last_value = point.value;
        let mut stalled = 0;
        for iter in 0..MAX_DUAL_ITERS {
            let optimal = (0..q).all(|i| {
                if mu[i] > 0.0 {
                    point.grad[i].abs() <= tol
                } else {
                    point.grad[i] <= tol
                }
            });
            if optimal {
                return Some((point.u, mu, iter));
            }

            // Indices pinned at zero with the gradient pointing out of the feasible orthant.
            let eps = 1e-12_f64.min(
                (0..q)
                    .map(|i| (mu[i] - (mu[i] + point.grad[i]).max(0.0)).abs())
                    .fold(0.0, f64::max),
            );
            let pinned: Vec<bool> = (0..q).map(|i| mu[i] <= eps && point.grad[i] <= 0.0).collect();
            let free: Vec<usize> = (0..q).filter(|&i| !pinned[i]).collect();

            let mut dir = DVector::zeros(q);
            if !free.is_empty() {
                let nf = free.len();
                let mut neg_hess = DMatrix::zeros(nf, nf);
                for (a, &i) in free.iter().enumerate() {
                    let di = &point.u - &self.problem.balls[i].center;
                    let hdi = &point.h_inv * &di;
                    for (bidx, &j) in free.iter().enumerate() {
                        let dj = &point.u - &self.problem.balls[j].center;
                        neg_hess[(a, bidx)] = 4.0 * dj.dot(&hdi);
                    }
                }
                let g_free = DVector::from_iterator(nf, free.iter().map(|&i| point.grad[i]));
                let mut reg = 1e-14 * (1.0 + neg_hess.trace());
                let step = loop {
                    let mut h = neg_hess.clone();
                    for k in 0..nf {
                        h[(k, k)] += reg;
                    }
                    if let Some(ch) = h.cholesky() {
                        break ch.solve(&g_free);
                    }
                    reg *= 100.0;
                    if reg > 1e10 {
                        break g_free.clone();
                    }
                };
                for (a, &i) in free.iter().enumerate() {
                    dir[i] = step[a];
                }
            }
            for i in 0..q {
                if pinned[i] {
                    dir[i] = -mu[i];
                }
            }

            let mut alpha = 1.0;
            let mut next = None;
            for _ in 0..60 {
                let trial: Vec<f64> = (0..q).map(|i| (mu[i] + alpha * dir[i]).max(0.0)).collect();
                if let Some(p) = self.eval(&trial) {
                    let ascent: f64 = (0..q).map(|i| point.grad[i] * (trial[i] - mu[i])).sum();
                    if p.value >= point.value + 1e-4 * ascent - 1e-15 * point.value.abs() {
                        next = Some((trial, p));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let (trial, p) = next?;
            mu = trial;
            point = p;
            if (point.value - last_value).abs() <= 1e-12 * (1.0 + point.value.abs()) {
                stalled += 1;
                if stalled >= STALL_WINDOW {
                    return None;
                }
            } else {
                stalled = 0;
            }
            last_value = point.value;
        }
        None
    }
}

/// Dykstra's alternating projections onto the intersection of the balls.
pub fn project_onto_intersection(balls: &[BallConstraint], point: &DVector<f64>) -> DVector<f64> {
    let q = balls.len();
    let mut x = point.clone();
    let mut corrections = vec![DVector::zeros(point.len()); q];
    for _ in 0..10_000 {
        let prev = x.clone();
        for (b, p) in balls.iter().zip(corrections.iter_mut()) {
            let y = &x + &*p;
            let proj = project_onto_ball(b, &y);
            *p = &y - &proj;
            x = proj;
        }
        if (&x - &prev).norm() <= 1e-15 * (1.0 + x.norm()) {
            break;
        }
    }
    x
}

fn project_onto_ball(b: &BallConstraint, y: &DVector<f64>) -> DVector<f64> {
    let d = y - &b.center;
    let n = d.norm();
    if n <= b.radius {
        y.clone()
    } else {
        &b.center + d * (b.radius / n)
    }
}

fn projected_gradient(problem: &QcqpProblem, start: DVector<f64>) -> (DVector<f64>, usize, bool) {
    let lmax = max_eigenvalue(&problem.r).expect("finite R");
    let step = 1.0 / (2.0 * lmax);
    let mut u = start;
    for iter in 0..MAX_FALLBACK_ITERS {
        let grad = &problem.r * &u * 2.0 + &problem.lin;
        let next = project_onto_intersection(&problem.balls, &(&u - grad * step));
        let change = (&next - &u).norm();
        u = next;
        if change <= 1e-14 * (1.0 + u.norm()) {
            return (u, iter + 1, true);
        }
    }
    (u, MAX_FALLBACK_ITERS, false)
}

/// Non-negative least-squares fit of the stationarity equation over active balls.
fn estimate_multipliers(problem: &QcqpProblem, u: &DVector<f64>) -> Vec<f64> {
    let q = problem.balls.len();
    let m = u.len();
    let active: Vec<usize> = (0..q)
        .filter(|&i| problem.balls[i].excess(u) >= -1e-9 * (1.0 + problem.balls[i].radius))
        .collect();
    let mut mu = vec![0.0; q];
    if active.is_empty() {
        return mu;
    }
    let target = -(&problem.r * u * 2.0 + &problem.lin);
    let mut cols: Vec<usize> = active;
    // Drop columns that come out negative until the fit is non-negative.
    loop {
        let mut a = DMatrix::zeros(m, cols.len());
        for (k, &i) in cols.iter().enumerate() {
            a.set_column(k, &((u - &problem.balls[i].center) * 2.0));
        }
        let ata = a.transpose() * &a;
        let atb = a.transpose() * &target;
        let sol = ata.clone().lu().solve(&atb).unwrap_or_else(|| DVector::zeros(cols.len()));
        if let Some(worst) = (0..cols.len()).filter(|&k| sol[k] < 0.0).min_by(|&x, &y| sol[x].total_cmp(&sol[y])) {
            cols.remove(worst);
            if cols.is_empty() {
                return mu;
            }
            continue;
        }
        for (k, &i) in cols.iter().enumerate() {
            mu[i] = sol[k];
        }
        return mu;
    }
}

/// Random instances and an independent reference solver, shared by the tests and
/// the `qcqp bench` command.
pub mod bench {
    use super::*;
    use rand::Rng;

    /// A random instance whose ball intersection has non-empty interior.
    pub fn random_instance<G: Rng>(rng: &mut G, m: usize, q: usize) -> QcqpProblem {
        let anchor = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let mut balls = Vec::with_capacity(q);
        for i in 0..q {
            let center = &anchor + DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let reach = (&center - &anchor).norm();
            let radius = reach + rng.random_range(0.05..1.0);
            balls.push(BallConstraint::new(center, radius, i));
        }
        let g = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let r = &g * g.transpose() + DMatrix::identity(m, m) * rng.random_range(0.01..1.0);
        let lin = DVector::from_fn(m, |_, _| rng.random_range(-10.0..10.0));
        QcqpProblem { r, lin, balls }
    }

    /// Primal log-barrier interior point method started from `start`, which must be
    /// strictly inside every ball. Returns the minimizer to roughly `1e-10` in objective.
    pub fn barrier_reference(problem: &QcqpProblem, start: &DVector<f64>) -> DVector<f64> {
        let m = start.len();
        let q = problem.balls.len();
        let slack = |u: &DVector<f64>| -> Option<Vec<f64>> {
            problem
                .balls
                .iter()
                .map(|b| {
                    let g = b.radius * b.radius - (u - &b.center).norm_squared();
                    (g > 0.0).then_some(g)
                })
                .collect()
        };
        let f = |u: &DVector<f64>, t: f64| -> Option<f64> {
            let s = slack(u)?;
            Some(t * problem.objective(u) - s.iter().map(|g| g.ln()).sum::<f64>())
        };
        let mut u = start.clone();
        let mut t = 1.0;
        while (q as f64) / t > 1e-12 {
            for _ in 0..100 {
                let s = slack(&u).expect("interior");
                let mut grad = (&problem.r * &u * 2.0 + &problem.lin) * t;
                let mut hess = &problem.r * (2.0 * t);
                for (b, g) in problem.balls.iter().zip(&s) {
                    let d = &u - &b.center;
                    grad += &d * (2.0 / g);
                    hess += &d * d.transpose() * (4.0 / (g * g));
                    for k in 0..m {
                        hess[(k, k)] += 2.0 / g;
                    }
                }
                let step = -hess.cholesky().expect("barrier Hessian is PD").solve(&grad);
                let dec = -grad.dot(&step);
                if dec < 1e-16 {
                    break;
                }
                let f0 = f(&u, t).expect("interior");
                let mut alpha = 1.0;
                while alpha > 1e-20 {
                    let trial = &u + &step * alpha;
                    if let Some(f1) = f(&trial, t) {
                        if f1 <= f0 - 0.25 * alpha * dec {
                            u = trial;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if alpha <= 1e-20 {
                    break;
                }
            }
            t *= 10.0;
        }
        u
    }

    /// Best objective among `samples` uniform draws from the smallest ball that land
    /// inside the intersection, or `None` if none land.
    pub fn sampling_reference<G: Rng>(rng: &mut G, problem: &QcqpProblem, samples: usize) -> Option<(DVector<f64>, f64)> {
        let host = problem
            .balls
            .iter()
            .min_by(|a, b| a.radius.total_cmp(&b.radius))
            .expect("at least one ball");
        let m = host.center.len();
        let mut best: Option<(DVector<f64>, f64)> = None;
        let mut dir = DVector::zeros(m);
        for _ in 0..samples {
            // Uniform in the ball: Gaussian direction, radius scaled by U^(1/m).
            for k in 0..m {
                dir[k] = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let norm = dir.norm();
            if norm == 0.0 {
                continue;
            }
            let rad = host.radius * rng.random::<f64>().powf(1.0 / m as f64);
            let u = &host.center + &dir * (rad / norm);
            if problem.balls.iter().all(|b| (&u - &b.center).norm() <= b.radius) {
                let v = problem.objective(&u);
                if best.as_ref().map_or(true, |(_, bv)| v < *bv) {
                    best = Some((u, v));
                }
            }
        }
        best
    }

    /// Worst-case numbers over a batch of random instances.
    #[derive(Clone, Debug, Default, serde::Serialize)]
    pub struct BenchReport {
        pub instances: usize,
        /// Largest `|f(u) - f_ref| / max(1, |f_ref|)` against the barrier reference.
        pub max_relative_gap: f64,
        /// Largest amount by which the solver's objective exceeds the best sampled point.
        pub max_sampling_excess: f64,
        pub max_feasibility_violation: f64,
        pub max_kkt_residual: f64,
        pub failures: usize,
    }

    /// Solves `instances` random problems with `m, q ∈ 1..=max_dim` and compares each
    /// against the barrier reference and a sampling oracle.
    pub fn run_suite(instances: usize, max_dim: usize, samples: usize, seed: u64) -> BenchReport {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut report = BenchReport { instances, ..Default::default() };
        for _ in 0..instances {
            let m = rng.random_range(1..=max_dim);
            let q = rng.random_range(1..=max_dim);
            let problem = random_instance(&mut rng, m, q);
            let Ok(sol) = solve(&problem) else {
                report.failures += 1;
                continue;
            };
            let start = match check_feasible(&problem.balls) {
                Feasibility::NonEmpty { witness, margin } if margin < 0.0 => witness,
                _ => {
                    report.failures += 1;
                    continue;
                }
            };
            let reference = problem.objective(&barrier_reference(&problem, &start));
            let value = problem.objective(&sol.u);
            report.max_relative_gap = report.max_relative_gap.max((value - reference).abs() / reference.abs().max(1.0));
            if let Some((_, sampled)) = sampling_reference(&mut rng, &problem, samples) {
                report.max_sampling_excess = report.max_sampling_excess.max((value - sampled) / sampled.abs().max(1.0));
            }
            report.max_feasibility_violation = report.max_feasibility_violation.max(sol.feasibility_violation);
            report.max_kkt_residual = report.max_kkt_residual.max(sol.kkt_residual);
        }
        report
    }
}
