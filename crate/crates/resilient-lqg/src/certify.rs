//! Offline certification: barrier certificates for each attack pattern, the radius
//! search built on them, the elimination risk bounds, and Monte Carlo cross-checks.
//!
//! Certificates live on the extended system `x̄ = (x, x̂_α)` with the filter and
//! feedback gains frozen at their steady values. They are written in deviation
//! coordinates `δ = x̄ - x̄_nom(t)`, where `x̄_nom` is the disturbance-free, noise-free
//! trajectory, so the time-varying feedforward drops out of the generator. The
//! template is `D(δ, t) = δᵀMδ + bᵀδ + c0 + c1·t` with constant multipliers; every
//! constraint is then a quadratic polynomial whose Gram matrix in the basis `[1, z]`
//! is unique and affine in the unknowns.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gains::{kbar, lambda_star, steady_state_filter, GainSchedule, GainsError};
use crate::harness::{parallel_runs, run_rng, simulate_run, Adversary, Controller, Estimate95, HarnessError, SimContext};
use crate::model::{ModelError, Region, ValidatedScenario};
use crate::numerics::{gram_to_poly, min_eigenvalue, poly_grad, psd_sqrt, rk4_path, AffineSym, LinPoly, Poly};
use crate::sdp::{sdp_feasibility, SdpError, SdpOptions, SdpVerdict};

#[derive(Debug, Error, Clone)]
pub enum CertifyError {
    #[error("covariance factorization failed: {0}")]
    FactorizationFailure(String),
    #[error("SDP solver reached no verdict for the {kind:?} certificate at radius {gamma}")]
    SolverNumericalFailure { kind: BarrierKind, gamma: f64 },
    #[error("no certificate exists for pattern {pattern} even at radius zero")]
    NoCertificateAtZero { pattern: usize },
    #[error("division by zero: minimum radius is zero")]
    DivisionByZero,
    #[error("unsupported region: {0}")]
    UnsupportedRegion(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Gains(#[from] GainsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Plant and one pattern's estimator, closed under that pattern's nominal input.
#[derive(Clone, Debug)]
pub struct ExtendedSystem {
    pub pattern_index: usize,
    pub n: usize,
    pub m: usize,
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    /// Diffusion `[[N_w, 0], [0, Θ N_v]]`.
    pub lambda: DMatrix<f64>,
    pub noise_w: DMatrix<f64>,
    pub noise_v: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub dt: f64,
    pub steps: usize,
    /// Drift offset `p(t)` on the step grid.
    pub offset: Vec<DVector<f64>>,
    pub x0: DVector<f64>,
    /// Noise-free, disturbance-free trajectory on the step grid.
    pub nominal: Vec<DVector<f64>>,
}

impl ExtendedSystem {
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn diffusion(&self) -> DMatrix<f64> {
        &self.lambda * self.lambda.transpose()
    }
}

pub fn build_extended_system(scenario: &ValidatedScenario, pattern: usize, gains: &GainSchedule) -> Result<ExtendedSystem, CertifyError> {
    if pattern >= scenario.num_patterns() {
        return Err(CertifyError::InvalidParameter(format!("pattern {pattern} out of range")));
    }
    let n = scenario.n;
    let m = scenario.m;
    let sensors = &scenario.pattern_sets[pattern];
    let (_, theta) = steady_state_filter(&scenario.a, &scenario.sigma_w, sensors, scenario.dt)?;
    let gain = gains.tracking.gain(0).clone();
    let half_bk = &scenario.b * &gain * 0.5;
    let tc = &theta * &sensors.c;
    let mut a_bar = DMatrix::zeros(2 * n, 2 * n);
    a_bar.view_mut((0, 0), (n, n)).copy_from(&scenario.a);
    a_bar.view_mut((0, n), (n, n)).copy_from(&half_bk);
    a_bar.view_mut((n, 0), (n, n)).copy_from(&tc);
    a_bar.view_mut((n, n), (n, n)).copy_from(&(&scenario.a - &tc + &half_bk));
    let mut b_bar = DMatrix::zeros(2 * n, m);
    b_bar.view_mut((0, 0), (n, m)).copy_from(&scenario.b);
    b_bar.view_mut((n, 0), (n, m)).copy_from(&scenario.b);

    let factor = |s: &DMatrix<f64>, what: &str| psd_sqrt(s).map_err(|e| CertifyError::FactorizationFailure(format!("{what}: {e}")));
    let noise_w = factor(&scenario.sigma_w, "process noise")?;
    let noise_v = factor(&sensors.sigma_v, "measurement noise")?;
    let pa = sensors.len();
    let mut lambda = DMatrix::zeros(2 * n, n + pa);
    lambda.view_mut((0, 0), (n, n)).copy_from(&noise_w);
    lambda.view_mut((n, n), (n, pa)).copy_from(&(&theta * &noise_v));

    let feed = |s: &DVector<f64>| {
        let half = &scenario.b * (gains.tracking.r_inv_bt() * s) * -0.5;
        let mut p = DVector::zeros(2 * n);
        p.rows_mut(0, n).copy_from(&half);
        p.rows_mut(n, n).copy_from(&half);
        p
    };
    let offset_fine: Vec<DVector<f64>> = gains.tracking.s_fine().iter().map(feed).collect();
    let offset: Vec<DVector<f64>> = (0..=scenario.steps).map(|k| offset_fine[2 * k].clone()).collect();

    let mut x0 = DVector::zeros(2 * n);
    x0.rows_mut(0, n).copy_from(&scenario.x0);
    x0.rows_mut(n, n).copy_from(&scenario.x0);
    let h = 0.5 * scenario.dt;
    let last = offset_fine.len() - 1;
    let drift = |t: f64, y: &DVector<f64>| &a_bar * y + &offset_fine[((t / h).round() as usize).min(last)];
    let nominal = rk4_path(drift, 0.0, x0.clone(), scenario.dt, scenario.steps, |_, _: &mut DVector<f64>| Ok::<(), CertifyError>(()))?;

    Ok(ExtendedSystem {
        pattern_index: pattern,
        n,
        m,
        a_bar,
        b_bar,
        lambda,
        noise_w,
        noise_v,
        theta,
        gain,
        dt: scenario.dt,
        steps: scenario.steps,
        offset,
        x0,
        nominal,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    Safety,
    Reachability,
}

/// Which SOS constraint a Gram matrix witnesses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum GramLabel {
    /// `D(·, t) - 1 ∓ λ g` at time `t`.
    Region { t: f64 },
    /// `D(·, t)` at time `t`.
    Nonnegative { t: f64 },
    /// Negated generator with the disturbance multiplier, in `(δ, û)`.
    Generator,
}

/// Region term of the certificate, in deviation coordinates.
#[derive(Clone, Debug)]
pub enum RegionTerm {
    /// Unsafe states need `‖δ_x‖ ≥ clearance`.
    Clearance(f64),
    /// Goal polynomial `g(x_nom(T) + δ_x)` over the `2n` deviation variables.
    Goal(Poly<f64>),
}

#[derive(Clone, Debug)]
pub struct BarrierCertificate {
    pub kind: BarrierKind,
    pub gamma: f64,
    pub eps: f64,
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub offset: f64,
    pub slope: f64,
    pub region_multiplier: f64,
    pub disturbance_multiplier: f64,
    pub region: RegionTerm,
    pub horizon: f64,
    pub grams: Vec<(GramLabel, DMatrix<f64>)>,
}

impl BarrierCertificate {
    pub fn value(&self, delta: &DVector<f64>, t: f64) -> f64 {
        delta.dot(&(&self.quad * delta)) + self.lin.dot(delta) + self.offset + self.slope * t
    }

    /// `D` at an extended state on the step grid.
    pub fn value_at(&self, ext: &ExtendedSystem, xbar: &DVector<f64>, k: usize) -> f64 {
        self.value(&(xbar - &ext.nominal[k]), k as f64 * ext.dt)
    }
}

/// Decision-vector layout shared by both certificate kinds.
struct Template {
    dim: usize,
    m: usize,
}

impl Template {
    fn nquad(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    fn ndec(&self) -> usize {
        self.nquad() + self.dim + 4
    }

    fn quad(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.dim - i * (i + 1) / 2 + j
    }

    fn lin(&self, i: usize) -> usize {
        self.nquad() + i
    }

    fn c0(&self) -> usize {
        self.nquad() + self.dim
    }

    fn c1(&self) -> usize {
        self.c0() + 1
    }

    fn region_mult(&self) -> usize {
        self.c0() + 2
    }

    fn dist_mult(&self) -> usize {
        self.c0() + 3
    }

    fn constant(&self, nvars: usize, k: usize, coef: f64) -> LinPoly {
        LinPoly::decision(nvars, self.ndec(), k, vec![0; nvars]).scale(coef)
    }

    fn times_poly(&self, k: usize, p: &Poly<f64>) -> LinPoly {
        LinPoly::decision(p.nvars(), self.ndec(), k, vec![0; p.nvars()]).mul_poly(p).expect("matching variables")
    }

    /// `δᵀMδ + bᵀδ` over `nvars ≥ dim` variables (the first `dim` are `δ`).
    fn quadratic_part(&self, nvars: usize) -> LinPoly {
        let nd = self.ndec();
        let mut v = LinPoly::zero(nvars, nd);
        for i in 0..self.dim {
            for j in i..self.dim {
                let mut e = vec![0; nvars];
                e[i] += 1;
                e[j] += 1;
                let term = LinPoly::decision(nvars, nd, self.quad(i, j), e);
                v = v.add(&if i == j { term } else { term.scale(2.0) }).expect("same shape");
            }
            let mut e = vec![0; nvars];
            e[i] = 1;
            v = v.add(&LinPoly::decision(nvars, nd, self.lin(i), e)).expect("same shape");
        }
        v
    }

    fn barrier_at(&self, t: f64) -> LinPoly {
        self.quadratic_part(self.dim)
            .add(&self.constant(self.dim, self.c0(), 1.0))
            .and_then(|p| p.add(&self.constant(self.dim, self.c1(), t)))
            .expect("same shape")
    }

    /// `-(∇V·(Āδ + B̄û) + c1 + tr(ΛᵀMΛ)) - λ_D (γ² - ‖û‖²)` over `(δ, û)`.
    fn generator(&self, ext: &ExtendedSystem, gamma: f64) -> LinPoly {
        let nv = self.dim + self.m;
        let v = self.quadratic_part(nv);
        let grad = v.grad();
        let mut lie = LinPoly::zero(nv, self.ndec());
        for i in 0..self.dim {
            let mut f = Poly::zero(nv);
            for j in 0..self.dim {
                if ext.a_bar[(i, j)] != 0.0 {
                    f = &f + &Poly::var(nv, j).scale(ext.a_bar[(i, j)]);
                }
            }
            for j in 0..self.m {
                if ext.b_bar[(i, j)] != 0.0 {
                    f = &f + &Poly::var(nv, self.dim + j).scale(ext.b_bar[(i, j)]);
                }
            }
            lie = lie.add(&grad[i].mul_poly(&f).expect("same variables")).expect("same shape");
        }
        let g = ext.diffusion();
        let mut trace = LinPoly::zero(nv, self.ndec());
        for i in 0..self.dim {
            for j in i..self.dim {
                let w = if i == j { g[(i, i)] } else { 2.0 * g[(i, j)] };
                if w != 0.0 {
                    trace = trace.add(&self.constant(nv, self.quad(i, j), w)).expect("same shape");
                }
            }
        }
        let mut ball = Poly::constant(nv, gamma * gamma);
        for j in 0..self.m {
            ball = &ball - &Poly::var(nv, self.dim + j).pow(2);
        }
        lie.add(&self.constant(nv, self.c1(), 1.0))
            .and_then(|p| p.add(&trace))
            .and_then(|p| p.add(&self.times_poly(self.dist_mult(), &ball)))
            .expect("same shape")
            .scale(-1.0)
    }

    fn scalar_block(&self, constant: f64, k: usize, coef: f64) -> AffineSym {
        let mut coefficients = vec![DMatrix::zeros(1, 1); self.ndec()];
        coefficients[k][(0, 0)] = coef;
        AffineSym { constant: DMatrix::from_element(1, 1, constant), coefficients }
    }

    fn extract(&self, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, f64, f64, f64, f64) {
        let quad = DMatrix::from_fn(self.dim, self.dim, |i, j| y[self.quad(i, j)]);
        let lin = DVector::from_fn(self.dim, |i, _| y[self.lin(i)]);
        (quad, lin, y[self.c0()], y[self.c1()], y[self.region_mult()], y[self.dist_mult()])
    }
}

fn deviation_norm_sq(dim: usize, n: usize) -> Poly<f64> {
    (0..n).fold(Poly::zero(dim), |acc, i| &acc + &Poly::var(dim, i).pow(2))
}

/// Smallest distance from the nominal plant trajectory to the unsafe set.
pub fn unsafe_clearance(ext: &ExtendedSystem, unsafe_region: &Region) -> Result<f64, CertifyError> {
    let ell = unsafe_region
        .ellipsoid(ext.n)?
        .ok_or_else(|| CertifyError::UnsupportedRegion("safety certificates need an ellipsoidal unsafe set".into()))?;
    let mut best = f64::INFINITY;
    for x in &ext.nominal {
        let d = ell
            .distance(&x.rows(0, ext.n).into_owned())
            .map_err(|e| CertifyError::UnsupportedRegion(e.to_string()))?;
        best = best.min(d);
    }
    Ok(best)
}

/// Goal polynomial shifted to the nominal terminal state, in the `2n` deviation variables.
pub fn shifted_goal(ext: &ExtendedSystem, goal: &Region) -> Result<Poly<f64>, CertifyError> {
    let g = goal.poly(ext.n)?;
    let xt = &ext.nominal[ext.steps];
    let dim = ext.dim();
    let subs: Vec<Poly<f64>> = (0..ext.n).map(|i| &Poly::var(dim, i) + &Poly::constant(dim, xt[i])).collect();
    g.substitute(&subs).map_err(|e| CertifyError::UnsupportedRegion(e.to_string()))
}

fn solve_template(
    kind: BarrierKind,
    ext: &ExtendedSystem,
    gamma: f64,
    eps: f64,
    region: RegionTerm,
    opts: &SdpOptions,
) -> Result<Option<BarrierCertificate>, CertifyError> {
    if !(gamma >= 0.0) || !(eps >= 0.0) {
        return Err(CertifyError::InvalidParameter(format!("gamma {gamma} and eps {eps} must be non-negative")));
    }
    let tpl = Template { dim: ext.dim(), m: ext.m };
    let horizon = ext.horizon();
    let mut labels = Vec::new();
    let mut pencils = Vec::new();

    let region_poly = |t: f64| -> LinPoly {
        let base = tpl.barrier_at(t).sub(&LinPoly::from_poly(&Poly::constant(tpl.dim, 1.0), tpl.ndec())).expect("same shape");
        let term = match &region {
            RegionTerm::Clearance(d) => {
                let g = &deviation_norm_sq(tpl.dim, ext.n) - &Poly::constant(tpl.dim, d * d);
                tpl.times_poly(tpl.region_mult(), &g).scale(-1.0)
            }
            RegionTerm::Goal(g) => tpl.times_poly(tpl.region_mult(), g),
        };
        base.add(&term).expect("same shape")
    };
    let region_times: Vec<f64> = match kind {
        BarrierKind::Safety => vec![0.0, horizon],
        BarrierKind::Reachability => vec![horizon],
    };
    for &t in &region_times {
        labels.push(GramLabel::Region { t });
        pencils.push(region_poly(t).gram_pencil().expect("quadratic"));
    }
    for t in [0.0, horizon] {
        labels.push(GramLabel::Nonnegative { t });
        pencils.push(tpl.barrier_at(t).gram_pencil().expect("quadratic"));
    }
    labels.push(GramLabel::Generator);
    pencils.push(tpl.generator(ext, gamma).gram_pencil().expect("quadratic"));
    let sos_count = pencils.len();
    pencils.push(tpl.scalar_block(eps, tpl.c0(), -1.0));
    pencils.push(tpl.scalar_block(0.0, tpl.region_mult(), 1.0));
    pencils.push(tpl.scalar_block(0.0, tpl.dist_mult(), 1.0));

    match sdp_feasibility(&pencils, None, opts)? {
        SdpVerdict::Feasible { point, .. } => {
            let (quad, lin, offset, slope, region_multiplier, disturbance_multiplier) = tpl.extract(&point);
            let grams = labels.into_iter().zip(pencils[..sos_count].iter().map(|p| p.eval(&point))).collect();
            Ok(Some(BarrierCertificate {
                kind,
                gamma,
                eps,
                quad,
                lin,
                offset,
                slope,
                region_multiplier,
                disturbance_multiplier,
                region,
                horizon,
                grams,
            }))
        }
        SdpVerdict::Infeasible { .. } => Ok(None),
        SdpVerdict::Numerical { .. } => Err(CertifyError::SolverNumericalFailure { kind, gamma }),
    }
}

/// Searches for a safety barrier with disturbance radius `gamma` and bound `eps`.
/// `Ok(None)` means the solver certified that no certificate of this form exists.
pub fn verify_safety(ext: &ExtendedSystem, gamma: f64, eps: f64, unsafe_region: &Region, opts: &SdpOptions) -> Result<Option<BarrierCertificate>, CertifyError> {
    let clearance = unsafe_clearance(ext, unsafe_region)?;
    solve_template(BarrierKind::Safety, ext, gamma, eps, RegionTerm::Clearance(clearance), opts)
}

/// Searches for a barrier certifying that the goal is reached at the horizon with
/// probability at least `1 - eps`.
pub fn verify_reachability(ext: &ExtendedSystem, gamma: f64, eps: f64, goal: &Region, opts: &SdpOptions) -> Result<Option<BarrierCertificate>, CertifyError> {
    let shifted = shifted_goal(ext, goal)?;
    solve_template(BarrierKind::Reachability, ext, gamma, eps, RegionTerm::Goal(shifted), opts)
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateCheck {
    /// Largest coefficient mismatch between each Gram expansion and its constraint.
    pub max_residual: f64,
    pub min_gram_eigenvalue: f64,
    pub initial_bound_holds: bool,
    pub multipliers_nonnegative: bool,
}

impl CertificateCheck {
    pub fn passes(&self, residual_tol: f64, eig_tol: f64) -> bool {
        self.max_residual <= residual_tol && self.min_gram_eigenvalue >= -eig_tol && self.initial_bound_holds && self.multipliers_nonnegative
    }
}

/// Rebuilds every constraint polynomial from the certificate's numbers with plain
/// polynomial arithmetic and compares it with the expansion of its Gram matrix.
pub fn recheck_certificate(cert: &BarrierCertificate, ext: &ExtendedSystem) -> CertificateCheck {
    let dim = ext.dim();
    let nv = dim + ext.m;
    let barrier = |t: f64| Poly::quadratic_form(&cert.quad, &cert.lin, cert.offset + cert.slope * t);
    let mut max_residual = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for (label, gram) in &cert.grams {
        min_eig = min_eig.min(min_eigenvalue(gram).unwrap_or(f64::NEG_INFINITY));
        let expected = match label {
            GramLabel::Nonnegative { t } => barrier(*t),
            GramLabel::Region { t } => {
                let shifted = &barrier(*t) - &Poly::constant(dim, 1.0);
                match &cert.region {
                    RegionTerm::Clearance(d) => {
                        let mut g = Poly::constant(dim, -d * d);
                        for i in 0..ext.n {
                            g = &g + &Poly::var(dim, i).pow(2);
                        }
                        &shifted - &g.scale(cert.region_multiplier)
                    }
                    RegionTerm::Goal(g) => &shifted + &g.scale(cert.region_multiplier),
                }
            }
            GramLabel::Generator => {
                let mut quad = DMatrix::zeros(nv, nv);
                quad.view_mut((0, 0), (dim, dim)).copy_from(&cert.quad);
                let mut lin = DVector::zeros(nv);
                lin.rows_mut(0, dim).copy_from(&cert.lin);
                let v = Poly::quadratic_form(&quad, &lin, 0.0);
                let drift: Vec<Poly<f64>> = (0..dim)
                    .map(|i| {
                        let mut f = Poly::zero(nv);
                        for j in 0..dim {
                            f.add_term(unit(nv, j), ext.a_bar[(i, j)]);
                        }
                        for j in 0..ext.m {
                            f.add_term(unit(nv, dim + j), ext.b_bar[(i, j)]);
                        }
                        f
                    })
                    .collect();
                let mut lie = Poly::zero(nv);
                for (gi, fi) in poly_grad(&v).iter().zip(&drift) {
                    lie = &lie + &(gi * fi);
                }
                let hess_term = (ext.lambda.transpose() * &cert.quad * &ext.lambda).trace();
                let mut u_sq = Poly::zero(nv);
                for j in 0..ext.m {
                    u_sq.add_term(double(nv, dim + j), 1.0);
                }
                let generator = &lie + &Poly::constant(nv, cert.slope + hess_term);
                let multiplier = &Poly::constant(nv, cert.gamma * cert.gamma) - &u_sq;
                -&(&generator + &multiplier.scale(cert.disturbance_multiplier))
            }
        };
        max_residual = max_residual.max(gram_to_poly(gram).max_coeff_diff(&expected));
    }
    CertificateCheck {
        max_residual,
        min_gram_eigenvalue: min_eig,
        initial_bound_holds: cert.offset <= cert.eps,
        multipliers_nonnegative: cert.region_multiplier >= 0.0 && cert.disturbance_multiplier >= 0.0,
    }
}

fn unit(n: usize, i: usize) -> Vec<u32> {
    let mut e = vec![0; n];
    e[i] = 1;
    e
}

fn double(n: usize, i: usize) -> Vec<u32> {
    let mut e = vec![0; n];
    e[i] = 2;
    e
}

/// Outcome of probing one radius.
pub enum Probe<C> {
    Accept(C),
    Reject,
    /// The verifier reached no verdict; treated as a rejection.
    Numerical,
}

#[derive(Clone, Debug)]
pub struct RadiusSearch<C> {
    pub gamma: f64,
    pub certificate: C,
    pub probes: usize,
    pub numerical_failures: usize,
}

/// Bisection on `[0, gamma0]` down to width `rho`. The returned radius always has an
/// accepted certificate; `None` means even radius zero was rejected.
pub fn bisect_radius<C>(gamma0: f64, rho: f64, mut probe: impl FnMut(f64) -> Probe<C>) -> Option<RadiusSearch<C>> {
    let (mut lo, mut hi) = (0.0, gamma0);
    let mut best: Option<C> = None;
    let mut probes = 0;
    let mut numerical_failures = 0;
    while (hi - lo).abs() > rho {
        let mid = 0.5 * (lo + hi);
        probes += 1;
        match probe(mid) {
            Probe::Accept(c) => {
                lo = mid;
                best = Some(c);
            }
            Probe::Reject => hi = mid,
            Probe::Numerical => {
                numerical_failures += 1;
                hi = mid;
            }
        }
    }
    if best.is_none() {
        probes += 1;
        match probe(lo) {
            Probe::Accept(c) => best = Some(c),
            Probe::Reject => {}
            Probe::Numerical => numerical_failures += 1,
        }
    }
    best.map(|certificate| RadiusSearch { gamma: lo, certificate, probes, numerical_failures })
}

#[derive(Clone, Debug)]
pub struct CertifyOptions {
    pub gamma0: f64,
    /// Bisection width for the safety radius; defaults to `1e-3·gamma0`.
    pub rho: Option<f64>,
    /// Bisection width for the reachability radius; defaults to `rho`.
    pub rho_reach: Option<f64>,
    pub sdp: SdpOptions,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { gamma0: 1.0, rho: None, rho_reach: None, sdp: SdpOptions::default() }
    }
}

impl CertifyOptions {
    fn widths(&self) -> (f64, f64) {
        let rho = self.rho.unwrap_or(1e-3 * self.gamma0);
        (rho, self.rho_reach.unwrap_or(rho))
    }
}

#[derive(Clone, Debug)]
pub struct BarrierSearch {
    pub pattern: usize,
    pub gamma_s: f64,
    pub gamma_r: f64,
    pub gamma: f64,
    pub safety: BarrierCertificate,
    pub reachability: BarrierCertificate,
    pub numerical_failures: usize,
}

fn probe_of(result: Result<Option<BarrierCertificate>, CertifyError>) -> Result<Probe<BarrierCertificate>, CertifyError> {
    match result {
        Ok(Some(c)) => Ok(Probe::Accept(c)),
        Ok(None) => Ok(Probe::Reject),
        Err(CertifyError::SolverNumericalFailure { .. }) => Ok(Probe::Numerical),
        Err(e) => Err(e),
    }
}

/// Largest certified radius for one pattern: separate bisections for safety and
/// reachability, then the smaller of the two.
pub fn barrier_binary_search(
    scenario: &ValidatedScenario,
    ext: &ExtendedSystem,
    eps_s: f64,
    eps_r: f64,
    opts: &CertifyOptions,
) -> Result<BarrierSearch, CertifyError> {
    let (rho, rho_r) = opts.widths();
    if !(opts.gamma0 > 0.0) || !(rho > 0.0) || !(rho_r > 0.0) {
        return Err(CertifyError::InvalidParameter("gamma0 and rho must be positive".into()));
    }
    let clearance = unsafe_clearance(ext, scenario.unsafe_region())?;
    let goal = shifted_goal(ext, scenario.goal_region())?;
    let mut failure = None;
    let mut run = |kind: BarrierKind, eps: f64, width: f64| {
        bisect_radius(opts.gamma0, width, |g| {
            let region = match kind {
                BarrierKind::Safety => RegionTerm::Clearance(clearance),
                BarrierKind::Reachability => RegionTerm::Goal(goal.clone()),
            };
            match probe_of(solve_template(kind, ext, g, eps, region, &opts.sdp)) {
                Ok(p) => p,
                Err(e) => {
                    failure.get_or_insert(e);
                    Probe::Reject
                }
            }
        })
    };
    let safety = run(BarrierKind::Safety, eps_s, rho);
    let reach = run(BarrierKind::Reachability, eps_r, rho_r);
    if let Some(e) = failure {
        return Err(e);
    }
    let pattern = ext.pattern_index;
    let (Some(s), Some(r)) = (safety, reach) else {
        return Err(CertifyError::NoCertificateAtZero { pattern });
    };
    Ok(BarrierSearch {
        pattern,
        gamma_s: s.gamma,
        gamma_r: r.gamma,
        gamma: s.gamma.min(r.gamma),
        numerical_failures: s.numerical_failures + r.numerical_failures,
        safety: s.certificate,
        reachability: r.certificate,
    })
}

/// Upper bound on the probability that noise alone separates a pattern estimate from
/// its pair estimate by more than `gamma_min` in input space.
pub fn eta_bound(lambda_i: f64, lambda_ij: f64, n: usize, kbar: f64, gamma_min: f64) -> Result<f64, CertifyError> {
    if gamma_min == 0.0 {
        return Err(CertifyError::DivisionByZero);
    }
    if lambda_i < 0.0 || lambda_ij < 0.0 || kbar < 0.0 || gamma_min < 0.0 {
        return Err(CertifyError::InvalidParameter("eta inputs must be non-negative".into()));
    }
    Ok(4.0 * (lambda_i + lambda_ij) * n as f64 * kbar * kbar / (gamma_min * gamma_min))
}

/// `(P2, P0)` lower bounds from the pattern's barrier probability and its row of `η`
/// (the diagonal entry excluded by the caller).
pub fn p0_lower_bound(p1: f64, eta_row: &[f64]) -> (f64, f64) {
    let p2 = (1.0 - eta_row.iter().sum::<f64>()).max(0.0);
    (p2, p1 * p2)
}

#[derive(Clone, Debug, Serialize)]
pub struct RiskBounds {
    /// `eta[i][j]`, zero on the diagonal.
    pub eta: Vec<Vec<f64>>,
    pub lambda_patterns: Vec<f64>,
    /// `lambda_pairs[i][j]` for the filter excluding both patterns (zero on the diagonal).
    pub lambda_pairs: Vec<Vec<f64>>,
    pub kbar: f64,
    pub p1: Vec<f64>,
    pub p2_lower: Vec<f64>,
    pub p0_lower: Vec<f64>,
}

/// Inputs of the `η` formula that do not depend on the radii.
#[derive(Clone, Debug, Serialize)]
pub struct CovarianceBounds {
    pub n: usize,
    pub kbar: f64,
    pub lambda_patterns: Vec<f64>,
    pub lambda_pairs: Vec<Vec<f64>>,
}

impl CovarianceBounds {
    pub fn from_gains(scenario: &ValidatedScenario, gains: &GainSchedule) -> Self {
        let q = scenario.num_patterns();
        let lambda_patterns = gains.patterns.iter().map(lambda_star).collect();
        let lambda_pairs = (0..q)
            .map(|i| (0..q).map(|j| if i == j { 0.0 } else { lambda_star(gains.pair(i, j)) }).collect())
            .collect();
        Self { n: scenario.n, kbar: kbar(&gains.tracking), lambda_patterns, lambda_pairs }
    }

    /// `η` matrix at `gamma_min`; infinite off the diagonal when `gamma_min` is zero.
    pub fn eta(&self, gamma_min: f64) -> Vec<Vec<f64>> {
        let q = self.lambda_patterns.len();
        (0..q)
            .map(|i| {
                (0..q)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            eta_bound(self.lambda_patterns[i], self.lambda_pairs[i][j], self.n, self.kbar, gamma_min).unwrap_or(f64::INFINITY)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn risk(&self, p1: &[f64], gamma_min: f64) -> RiskBounds {
        let eta = self.eta(gamma_min);
        let (p2, p0): (Vec<f64>, Vec<f64>) = (0..p1.len())
            .map(|i| {
                let row: Vec<f64> = (0..p1.len()).filter(|&j| j != i).map(|j| eta[i][j]).collect();
                p0_lower_bound(p1[i], &row)
            })
            .unzip();
        RiskBounds {
            eta,
            lambda_patterns: self.lambda_patterns.clone(),
            lambda_pairs: self.lambda_pairs.clone(),
            kbar: self.kbar,
            p1: p1.to_vec(),
            p2_lower: p2,
            p0_lower: p0,
        }
    }
}

/// Result of the iterative radius selection.
#[derive(Clone, Debug)]
pub struct Selection<T> {
    pub gammas: Vec<f64>,
    pub gamma_min: f64,
    pub p1_targets: Vec<f64>,
    pub bounds: RiskBounds,
    /// Whatever the radius oracle produced for each pattern's final radius.
    pub witnesses: Vec<Option<T>>,
    pub iterations: usize,
}

/// Iterative radius selection. `radius(i, p1)` returns pattern `i`'s radius when its
/// barrier must hold with probability `p1` (so `eps = 1 - p1`), or zero with no
/// witness when nothing can be certified.
pub fn select_radii<T, E, F>(
    q: usize,
    eps_s: f64,
    eps_r: f64,
    iter_times: usize,
    covariance: &CovarianceBounds,
    radius: F,
) -> Result<Option<Selection<T>>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize, f64) -> Result<(f64, Option<T>), E> + Sync,
{
    let target = (1.0 - eps_s).max(1.0 - eps_r);
    let mut p1 = vec![1.0; q];
    let decrement: Vec<f64> = p1.iter().map(|p| (p - target) / iter_times as f64).collect();
    let initial: Vec<(f64, Option<T>)> = (0..q).into_par_iter().map(|i| radius(i, p1[i])).collect::<Result<_, E>>()?;
    let (mut gammas, mut witnesses): (Vec<f64>, Vec<Option<T>>) = initial.into_iter().unzip();
    let argmin = |g: &[f64]| (0..g.len()).fold(0, |best, i| if g[i] < g[best] { i } else { best });

    for iteration in 1..=iter_times {
        let i_min = argmin(&gammas);
        p1[i_min] -= decrement[i_min];
        let (g, w) = radius(i_min, p1[i_min])?;
        gammas[i_min] = g;
        witnesses[i_min] = w;
        let gamma_min = gammas[argmin(&gammas)];
        let bounds = covariance.risk(&p1, gamma_min);
        if bounds.p0_lower.iter().all(|&p| p >= target) {
            return Ok(Some(Selection { gammas, gamma_min, p1_targets: p1, bounds, witnesses, iterations: iteration }));
        }
    }
    Ok(None)
}

/// Radii `γ_i` and `γ_min` for the scenario with their certificates and risk bounds.
pub fn gamma_selection(
    scenario: &ValidatedScenario,
    gains: &GainSchedule,
    eps_s: f64,
    eps_r: f64,
    iter_times: usize,
    opts: &CertifyOptions,
) -> Result<Option<Selection<BarrierSearch>>, CertifyError> {
    if iter_times == 0 {
        return Err(CertifyError::InvalidParameter("iter_times must be at least 1".into()));
    }
    let q = scenario.num_patterns();
    let exts: Vec<ExtendedSystem> = (0..q).map(|i| build_extended_system(scenario, i, gains)).collect::<Result<_, _>>()?;
    let covariance = CovarianceBounds::from_gains(scenario, gains);
    select_radii(q, eps_s, eps_r, iter_times, &covariance, |i, p1| {
        let eps = (1.0 - p1).max(0.0);
        match barrier_binary_search(scenario, &exts[i], eps, eps, opts) {
            Ok(s) => Ok((s.gamma, Some(s))),
            Err(CertifyError::NoCertificateAtZero { .. }) => Ok((0.0, None)),
            Err(e) => Err(e),
        }
    })
}

/// Disturbance policy for Monte Carlo checks of a certificate.
#[derive(Clone, Debug)]
pub enum Strategy {
    Zero,
    /// Constant `γ·d` for a unit direction `d`.
    Constant(DVector<f64>),
    /// Uniformly random boundary direction, redrawn every `hold` steps.
    PiecewiseRandom { hold: usize },
    /// `γ·Bᵀ∇g_U(x)` normalized: pushes the plant toward the unsafe set.
    TowardUnsafe,
    /// Pushes the plant out of the goal.
    AwayFromGoal,
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Strategy::Zero => "zero".into(),
            Strategy::Constant(d) => format!("constant{:?}", d.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>()),
            Strategy::PiecewiseRandom { hold } => format!("piecewise_random_{hold}"),
            Strategy::TowardUnsafe => "toward_unsafe".into(),
            Strategy::AwayFromGoal => "away_from_goal".into(),
        }
    }
}

/// Ten strategies with `‖û‖ = γ`: two region-seeking feedbacks, random directions
/// redrawn every step or every 500 steps, and six constant directions.
pub fn default_strategies(m: usize) -> Vec<Strategy> {
    let mut out = vec![Strategy::TowardUnsafe, Strategy::AwayFromGoal, Strategy::PiecewiseRandom { hold: 1 }, Strategy::PiecewiseRandom { hold: 500 }];
    if m == 2 {
        for k in 0..6 {
            let a = std::f64::consts::PI * k as f64 / 3.0;
            out.push(Strategy::Constant(DVector::from_vec(vec![a.cos(), a.sin()])));
        }
    } else {
        let mut rng = run_rng(0x5eed, 0);
        while out.len() < 10 {
            let k = out.len() - 4;
            let d = if k < 2 * m {
                let mut e = DVector::zeros(m);
                e[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
                e
            } else {
                let v = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                &v / v.norm()
            };
            out.push(Strategy::Constant(d));
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct StrategyOutcome {
    pub strategy: String,
    pub unsafe_count: usize,
    pub goal_miss_count: usize,
    pub unsafe_freq: Estimate95,
    pub goal_miss_freq: Estimate95,
}

#[derive(Clone, Debug, Serialize)]
pub struct McVerification {
    pub pattern: usize,
    pub gamma: f64,
    pub runs: usize,
    pub outcomes: Vec<StrategyOutcome>,
}

/// Allocation-free Euler-Maruyama stepper for the extended system.
struct ExtStepper<'a> {
    ext: &'a ExtendedSystem,
    a: Vec<f64>,
    b: Vec<f64>,
    l: Vec<f64>,
    noise_dim: usize,
}

impl<'a> ExtStepper<'a> {
    fn new(ext: &'a ExtendedSystem) -> Self {
        let row_major = |m: &DMatrix<f64>| (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect::<Vec<_>>();
        Self { ext, a: row_major(&ext.a_bar), b: row_major(&ext.b_bar), l: row_major(&ext.lambda), noise_dim: ext.lambda.ncols() }
    }

    fn step(&self, x: &mut [f64], next: &mut [f64], u: &[f64], xi: &[f64], k: usize) {
        let d = x.len();
        let (dt, sq) = (self.ext.dt, self.ext.dt.sqrt());
        let p = &self.ext.offset[k];
        for i in 0..d {
            let mut drift = p[i];
            for j in 0..d {
                drift += self.a[i * d + j] * x[j];
            }
            for j in 0..u.len() {
                drift += self.b[i * u.len() + j] * u[j];
            }
            let mut diff = 0.0;
            for j in 0..self.noise_dim {
                diff += self.l[i * self.noise_dim + j] * xi[j];
            }
            next[i] = x[i] + drift * dt + diff * sq;
        }
        x.copy_from_slice(next);
    }
}

/// Simulates the frozen extended system under each strategy with `‖û‖ = γ` and reports
/// how often the plant enters the unsafe set or misses the goal.
pub fn mc_verify(
    scenario: &ValidatedScenario,
    ext: &ExtendedSystem,
    gamma: f64,
    strategies: &[Strategy],
    runs: usize,
    seed: u64,
    workers: usize,
) -> Result<McVerification, CertifyError> {
    if runs == 0 {
        return Err(CertifyError::InvalidParameter("runs must be at least 1".into()));
    }
    let n = ext.n;
    let m = ext.m;
    let stepper = ExtStepper::new(ext);
    let unsafe_grad = poly_grad(&scenario.unsafe_poly);
    let goal_grad = poly_grad(&scenario.goal_poly);
    let bt = scenario.b.transpose();
    let mut outcomes = Vec::with_capacity(strategies.len());
    for (si, strategy) in strategies.iter().enumerate() {
        let results = parallel_runs(runs, workers, |run| {
            let mut rng = run_rng(seed, (si * runs) as u64 + run);
            let mut x: Vec<f64> = ext.x0.iter().copied().collect();
            let mut next = vec![0.0; x.len()];
            let mut xi = vec![0.0; stepper.noise_dim];
            let mut u = vec![0.0; m];
            let mut entered = false;
            for k in 0..=ext.steps {
                let xs = DVector::from_column_slice(&x[..n]);
                entered |= scenario.in_unsafe(&xs);
                if k == ext.steps {
                    return (entered, !scenario.in_goal(&xs));
                }
                let dir: Option<DVector<f64>> = match strategy {
                    Strategy::Zero => None,
                    Strategy::Constant(d) => Some(d.clone()),
                    Strategy::PiecewiseRandom { hold } => {
                        if k % hold.max(&1) == 0 {
                            let v = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                            Some(v)
                        } else {
                            None
                        }
                    }
                    Strategy::TowardUnsafe | Strategy::AwayFromGoal => {
                        let (grad, sign) = if matches!(strategy, Strategy::TowardUnsafe) { (&unsafe_grad, 1.0) } else { (&goal_grad, -1.0) };
                        let g = DVector::from_fn(n, |i, _| grad[i].eval(xs.as_slice()).expect("state dimension") * sign);
                        Some(&bt * g)
                    }
                };
                match (strategy, dir) {
                    (Strategy::PiecewiseRandom { .. }, None) => {}
                    (_, None) => u.iter_mut().for_each(|v| *v = 0.0),
                    (_, Some(d)) => {
                        let norm = d.norm();
                        for j in 0..m {
                            u[j] = if norm > 0.0 { gamma * d[j] / norm } else { 0.0 };
                        }
                    }
                }
                for v in xi.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                stepper.step(&mut x, &mut next, &u, &xi, k);
            }
            unreachable!("loop returns at the horizon")
        });
        let unsafe_count = results.iter().filter(|r| r.0).count();
        let goal_miss_count = results.iter().filter(|r| r.1).count();
        outcomes.push(StrategyOutcome {
            strategy: strategy.name(),
            unsafe_count,
            goal_miss_count,
            unsafe_freq: Estimate95::binomial(unsafe_count, runs),
            goal_miss_freq: Estimate95::binomial(goal_miss_count, runs),
        });
    }
    Ok(McVerification { pattern: ext.pattern_index, gamma, runs, outcomes })
}

/// Empirical frequency of the attack-free divergence event between each pattern
/// estimate and its pair estimate, under full-sensor LQG control.
#[derive(Clone, Debug, Serialize)]
pub struct DivergenceFrequency {
    pub pattern: usize,
    pub other: usize,
    pub count: usize,
    pub runs: usize,
    pub frequency: Estimate95,
}

pub fn divergence_frequency(ctx: &SimContext, gamma_min: f64, runs: usize, seed: u64, workers: usize) -> Result<Vec<DivergenceFrequency>, CertifyError> {
    let sc = &ctx.scenario;
    let q = sc.num_patterns();
    let controller = Controller::Lqg(crate::harness::Estimate::Full);
    let adversary = Adversary::none();
    let per_run: Vec<Vec<bool>> = parallel_runs(runs, workers, |run| {
        let (trace, _) = simulate_run(ctx, &controller, &adversary, seed, run)?;
        let mut fired = Vec::with_capacity(q * q);
        for i in 0..q {
            for j in 0..q {
                if i == j {
                    continue;
                }
                let pair = sc.pair_index(i, j);
                let hit = (0..trace.t.len()).any(|k| {
                    let diff = &trace.xhat_patterns[i][k] - &trace.xhat_pairs[pair][k];
                    (ctx.gains.tracking.gain(k) * diff).norm() > gamma_min
                });
                fired.push(hit);
            }
        }
        Ok::<_, HarnessError>(fired)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    let mut slot = 0;
    for i in 0..q {
        for j in 0..q {
            if i == j {
                continue;
            }
            let count = per_run.iter().filter(|r| r[slot]).count();
            out.push(DivergenceFrequency { pattern: i, other: j, count, runs, frequency: Estimate95::binomial(count, runs) });
            slot += 1;
        }
    }
    Ok(out)
}
