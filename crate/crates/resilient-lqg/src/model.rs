//! Problem instances: plant, attack patterns, regions, reference, cost weights and risk budgets.
//!
//! Sensor indices in the JSON file are 1-based, as they are usually written down.
//! Everything past validation uses 0-based indices.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{min_eigenvalue, observability_matrix, rank, Ellipsoid, Poly};

pub const OBSERVABILITY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("not observable: {0}")]
    NotObservable(Observability),
    #[error("matrix {0} is not positive semidefinite")]
    NotPsd(String),
    #[error("reference violates regions: {0}")]
    ReferenceViolatesRegions(String),
    #[error("sensor index {index} out of range for {p} sensors")]
    IndexOutOfRange { index: usize, p: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("scenario file: {0}")]
    Io(String),
}

/// Which filter failed the observability test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observability {
    Full,
    Pattern(usize),
    Pair(usize, usize),
}

impl std::fmt::Display for Observability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Observability::Full => write!(f, "full sensor set"),
            Observability::Pattern(i) => write!(f, "pattern {}", i + 1),
            Observability::Pair(i, j) => write!(f, "pattern pair ({}, {})", i + 1, j + 1),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Unsafe,
    Goal,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct PolyTerm {
    pub exponents: Vec<u32>,
    pub coefficient: f64,
}

/// `{x : g(x) >= 0}` for a polynomial `g` given by its terms.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Region {
    pub kind: RegionKind,
    pub terms: Vec<PolyTerm>,
}

impl Region {
    /// Disc `r^2 - |x - c|^2 >= 0` in the plane, expanded into monomials.
    pub fn disc(kind: RegionKind, center: [f64; 2], radius: f64) -> Self {
        let [cx, cy] = center;
        let terms = vec![
            PolyTerm { exponents: vec![0, 0], coefficient: radius * radius - cx * cx - cy * cy },
            PolyTerm { exponents: vec![1, 0], coefficient: 2.0 * cx },
            PolyTerm { exponents: vec![0, 1], coefficient: 2.0 * cy },
            PolyTerm { exponents: vec![2, 0], coefficient: -1.0 },
            PolyTerm { exponents: vec![0, 2], coefficient: -1.0 },
        ]
        .into_iter()
        .filter(|t| t.coefficient != 0.0)
        .collect();
        Self { kind, terms }
    }

    pub fn nvars(&self) -> Option<usize> {
        self.terms.first().map(|t| t.exponents.len())
    }

    pub fn poly(&self, n: usize) -> Result<Poly<f64>, ModelError> {
        let mut p = Poly::zero(n);
        for t in &self.terms {
            if t.exponents.len() != n {
                return Err(ModelError::DimensionMismatch(format!(
                    "region term has {} exponents, state has {n}",
                    t.exponents.len()
                )));
            }
            p.add_term(t.exponents.clone(), t.coefficient);
        }
        Ok(p)
    }

    /// The region as an ellipsoid when `g` is quadratic with negative definite Hessian.
    pub fn ellipsoid(&self, n: usize) -> Result<Option<Ellipsoid>, ModelError> {
        let g = self.poly(n)?;
        if g.degree() != 2 {
            return Ok(None);
        }
        let mut e = DMatrix::zeros(n, n);
        let mut lin = DVector::zeros(n);
        for (exps, &c) in g.terms() {
            let nz: Vec<usize> = (0..n).filter(|&i| exps[i] > 0).collect();
            match (nz.as_slice(), exps.iter().sum::<u32>()) {
                ([], _) => {}
                ([i], 1) => lin[*i] = c,
                ([i], 2) => e[(*i, *i)] = -c,
                ([i, j], 2) => {
                    e[(*i, *j)] = -0.5 * c;
                    e[(*j, *i)] = -0.5 * c;
                }
                _ => return Ok(None),
            }
        }
        let g0 = g.coeff(&vec![0; n]);
        if min_eigenvalue(&e).map_err(|e| ModelError::InvalidParameter(e.to_string()))? <= 0.0 {
            return Ok(None);
        }
        let center = e.clone().cholesky().expect("positive definite").solve(&lin) * 0.5;
        let level = g0 + center.dot(&(&e * &center));
        Ok(Some(Ellipsoid { center, shape: e, level }))
    }
}

pub fn region_contains(region: &Region, x: &DVector<f64>) -> Result<bool, ModelError> {
    let g = region.poly(x.len())?;
    if let Some(n) = region.nvars() {
        if n != x.len() {
            return Err(ModelError::DimensionMismatch(format!("point has {} entries, region {n}", x.len())));
        }
    }
    let v = g.eval(x.as_slice()).map_err(|e| ModelError::DimensionMismatch(e.to_string()))?;
    Ok(v >= 0.0)
}

/// Reference trajectory over `[0, T]`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    /// Planar parabola `x2 = peak - curvature * (x1 - vertex)^2` with `x1` moving
    /// linearly from `x1_start` to `x1_end` over the horizon.
    Parabola { x1_start: f64, x1_end: f64, vertex: f64, peak: f64, curvature: f64 },
    /// Samples at a fixed spacing, linearly interpolated between samples.
    Table { spacing: f64, samples: Vec<Vec<f64>> },
}

impl Reference {
    pub fn dim(&self) -> usize {
        match self {
            Reference::Parabola { .. } => 2,
            Reference::Table { samples, .. } => samples.first().map_or(0, Vec::len),
        }
    }

    pub fn eval(&self, t: f64, horizon: f64) -> DVector<f64> {
        match self {
            Reference::Parabola { x1_start, x1_end, vertex, peak, curvature } => {
                let x1 = x1_start + (x1_end - x1_start) * t / horizon;
                let x2 = peak - curvature * (x1 - vertex) * (x1 - vertex);
                DVector::from_vec(vec![x1, x2])
            }
            Reference::Table { spacing, samples } => {
                let pos = (t / spacing).max(0.0);
                let k = (pos.floor() as usize).min(samples.len() - 1);
                let frac = pos - k as f64;
                let a = DVector::from_column_slice(&samples[k]);
                if k + 1 >= samples.len() || frac <= 0.0 {
                    return a;
                }
                let b = DVector::from_column_slice(&samples[k + 1]);
                &a * (1.0 - frac) + b * frac
            }
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub sigma_w: Vec<Vec<f64>>,
    pub sigma_v: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    /// Attack patterns as lists of 1-based sensor indices.
    pub patterns: Vec<Vec<usize>>,
    #[serde(rename = "unsafe")]
    pub unsafe_region: Region,
    pub goal: Region,
    pub reference: Reference,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub eps_s: f64,
    pub eps_r: f64,
    pub dt: f64,
    #[serde(default)]
    pub adversary_present: bool,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Io(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| ModelError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    /// The configuration used throughout the examples and tests: a planar
    /// double-integrator-free plant with four sensors, two attack patterns and a
    /// parabolic reference passing over an unsafe disc into a goal disc.
    pub fn case_study() -> Self {
        let eye = |n: usize, s: f64| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..n).map(|j| if i == j { s } else { 0.0 }).collect()).collect()
        };
        Self {
            a: eye(2, 1.0),
            b: eye(2, 1.0),
            c: vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]],
            sigma_w: eye(2, 1e-8),
            sigma_v: eye(4, 1e-8),
            x0: vec![0.0, 0.0],
            patterns: vec![vec![2], vec![4]],
            unsafe_region: Region::disc(RegionKind::Unsafe, [0.5, 0.0], 0.2),
            goal: Region::disc(RegionKind::Goal, [1.0, 0.0], 0.2),
            reference: Reference::Parabola { x1_start: 0.0, x1_end: 1.0, vertex: 0.5, peak: 1.0, curvature: 4.0 },
            q: eye(2, 1.0),
            r: eye(2, 1e-3),
            f: eye(2, 0.03),
            horizon: 10.0,
            eps_s: 0.3,
            eps_r: 0.3,
            dt: 1e-3,
            adversary_present: false,
        }
    }
}

/// A subset of sensors used by one filter, with the matching output rows and noise block.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSet {
    /// Removed sensors (0-based, ascending).
    pub excluded: Vec<usize>,
    /// Remaining sensors (0-based, ascending).
    pub rows: Vec<usize>,
    pub c: DMatrix<f64>,
    pub sigma_v: DMatrix<f64>,
}

impl SensorSet {
    pub fn new(c: &DMatrix<f64>, sigma_v: &DMatrix<f64>, excluded: &[usize]) -> Result<Self, ModelError> {
        let mut excluded = excluded.to_vec();
        excluded.sort_unstable();
        excluded.dedup();
        let cs = rows_excluding(c, &excluded)?;
        let sv = principal_excluding(sigma_v, &excluded)?;
        let rows = (0..c.nrows()).filter(|r| !excluded.contains(r)).collect();
        Ok(Self { excluded, rows, c: cs, sigma_v: sv })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Picks this set's entries out of a full measurement vector.
    pub fn select(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&r| y[r]))
    }
}

/// `C` with the rows in `excluded` (0-based) removed, remaining rows in original order.
pub fn rows_excluding(c: &DMatrix<f64>, excluded: &[usize]) -> Result<DMatrix<f64>, ModelError> {
    let p = c.nrows();
    if let Some(&bad) = excluded.iter().find(|&&i| i >= p) {
        return Err(ModelError::IndexOutOfRange { index: bad, p });
    }
    let keep: Vec<usize> = (0..p).filter(|r| !excluded.contains(r)).collect();
    Ok(c.select_rows(keep.iter()))
}

/// Covariance with the rows and columns in `excluded` removed.
pub fn principal_excluding(s: &DMatrix<f64>, excluded: &[usize]) -> Result<DMatrix<f64>, ModelError> {
    let p = s.nrows();
    if let Some(&bad) = excluded.iter().find(|&&i| i >= p) {
        return Err(ModelError::IndexOutOfRange { index: bad, p });
    }
    let keep: Vec<usize> = (0..p).filter(|r| !excluded.contains(r)).collect();
    Ok(s.select_rows(keep.iter()).select_columns(keep.iter()))
}

/// A scenario that passed every check, with matrices and sensor subsets precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedScenario {
    config: ScenarioConfig,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub steps: usize,
    pub dt: f64,
    pub horizon: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_v: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// Attack patterns as 0-based sensor lists.
    pub patterns: Vec<Vec<usize>>,
    pub unsafe_poly: Poly<f64>,
    pub goal_poly: Poly<f64>,
    pub full: SensorSet,
    pub pattern_sets: Vec<SensorSet>,
    /// Sets excluding `A_i ∪ A_j` for `i < j`, in lexicographic order.
    pub pair_sets: Vec<((usize, usize), SensorSet)>,
    pub reference_samples: Vec<DVector<f64>>,
}

impl ValidatedScenario {
    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn num_patterns(&self) -> usize {
        self.patterns.len()
    }

    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.pair_sets.iter().position(|(k, _)| *k == (a, b)).expect("pair exists for distinct patterns")
    }

    pub fn pair_set(&self, i: usize, j: usize) -> &SensorSet {
        &self.pair_sets[self.pair_index(i, j)].1
    }

    /// Reference at an arbitrary time (closed form, or interpolated table).
    pub fn reference_at(&self, t: f64) -> DVector<f64> {
        self.config.reference.eval(t, self.horizon)
    }

    /// Reference at grid step `k`.
    pub fn reference_step(&self, k: usize) -> &DVector<f64> {
        &self.reference_samples[k]
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn unsafe_region(&self) -> &Region {
        &self.config.unsafe_region
    }

    pub fn goal_region(&self) -> &Region {
        &self.config.goal
    }

    pub fn eps_s(&self) -> f64 {
        self.config.eps_s
    }

    pub fn eps_r(&self) -> f64 {
        self.config.eps_r
    }

    pub fn in_unsafe(&self, x: &DVector<f64>) -> bool {
        self.unsafe_poly.eval(x.as_slice()).expect("state dimension checked") >= 0.0
    }

    pub fn in_goal(&self, x: &DVector<f64>) -> bool {
        self.goal_poly.eval(x.as_slice()).expect("state dimension checked") >= 0.0
    }

    /// Same scenario with a different step size.
    pub fn with_dt(&self, dt: f64) -> Result<Self, ModelError> {
        let mut cfg = self.config.clone();
        cfg.dt = dt;
        validate_scenario(&cfg)
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(ModelError::DimensionMismatch(format!("{name} has ragged rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidParameter(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn expect_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<(), ModelError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(ModelError::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_psd(name: &str, m: &DMatrix<f64>, strict: bool) -> Result<(), ModelError> {
    if (m - m.transpose()).abs().max() > PSD_TOL * (1.0 + m.abs().max()) {
        return Err(ModelError::NotPsd(format!("{name} (not symmetric)")));
    }
    let lmin = min_eigenvalue(m).map_err(|_| ModelError::NotPsd(name.to_string()))?;
    if lmin < -PSD_TOL || (strict && lmin <= 0.0) {
        return Err(ModelError::NotPsd(name.to_string()));
    }
    Ok(())
}

fn check_observable(a: &DMatrix<f64>, set: &SensorSet, which: Observability) -> Result<(), ModelError> {
    let n = a.nrows();
    if set.is_empty() || rank(&observability_matrix(a, &set.c), OBSERVABILITY_TOL) < n {
        return Err(ModelError::NotObservable(which));
    }
    Ok(())
}

pub fn validate_scenario(cfg: &ScenarioConfig) -> Result<ValidatedScenario, ModelError> {
    let a = matrix("A", &cfg.a)?;
    let n = a.nrows();
    expect_shape("A", &a, n, n)?;
    let b = matrix("B", &cfg.b)?;
    let m = b.ncols();
    expect_shape("B", &b, n, m)?;
    let c = matrix("C", &cfg.c)?;
    let p = c.nrows();
    expect_shape("C", &c, p, n)?;
    let sigma_w = matrix("sigma_w", &cfg.sigma_w)?;
    expect_shape("sigma_w", &sigma_w, n, n)?;
    let sigma_v = matrix("sigma_v", &cfg.sigma_v)?;
    expect_shape("sigma_v", &sigma_v, p, p)?;
    let q = matrix("Q", &cfg.q)?;
    expect_shape("Q", &q, n, n)?;
    let r = matrix("R", &cfg.r)?;
    expect_shape("R", &r, m, m)?;
    let f = matrix("F", &cfg.f)?;
    expect_shape("F", &f, n, n)?;
    if cfg.x0.len() != n {
        return Err(ModelError::DimensionMismatch(format!("x0 has {} entries, expected {n}", cfg.x0.len())));
    }
    if cfg.x0.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidParameter("x0 has non-finite entries".into()));
    }
    if cfg.reference.dim() != n {
        return Err(ModelError::DimensionMismatch(format!("reference has dimension {}, expected {n}", cfg.reference.dim())));
    }

    check_psd("sigma_w", &sigma_w, false)?;
    check_psd("sigma_v", &sigma_v, true)?;
    check_psd("Q", &q, false)?;
    check_psd("F", &f, false)?;
    check_psd("R", &r, true)?;

    for (name, e) in [("eps_s", cfg.eps_s), ("eps_r", cfg.eps_r)] {
        if !(e > 0.0 && e < 1.0) {
            return Err(ModelError::InvalidParameter(format!("{name} = {e} outside (0, 1)")));
        }
    }
    if !(cfg.dt > 0.0) || !(cfg.horizon > 0.0) {
        return Err(ModelError::InvalidParameter("dt and T must be positive".into()));
    }
    let steps_f = cfg.horizon / cfg.dt;
    let steps = steps_f.round() as usize;
    if steps == 0 || (steps as f64 * cfg.dt - cfg.horizon).abs() > 1e-9 * cfg.horizon {
        return Err(ModelError::InvalidParameter(format!("T / dt = {steps_f} is not an integer step count")));
    }
    if cfg.patterns.is_empty() {
        return Err(ModelError::InvalidParameter("at least one attack pattern is required".into()));
    }
    let mut patterns = Vec::with_capacity(cfg.patterns.len());
    for pat in &cfg.patterns {
        let mut zero_based = Vec::with_capacity(pat.len());
        for &s in pat {
            if s == 0 || s > p {
                return Err(ModelError::IndexOutOfRange { index: s, p });
            }
            zero_based.push(s - 1);
        }
        zero_based.sort_unstable();
        zero_based.dedup();
        patterns.push(zero_based);
    }

    let full = SensorSet::new(&c, &sigma_v, &[])?;
    check_observable(&a, &full, Observability::Full)?;
    let mut pattern_sets = Vec::with_capacity(patterns.len());
    for (i, pat) in patterns.iter().enumerate() {
        let set = SensorSet::new(&c, &sigma_v, pat)?;
        check_observable(&a, &set, Observability::Pattern(i))?;
        pattern_sets.push(set);
    }
    let mut pair_sets = Vec::new();
    for i in 0..patterns.len() {
        for j in i + 1..patterns.len() {
            let mut union = patterns[i].clone();
            union.extend_from_slice(&patterns[j]);
            let set = SensorSet::new(&c, &sigma_v, &union)?;
            check_observable(&a, &set, Observability::Pair(i, j))?;
            pair_sets.push(((i, j), set));
        }
    }

    let unsafe_poly = cfg.unsafe_region.poly(n)?;
    let goal_poly = cfg.goal.poly(n)?;
    if unsafe_poly.degree() < 1 || goal_poly.degree() < 1 {
        return Err(ModelError::InvalidParameter("region polynomials must have degree at least 1".into()));
    }
    let reference_samples: Vec<DVector<f64>> =
        (0..=steps).map(|k| cfg.reference.eval(k as f64 * cfg.dt, cfg.horizon)).collect();
    for (k, rk) in reference_samples.iter().enumerate() {
        if unsafe_poly.eval(rk.as_slice()).expect("dimension checked") >= 0.0 {
            return Err(ModelError::ReferenceViolatesRegions(format!("r(t) enters the unsafe set at step {k}")));
        }
    }
    if goal_poly.eval(reference_samples[steps].as_slice()).expect("dimension checked") < 0.0 {
        return Err(ModelError::ReferenceViolatesRegions("r(T) is outside the goal set".into()));
    }

    Ok(ValidatedScenario {
        config: cfg.clone(),
        n,
        m,
        p,
        steps,
        dt: cfg.dt,
        horizon: cfg.horizon,
        a,
        b,
        c,
        sigma_w,
        sigma_v,
        q,
        r,
        f,
        x0: DVector::from_column_slice(&cfg.x0),
        patterns,
        unsafe_poly,
        goal_poly,
        full,
        pattern_sets,
        pair_sets,
        reference_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_study_validates() {
        let v = validate_scenario(&ScenarioConfig::case_study()).unwrap();
        assert_eq!((v.n, v.m, v.p, v.steps), (2, 2, 4, 10_000));
        assert_eq!(v.patterns, vec![vec![1], vec![3]]);
        assert_eq!(v.pair_sets.len(), 1);
        assert_eq!(v.pair_set(0, 1).rows, vec![0, 2]);
    }

    #[test]
    fn excluding_second_sensor_keeps_rows_one_three_four() {
        let cfg = ScenarioConfig::case_study();
        let c = matrix("C", &cfg.c).unwrap();
        let sub = rows_excluding(&c, &[1]).unwrap();
        let expected = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(sub, expected);
        assert_eq!(rows_excluding(&c, &[]).unwrap(), c);
        assert_eq!(rows_excluding(&c, &[0, 1, 2, 3]).unwrap().shape(), (0, 2));
        assert!(matches!(rows_excluding(&c, &[4]), Err(ModelError::IndexOutOfRange { .. })));
    }

    #[test]
    fn unobservable_pattern_is_reported() {
        let mut cfg = ScenarioConfig::case_study();
        // Pattern 1 now removes both x1 sensors.
        cfg.patterns = vec![vec![1, 2], vec![4]];
        assert_eq!(validate_scenario(&cfg), Err(ModelError::NotObservable(Observability::Pattern(0))));
    }

    #[test]
    fn negative_noise_eigenvalue_is_rejected() {
        let mut cfg = ScenarioConfig::case_study();
        cfg.sigma_v[2][2] = -1.0;
        assert!(matches!(validate_scenario(&cfg), Err(ModelError::NotPsd(_))));
    }

    #[test]
    fn region_membership() {
        let cfg = ScenarioConfig::case_study();
        let at = |x: f64, y: f64| DVector::from_vec(vec![x, y]);
        assert!(region_contains(&cfg.unsafe_region, &at(0.5, 0.0)).unwrap());
        assert!(!region_contains(&cfg.unsafe_region, &at(0.0, 0.0)).unwrap());
        assert!(region_contains(&cfg.goal, &at(1.0, 0.0)).unwrap());
        assert!(!region_contains(&cfg.goal, &at(0.5, 0.0)).unwrap());
    }

    #[test]
    fn dimension_mismatch_in_membership() {
        let cfg = ScenarioConfig::case_study();
        assert!(matches!(
            region_contains(&cfg.goal, &DVector::from_vec(vec![1.0, 0.0, 0.0])),
            Err(ModelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn disc_as_ellipsoid() {
        let cfg = ScenarioConfig::case_study();
        let e = cfg.unsafe_region.ellipsoid(2).unwrap().unwrap();
        assert!((e.center[0] - 0.5).abs() < 1e-12 && e.center[1].abs() < 1e-12);
        assert!((e.level - 0.04).abs() < 1e-12);
    }

    #[test]
    fn fractional_step_count_is_rejected() {
        let mut cfg = ScenarioConfig::case_study();
        cfg.dt = 3e-3;
        assert!(matches!(validate_scenario(&cfg), Err(ModelError::InvalidParameter(_))));
    }

    #[test]
    fn reference_endpoints() {
        let cfg = ScenarioConfig::case_study();
        let r0 = cfg.reference.eval(0.0, 10.0);
        let r_mid = cfg.reference.eval(5.0, 10.0);
        let r_end = cfg.reference.eval(10.0, 10.0);
        assert_eq!(r0.as_slice(), &[0.0, 0.0]);
        assert_eq!(r_mid.as_slice(), &[0.5, 1.0]);
        assert_eq!(r_end.as_slice(), &[1.0, 0.0]);
    }
}
