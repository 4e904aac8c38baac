//! Small dense semidefinite feasibility solver.
//!
//! Decides whether `F_b(y) = F_b0 + Σ y_i F_bi ≽ 0` holds for every block `b`, optionally
//! subject to `E y = f`. Internally it maximizes a margin `τ ≤ 1` with
//! `F_b(y) - τI ≽ 0` by a primal-dual path-following method (HKM search direction,
//! Mehrotra predictor-corrector). The verdict is backed by a certificate either way:
//! a point whose blocks have minimum eigenvalue at least `feasibility_margin`, or a
//! PSD dual matrix `Z` with `⟨F_bi, Z_b⟩ ≈ 0` and `⟨F_b0, Z_b⟩ < 0`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numerics::{min_eigenvalue, null_space, symmetrize, AffineSym};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("block {block} is malformed: {reason}")]
    Malformed { block: usize, reason: String },
    #[error("equality constraints are inconsistent (residual {residual:.3e})")]
    InconsistentEqualities { residual: f64 },
}

#[derive(Clone, Debug)]
pub struct SdpOptions {
    pub max_iterations: usize,
    /// Minimum eigenvalue required of every block at a returned point.
    pub feasibility_margin: f64,
    /// Bound on `|⟨F_i, Z⟩|` for an accepted infeasibility ray (with `tr Z = 1`).
    pub ray_tolerance: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { max_iterations: 500, feasibility_margin: 1e-9, ray_tolerance: 1e-7 }
    }
}

#[derive(Clone, Debug)]
pub enum SdpVerdict {
    Feasible {
        point: DVector<f64>,
        min_eigenvalue: f64,
        iterations: usize,
    },
    Infeasible {
        /// One PSD block per LMI block, normalized to unit total trace.
        ray: Vec<DMatrix<f64>>,
        /// `max_i |Σ_b ⟨F_bi, Z_b⟩|`.
        residual: f64,
        /// `Σ_b ⟨F_b0, Z_b⟩`, strictly negative.
        value: f64,
        iterations: usize,
    },
    Numerical {
        iterations: usize,
        margin: f64,
    },
}

impl SdpVerdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, SdpVerdict::Feasible { .. })
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, SdpVerdict::Infeasible { .. })
    }
}

/// `E y = f`.
#[derive(Clone, Debug)]
pub struct LinearEqualities {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Minimum eigenvalue over all blocks at `y`.
pub fn block_margin(blocks: &[AffineSym], y: &DVector<f64>) -> f64 {
    blocks
        .iter()
        .map(|b| min_eigenvalue(&symmetrize(&b.eval(y))).unwrap_or(f64::NEG_INFINITY))
        .fold(f64::INFINITY, f64::min)
}

pub fn sdp_feasibility(blocks: &[AffineSym], equalities: Option<&LinearEqualities>, opts: &SdpOptions) -> Result<SdpVerdict, SdpError> {
    let ndec = blocks.first().map_or(0, |b| b.coefficients.len());
    for (k, b) in blocks.iter().enumerate() {
        let d = b.dim();
        if b.constant.ncols() != d || b.coefficients.len() != ndec || b.coefficients.iter().any(|f| f.shape() != (d, d)) {
            return Err(SdpError::Malformed { block: k, reason: "inconsistent shapes".into() });
        }
        let asym = (&b.constant - b.constant.transpose()).amax();
        if asym > 1e-12 * (1.0 + b.constant.amax()) || b.coefficients.iter().any(|f| (f - f.transpose()).amax() > 1e-12 * (1.0 + f.amax())) {
            return Err(SdpError::Malformed { block: k, reason: "not symmetric".into() });
        }
    }

    // Eliminate equalities: y = y0 + N z.
    let (y0, basis) = match equalities {
        None => (DVector::zeros(ndec), DMatrix::identity(ndec, ndec)),
        Some(eq) => {
            if eq.matrix.ncols() != ndec || eq.matrix.nrows() != eq.rhs.len() {
                return Err(SdpError::Malformed { block: 0, reason: "equality shape".into() });
            }
            let svd = eq.matrix.clone().svd(true, true);
            let y0 = svd.solve(&eq.rhs, 1e-12 * svd.singular_values.max().max(1.0)).expect("svd with vectors");
            let residual = (&eq.matrix * &y0 - &eq.rhs).amax();
            if residual > 1e-9 * (1.0 + eq.rhs.amax()) {
                return Err(SdpError::InconsistentEqualities { residual });
            }
            let n = null_space(&eq.matrix, 1e-12).map_err(|e| SdpError::Malformed { block: 0, reason: e.to_string() })?;
            (y0, n)
        }
    };
    let reduced: Vec<AffineSym> = blocks
        .iter()
        .map(|b| AffineSym {
            constant: b.eval(&y0),
            coefficients: (0..basis.ncols())
                .map(|j| {
                    let mut m = DMatrix::zeros(b.dim(), b.dim());
                    for i in 0..ndec {
                        if basis[(i, j)] != 0.0 {
                            m += &b.coefficients[i] * basis[(i, j)];
                        }
                    }
                    m
                })
                .collect(),
        })
        .collect();

    let lift = |z: &DVector<f64>| &y0 + &basis * z;
    let outcome = MarginProblem::new(&reduced).solve(opts, |z| {
        let y = lift(z);
        let margin = block_margin(blocks, &y);
        (margin >= opts.feasibility_margin).then_some((y, margin))
    });
    Ok(match outcome {
        Outcome::Point { point, margin, iterations } => SdpVerdict::Feasible { point, min_eigenvalue: margin, iterations },
        Outcome::Ray { ray, residual, value, iterations } => SdpVerdict::Infeasible { ray, residual, value, iterations },
        Outcome::Stalled { iterations, margin } => SdpVerdict::Numerical { iterations, margin },
    })
}

enum Outcome {
    Point { point: DVector<f64>, margin: f64, iterations: usize },
    Ray { ray: Vec<DMatrix<f64>>, residual: f64, value: f64, iterations: usize },
    Stalled { iterations: usize, margin: f64 },
}

/// `max τ` s.t. `C_b - Σ_k y_k A_bk ≽ 0`, where the last variable is `τ`, the LMI
/// blocks have `C = F0`, `A_k = -F_k`, `A_τ = I`, and a final 1×1 block encodes `τ ≤ 1`.
struct MarginProblem<'a> {
    lmi: &'a [AffineSym],
    nvar: usize,
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
    y: DVector<f64>,
}

impl<'a> MarginProblem<'a> {
    fn new(lmi: &'a [AffineSym]) -> Self {
        let nvar = lmi.first().map_or(0, |b| b.coefficients.len()) + 1;
        Self { lmi, nvar }
    }

    fn nblocks(&self) -> usize {
        self.lmi.len() + 1
    }

    fn dim(&self, b: usize) -> usize {
        if b < self.lmi.len() {
            self.lmi[b].dim()
        } else {
            1
        }
    }

    fn c(&self, b: usize) -> DMatrix<f64> {
        if b < self.lmi.len() {
            self.lmi[b].constant.clone()
        } else {
            DMatrix::from_element(1, 1, 1.0)
        }
    }

    /// `⟨A_k, Y⟩` for block `b` (Y need not be symmetric).
    fn a_dot(&self, b: usize, k: usize, y: &DMatrix<f64>) -> f64 {
        let tau = self.nvar - 1;
        if b < self.lmi.len() {
            if k == tau {
                y.trace()
            } else {
                -self.lmi[b].coefficients[k].component_mul(y).sum()
            }
        } else if k == tau {
            y[(0, 0)]
        } else {
            0.0
        }
    }

    fn a_mat(&self, b: usize, k: usize) -> DMatrix<f64> {
        let tau = self.nvar - 1;
        let d = self.dim(b);
        if b < self.lmi.len() {
            if k == tau {
                DMatrix::identity(d, d)
            } else {
                -&self.lmi[b].coefficients[k]
            }
        } else if k == tau {
            DMatrix::from_element(1, 1, 1.0)
        } else {
            DMatrix::zeros(1, 1)
        }
    }

    fn a_op(&self, ys: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_fn(self.nvar, |k, _| (0..self.nblocks()).map(|b| self.a_dot(b, k, &ys[b])).sum())
    }

    fn a_adj(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (0..self.nblocks())
            .map(|b| {
                let mut m = DMatrix::zeros(self.dim(b), self.dim(b));
                for k in 0..self.nvar {
                    if y[k] != 0.0 {
                        m += self.a_mat(b, k) * y[k];
                    }
                }
                m
            })
            .collect()
    }

    fn solve<F>(&self, opts: &SdpOptions, mut accept: F) -> Outcome
    where
        F: FnMut(&DVector<f64>) -> Option<(DVector<f64>, f64)>,
    {
        let nb = self.nblocks();
        let total: usize = (0..nb).map(|b| self.dim(b)).sum();
        let scale = self
            .lmi
            .iter()
            .flat_map(|b| std::iter::once(b.constant.norm()).chain(b.coefficients.iter().map(|f| f.norm())))
            .fold(1.0f64, f64::max);
        let xi = 10.0 * scale.sqrt().max(1.0);
        let mut it = Iterate {
            x: (0..nb).map(|b| DMatrix::identity(self.dim(b), self.dim(b)) * xi).collect(),
            s: (0..nb).map(|b| DMatrix::identity(self.dim(b), self.dim(b)) * xi).collect(),
            y: DVector::zeros(self.nvar),
        };
        let mut bvec = DVector::zeros(self.nvar);
        bvec[self.nvar - 1] = 1.0;
        let cs: Vec<DMatrix<f64>> = (0..nb).map(|b| self.c(b)).collect();
        let z_of = |y: &DVector<f64>| y.rows(0, self.nvar - 1).into_owned();
        let mut best_margin = f64::NEG_INFINITY;

        for iter in 0..opts.max_iterations {
            let z = z_of(&it.y);
            if let Some((point, margin)) = accept(&z) {
                return Outcome::Point { point, margin, iterations: iter };
            }
            best_margin = best_margin.max(it.y[self.nvar - 1]);
            if let Some((ray, residual, value)) = self.ray(&it.x, opts.ray_tolerance) {
                return Outcome::Ray { ray, residual, value, iterations: iter };
            }

            let mu = (0..nb).map(|b| it.x[b].component_mul(&it.s[b]).sum()).sum::<f64>() / total as f64;
            let rp = &bvec - self.a_op(&it.x);
            let aty = self.a_adj(&it.y);
            let rd: Vec<DMatrix<f64>> = (0..nb).map(|b| &cs[b] - &it.s[b] - &aty[b]).collect();
            let pinf = rp.norm() / (1.0 + bvec.norm());
            let dinf = rd.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt() / (1.0 + scale);
            let pobj: f64 = (0..nb).map(|b| cs[b].component_mul(&it.x[b]).sum()).sum();
            let dobj = it.y[self.nvar - 1];
            if pinf < 1e-12 && dinf < 1e-12 && (pobj - dobj).abs() < 1e-12 * (1.0 + dobj.abs()) {
                return Outcome::Stalled { iterations: iter, margin: dobj };
            }

            let sinv: Vec<DMatrix<f64>> = match it.s.iter().map(|s| s.clone().cholesky().map(|c| c.inverse())).collect::<Option<Vec<_>>>() {
                Some(v) => v,
                None => return Outcome::Stalled { iterations: iter, margin: best_margin },
            };
            let schur = self.schur(&it.x, &sinv);
            let Some(factor) = SchurFactor::new(schur) else {
                return Outcome::Stalled { iterations: iter, margin: best_margin };
            };

            // Predictor.
            let t_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
            let (dx_a, ds_a, _) = self.direction(&factor, &it.x, &sinv, &rp, &rd, &t_aff);
            let ap = 0.98 * max_step(&it.x, &dx_a).min(1.0 / 0.98);
            let ad = 0.98 * max_step(&it.s, &ds_a).min(1.0 / 0.98);
            let mu_aff = (0..nb)
                .map(|b| (&it.x[b] + &dx_a[b] * ap).component_mul(&(&it.s[b] + &ds_a[b] * ad)).sum())
                .sum::<f64>()
                / total as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // Corrector.
            let t: Vec<DMatrix<f64>> = (0..nb)
                .map(|b| &sinv[b] * (sigma * mu) - &it.x[b] - &dx_a[b] * &ds_a[b] * &sinv[b])
                .collect();
            let (dx, ds, dy) = self.direction(&factor, &it.x, &sinv, &rp, &rd, &t);
            let ap = (0.98 * max_step(&it.x, &dx)).min(1.0);
            let ad = (0.98 * max_step(&it.s, &ds)).min(1.0);
            for b in 0..nb {
                it.x[b] = symmetrize(&(&it.x[b] + &dx[b] * ap));
                it.s[b] = symmetrize(&(&it.s[b] + &ds[b] * ad));
            }
            it.y += dy * ad;
        }
        Outcome::Stalled { iterations: opts.max_iterations, margin: best_margin }
    }

    fn schur(&self, x: &[DMatrix<f64>], sinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.nvar;
        let mut out = DMatrix::zeros(m, m);
        for b in 0..self.nblocks() {
            let amats: Vec<DMatrix<f64>> = (0..m).map(|k| self.a_mat(b, k)).collect();
            for j in 0..m {
                if amats[j].iter().all(|&v| v == 0.0) {
                    continue;
                }
                let g = &x[b] * &amats[j] * &sinv[b];
                for i in 0..m {
                    out[(i, j)] += amats[i].component_mul(&g).sum();
                }
            }
        }
        symmetrize(&out)
    }

    /// HKM direction for `ΔX = T - X ΔS S⁻¹` (then symmetrized), `ΔS = R_d - Aᵀ Δy`, `A(ΔX) = r_p`.
    fn direction(
        &self,
        factor: &SchurFactor,
        x: &[DMatrix<f64>],
        sinv: &[DMatrix<f64>],
        rp: &DVector<f64>,
        rd: &[DMatrix<f64>],
        t: &[DMatrix<f64>],
    ) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, DVector<f64>) {
        let nb = self.nblocks();
        let xrs: Vec<DMatrix<f64>> = (0..nb).map(|b| &x[b] * &rd[b] * &sinv[b]).collect();
        let rhs = rp - self.a_op(t) + self.a_op(&xrs);
        let dy = factor.solve(&rhs);
        let atdy = self.a_adj(&dy);
        let ds: Vec<DMatrix<f64>> = (0..nb).map(|b| &rd[b] - &atdy[b]).collect();
        let dx: Vec<DMatrix<f64>> = (0..nb).map(|b| symmetrize(&(&t[b] - &x[b] * &ds[b] * &sinv[b]))).collect();
        (dx, ds, dy)
    }

    /// Checks whether the LMI part of `X` is an infeasibility certificate.
    fn ray(&self, x: &[DMatrix<f64>], tol: f64) -> Option<(Vec<DMatrix<f64>>, f64, f64)> {
        let trace: f64 = self.lmi.iter().enumerate().map(|(b, _)| x[b].trace()).sum();
        if !(trace > 0.0) {
            return None;
        }
        let z: Vec<DMatrix<f64>> = self.lmi.iter().enumerate().map(|(b, _)| &x[b] / trace).collect();
        let value: f64 = self.lmi.iter().zip(&z).map(|(blk, zb)| blk.constant.component_mul(zb).sum()).sum();
        let ndec = self.nvar - 1;
        let residual = (0..ndec)
            .map(|k| self.lmi.iter().zip(&z).map(|(blk, zb)| blk.coefficients[k].component_mul(zb).sum()).sum::<f64>().abs())
            .fold(0.0, f64::max);
        let psd = z.iter().all(|m| min_eigenvalue(m).map_or(false, |l| l >= -1e-14));
        (psd && residual <= tol && value < -tol.max(1e3 * residual)).then_some((z, residual, value))
    }
}

enum SchurFactor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SchurFactor {
    fn new(m: DMatrix<f64>) -> Option<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return None;
        }
        match m.clone().cholesky() {
            Some(c) => Some(Self::Chol(c)),
            None => {
                let lu = m.lu();
                lu.is_invertible().then_some(Self::Lu(lu))
            }
        }
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Chol(c) => c.solve(b),
            Self::Lu(l) => l.solve(b).unwrap_or_else(|| DVector::zeros(b.len())),
        }
    }
}

/// Largest `α` with `M + α ΔM ≽ 0` for every block (infinite if unbounded).
fn max_step(m: &[DMatrix<f64>], dm: &[DMatrix<f64>]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (mb, db) in m.iter().zip(dm) {
        let Some(chol) = mb.clone().cholesky() else {
            return 0.0;
        };
        let l = chol.l();
        let linv = l.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(l.nrows(), l.ncols()));
        let w = symmetrize(&(&linv * db * linv.transpose()));
        let lmin = min_eigenvalue(&w).unwrap_or(f64::NEG_INFINITY);
        if lmin < 0.0 {
            alpha = alpha.min(-1.0 / lmin);
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(c: f64, a: f64) -> AffineSym {
        AffineSym { constant: DMatrix::from_element(1, 1, c), coefficients: vec![DMatrix::from_element(1, 1, a)] }
    }

    #[test]
    fn two_lower_bounds_are_feasible() {
        let v = sdp_feasibility(&[scalar(-1.0, 1.0), scalar(1.0, 1.0)], None, &SdpOptions::default()).unwrap();
        match v {
            SdpVerdict::Feasible { point, min_eigenvalue, .. } => {
                assert!(point[0] >= 1.0 + 1e-9);
                assert!(min_eigenvalue >= 1e-9);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn contradictory_bounds_give_a_ray() {
        let v = sdp_feasibility(&[scalar(-1.0, 1.0), scalar(0.0, -1.0)], None, &SdpOptions::default()).unwrap();
        match v {
            SdpVerdict::Infeasible { ray, residual, value, .. } => {
                assert!(residual <= 1e-7);
                assert!(value < 0.0);
                // Both multipliers equal: 1·(x - 1) + 1·(-x) = -1.
                assert!((ray[0][(0, 0)] - ray[1][(0, 0)]).abs() < 1e-6);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn equality_pins_the_point() {
        // [[1, y0], [y0, 1]] ≽ 0 with y0 + y1 = 0.5 and y1 = 0.
        let e = |i: usize, j: usize| {
            let mut m = DMatrix::zeros(2, 2);
            m[(i, j)] = 1.0;
            m[(j, i)] = 1.0;
            m
        };
        let block = AffineSym { constant: DMatrix::identity(2, 2), coefficients: vec![e(0, 1), DMatrix::zeros(2, 2)] };
        let eq = LinearEqualities { matrix: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), rhs: DVector::from_vec(vec![0.5, 0.0]) };
        let v = sdp_feasibility(&[block.clone()], Some(&eq), &SdpOptions::default()).unwrap();
        let SdpVerdict::Feasible { point, .. } = v else { panic!("expected feasible") };
        assert!((point[0] - 0.5).abs() < 1e-9 && point[1].abs() < 1e-9);

        let eq_bad = LinearEqualities { matrix: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), rhs: DVector::from_vec(vec![1.5, 0.0]) };
        assert!(sdp_feasibility(&[block], Some(&eq_bad), &SdpOptions::default()).unwrap().is_infeasible());
    }

    #[test]
    fn asymmetric_block_is_rejected() {
        let block = AffineSym { constant: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), coefficients: vec![] };
        assert!(matches!(sdp_feasibility(&[block], None, &SdpOptions::default()), Err(SdpError::Malformed { .. })));
    }
}
