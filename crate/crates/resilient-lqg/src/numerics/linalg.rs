//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, RealField, SymmetricEigen};

use super::NumericsError;

/// Dense symmetric matrix; symmetry is enforced on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix<T: RealField + Copy> {
    data: DMatrix<T>,
}

impl<T: RealField + Copy> SymMatrix<T> {
    /// Stores `(M + Mᵀ)/2`.
    pub fn from_matrix(m: &DMatrix<T>) -> Self {
        assert!(m.is_square(), "symmetric matrix must be square");
        Self { data: symmetrize(m) }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.data
    }

    pub fn eig(&self) -> Result<(DVector<T>, DMatrix<T>), NumericsError> {
        sym_eig(&self.data)
    }
}

pub fn symmetrize<T: RealField + Copy>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::one() / (T::one() + T::one());
    (m + m.transpose()) * half
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors (columns).
pub fn sym_eig<T: RealField + Copy>(m: &DMatrix<T>) -> Result<(DVector<T>, DMatrix<T>), NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).expect("finite eigenvalues"));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64, NumericsError> {
    let (vals, _) = sym_eig(m)?;
    Ok(vals.iter().copied().fold(f64::INFINITY, f64::min))
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> Result<f64, NumericsError> {
    let (vals, _) = sym_eig(m)?;
    Ok(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Largest singular value by power iteration on `MᵀM`.
pub fn spectral_norm<T: RealField + Copy>(m: &DMatrix<T>) -> Result<T, NumericsError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 || m.iter().all(|x| x.is_zero()) {
        return Ok(T::zero());
    }
    let gram = m.transpose() * m;
    let tol = nalgebra::convert::<f64, T>(1e-12);
    // Deterministic start with distinct entries so no eigenvector is missed by symmetry.
    let mut v = DVector::from_fn(n, |i, _| T::one() + nalgebra::convert::<f64, T>(0.1 * (i as f64 + 1.0).sqrt()));
    v /= v.norm();
    let mut lambda = T::zero();
    for _ in 0..100_000 {
        let w = &gram * &v;
        let next = v.dot(&w);
        let wn = w.norm();
        if wn.is_zero() {
            return Ok(T::zero());
        }
        let residual = (&w - &v * next).norm();
        v = w / wn;
        if residual <= tol * next.abs() || (next - lambda).abs() <= tol * tol * next.abs() {
            return Ok(next.max(T::zero()).sqrt());
        }
        lambda = next;
    }
    Err(NumericsError::NonConvergence)
}

/// Symmetric square root `N` with `N Nᵀ = M` for a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericsError> {
    let (vals, vecs) = sym_eig(m)?;
    let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if vals.iter().any(|&v| v < -1e-10 * scale) {
        return Err(NumericsError::NotPsd);
    }
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    Ok(&vecs * d * vecs.transpose())
}

/// Numerical rank with a tolerance relative to the largest singular value.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// `[C; CA; ...; CA^{n-1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = c.nrows();
    let mut out = DMatrix::zeros(p * n, n);
    let mut block = c.clone();
    for k in 0..n {
        out.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    out
}

/// Orthonormal basis (columns) of the null space of `e`.
pub fn null_space(e: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>, NumericsError> {
    let n = e.ncols();
    let gram = e.transpose() * e;
    let (vals, vecs) = sym_eig(&gram)?;
    let vmax = vals.iter().copied().fold(0.0, f64::max);
    let cols: Vec<usize> = (0..n).filter(|&i| vals[i] <= rel_tol * vmax.max(1e-300)).collect();
    let mut out = DMatrix::zeros(n, cols.len());
    for (k, &i) in cols.iter().enumerate() {
        out.set_column(k, &vecs.column(i));
    }
    Ok(out)
}

/// Solves `A x = b` for symmetric positive definite `A`, falling back to LU.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}
