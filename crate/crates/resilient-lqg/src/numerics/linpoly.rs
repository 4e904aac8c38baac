//! Polynomials whose coefficients are affine in a vector of decision variables.
//!
//! A coefficient is stored as a vector `[a0, a1, ..., ak]` meaning `a0 + Σ a_i y_i`.
//! This is what SOS constraints look like before the SDP is solved.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{NumericsError, Poly};

#[derive(Clone, Debug)]
pub struct LinPoly {
    nvars: usize,
    ndec: usize,
    terms: BTreeMap<Vec<u32>, DVector<f64>>,
}

/// Symmetric matrix pencil `F0 + Σ y_i F_i`.
#[derive(Clone, Debug)]
pub struct AffineSym {
    pub constant: DMatrix<f64>,
    pub coefficients: Vec<DMatrix<f64>>,
}

impl AffineSym {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, f) in self.coefficients.iter().enumerate() {
            if y[k] != 0.0 {
                m += f * y[k];
            }
        }
        m
    }
}

impl LinPoly {
    pub fn zero(nvars: usize, ndec: usize) -> Self {
        Self { nvars, ndec, terms: BTreeMap::new() }
    }

    pub fn from_poly(p: &Poly<f64>, ndec: usize) -> Self {
        let mut out = Self::zero(p.nvars(), ndec);
        for (e, &c) in p.terms() {
            let mut v = DVector::zeros(ndec + 1);
            v[0] = c;
            out.add_coeff(e.clone(), &v);
        }
        out
    }

    /// The single term `y_k * x^e`.
    pub fn decision(nvars: usize, ndec: usize, k: usize, exponents: Vec<u32>) -> Self {
        assert!(k < ndec);
        let mut v = DVector::zeros(ndec + 1);
        v[k + 1] = 1.0;
        let mut out = Self::zero(nvars, ndec);
        out.add_coeff(exponents, &v);
        out
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn ndec(&self) -> usize {
        self.ndec
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn coeff(&self, exponents: &[u32]) -> DVector<f64> {
        self.terms.get(exponents).cloned().unwrap_or_else(|| DVector::zeros(self.ndec + 1))
    }

    fn add_coeff(&mut self, exponents: Vec<u32>, v: &DVector<f64>) {
        assert_eq!(exponents.len(), self.nvars);
        let entry = self.terms.entry(exponents).or_insert_with(|| DVector::zeros(v.len()));
        *entry += v;
    }

    fn check(&self, other: &Self) -> Result<(), NumericsError> {
        if self.nvars != other.nvars || self.ndec != other.ndec {
            return Err(NumericsError::VariableMismatch { left: self.nvars, right: other.nvars });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumericsError> {
        self.check(other)?;
        let mut out = self.clone();
        for (e, v) in &other.terms {
            out.add_coeff(e.clone(), v);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NumericsError> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= c;
        }
        out
    }

    pub fn mul_poly(&self, p: &Poly<f64>) -> Result<Self, NumericsError> {
        if p.nvars() != self.nvars {
            return Err(NumericsError::VariableMismatch { left: self.nvars, right: p.nvars() });
        }
        let mut out = Self::zero(self.nvars, self.ndec);
        for (ea, va) in &self.terms {
            for (eb, &cb) in p.terms() {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_coeff(e, &(va * cb));
            }
        }
        Ok(out)
    }

    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.nvars, self.ndec);
        for (e, v) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut d = e.clone();
            d[i] -= 1;
            out.add_coeff(d, &(v * f64::from(e[i])));
        }
        out
    }

    pub fn grad(&self) -> Vec<Self> {
        (0..self.nvars).map(|i| self.derivative(i)).collect()
    }

    /// Fixes the decision variables and returns an ordinary polynomial.
    pub fn evaluate(&self, y: &DVector<f64>) -> Poly<f64> {
        assert_eq!(y.len(), self.ndec);
        let mut p = Poly::zero(self.nvars);
        for (e, v) in &self.terms {
            let c = v[0] + v.rows(1, self.ndec).dot(y);
            p.add_term(e.clone(), c);
        }
        p
    }

    /// Gram pencil in the monomial basis `[1, z_1, ..., z_n]`.
    ///
    /// For a polynomial of degree at most two the Gram matrix is unique, so the
    /// pencil is an exact reformulation of "this polynomial is SOS".
    pub fn gram_pencil(&self) -> Result<AffineSym, NumericsError> {
        if self.degree() > 2 {
            return Err(NumericsError::DegreeTooHigh { degree: self.degree(), max: 2 });
        }
        let n = self.nvars;
        let mut mats: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n + 1, n + 1); self.ndec + 1];
        for (e, v) in &self.terms {
            let nz: Vec<usize> = (0..n).filter(|&i| e[i] > 0).collect();
            let (r, c, w) = match (nz.as_slice(), e.iter().sum::<u32>()) {
                ([], _) => (0, 0, 1.0),
                ([i], 1) => (0, i + 1, 0.5),
                ([i], 2) => (i + 1, i + 1, 1.0),
                ([i, j], 2) => (i + 1, j + 1, 0.5),
                _ => unreachable!("degree checked above"),
            };
            for (k, m) in mats.iter_mut().enumerate() {
                if v[k] == 0.0 {
                    continue;
                }
                m[(r, c)] += w * v[k];
                if r != c {
                    m[(c, r)] += w * v[k];
                }
            }
        }
        let constant = mats.remove(0);
        Ok(AffineSym { constant, coefficients: mats })
    }
}

/// Expands `zᵀ G z` with `z = [1, x_1, ..., x_n]` back into a polynomial.
pub fn gram_to_poly(g: &DMatrix<f64>) -> Poly<f64> {
    let n = g.nrows() - 1;
    let basis: Vec<Poly<f64>> = std::iter::once(Poly::constant(n, 1.0))
        .chain((0..n).map(|i| Poly::var(n, i)))
        .collect();
    let mut p = Poly::zero(n);
    for r in 0..=n {
        for c in 0..=n {
            if g[(r, c)] != 0.0 {
                p = &p + &(&basis[r] * &basis[c]).scale(g[(r, c)]);
            }
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_pencil_reproduces_polynomial() {
        // p = y0 * x0^2 + 3 x0 x1 - 2 y1 x1 + 5
        let n = 2;
        let mut p = LinPoly::decision(n, 2, 0, vec![2, 0]);
        p = p.add(&LinPoly::from_poly(&Poly::monomial(vec![1, 1], 3.0), 2)).unwrap();
        p = p.add(&LinPoly::decision(n, 2, 1, vec![0, 1]).scale(-2.0)).unwrap();
        p = p.add(&LinPoly::from_poly(&Poly::constant(2, 5.0), 2)).unwrap();
        let y = DVector::from_vec(vec![1.5, -0.25]);
        let pencil = p.gram_pencil().unwrap();
        let back = gram_to_poly(&pencil.eval(&y));
        assert!(back.max_coeff_diff(&p.evaluate(&y)) < 1e-14);
    }

    #[test]
    fn cubic_has_no_quadratic_gram() {
        let p = LinPoly::decision(1, 1, 0, vec![3]);
        assert!(matches!(p.gram_pencil(), Err(NumericsError::DegreeTooHigh { .. })));
    }

    #[test]
    fn derivative_scales_by_exponent() {
        let p = LinPoly::decision(1, 1, 0, vec![2]);
        let d = p.derivative(0);
        let c = d.coeff(&[1]);
        assert_eq!(c[1], 2.0);
    }
}
