//! Sparse multivariate polynomials over a generic coefficient ring.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_traits::Num;

use super::NumericsError;

/// A polynomial in `nvars` ordered variables, stored as exponent tuple -> coefficient.
///
/// Zero coefficients are never stored, so structural equality is polynomial equality.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly<T> {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, T>,
}

impl<T: Num + Clone> Poly<T> {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: T) -> Self {
        Self::monomial(vec![0; nvars], c)
    }

    /// The polynomial `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable index {i} out of range for {nvars} variables");
        let mut e = vec![0; nvars];
        e[i] = 1;
        Self::monomial(e, T::one())
    }

    pub fn monomial(exponents: Vec<u32>, c: T) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, c);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &T)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, exponents: &[u32]) -> T {
        self.terms.get(exponents).cloned().unwrap_or_else(T::zero)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    /// Adds `c * x^e` in place, dropping the term if it cancels.
    pub fn add_term(&mut self, exponents: Vec<u32>, c: T) {
        assert_eq!(exponents.len(), self.nvars, "exponent tuple length mismatch");
        if c.is_zero() {
            return;
        }
        match self.terms.remove(&exponents) {
            Some(old) => {
                let s = old + c;
                if !s.is_zero() {
                    self.terms.insert(exponents, s);
                }
            }
            None => {
                self.terms.insert(exponents, c);
            }
        }
    }

    fn check(&self, other: &Self) -> Result<(), NumericsError> {
        if self.nvars != other.nvars {
            return Err(NumericsError::VariableMismatch { left: self.nvars, right: other.nvars });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, NumericsError> {
        self.check(other)?;
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, NumericsError> {
        self.check(other)?;
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), T::zero() - c.clone());
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, NumericsError> {
        self.check(other)?;
        let mut out = Self::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca.clone() * cb.clone());
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: T) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, v) in &self.terms {
            out.add_term(e.clone(), v.clone() * c.clone());
        }
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::constant(self.nvars, T::one());
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Partial derivative with respect to variable `i`.
    pub fn derivative(&self, i: usize) -> Result<Self, NumericsError> {
        if i >= self.nvars {
            return Err(NumericsError::VariableMismatch { left: self.nvars, right: i + 1 });
        }
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut k = T::zero();
            for _ in 0..e[i] {
                k = k + T::one();
            }
            let mut d = e.clone();
            d[i] -= 1;
            out.add_term(d, c.clone() * k);
        }
        Ok(out)
    }

    pub fn grad(&self) -> Vec<Self> {
        (0..self.nvars).map(|i| self.derivative(i).expect("index in range")).collect()
    }

    /// Evaluates term by term in exponent order, so the summation order is fixed.
    pub fn eval(&self, x: &[T]) -> Result<T, NumericsError> {
        if x.len() != self.nvars {
            return Err(NumericsError::VariableMismatch { left: self.nvars, right: x.len() });
        }
        let mut acc = T::zero();
        for (e, c) in &self.terms {
            let mut m = c.clone();
            for (xi, &k) in x.iter().zip(e) {
                for _ in 0..k {
                    m = m * xi.clone();
                }
            }
            acc = acc + m;
        }
        Ok(acc)
    }

    /// Replaces variable `i` by `subs[i]`; all substitutes share one variable set.
    pub fn substitute(&self, subs: &[Poly<T>]) -> Result<Poly<T>, NumericsError> {
        if subs.len() != self.nvars {
            return Err(NumericsError::VariableMismatch { left: self.nvars, right: subs.len() });
        }
        let Some(first) = subs.first() else {
            return Ok(Poly::constant(0, self.coeff(&[])));
        };
        let nv = first.nvars;
        for s in subs {
            first.check(s)?;
        }
        let mut out = Poly::zero(nv);
        for (e, c) in &self.terms {
            let mut m = Poly::constant(nv, c.clone());
            for (s, &k) in subs.iter().zip(e) {
                if k > 0 {
                    m = &m * &s.pow(k);
                }
            }
            out = &out + &m;
        }
        Ok(out)
    }
}

impl Poly<f64> {
    /// `zᵀ M z + bᵀ z + c` for a square `M` (only its symmetric part matters).
    pub fn quadratic_form(m: &DMatrix<f64>, b: &DVector<f64>, c: f64) -> Self {
        let n = b.len();
        assert_eq!(m.nrows(), n);
        assert_eq!(m.ncols(), n);
        let mut p = Self::constant(n, c);
        for i in 0..n {
            let mut e = vec![0; n];
            e[i] = 1;
            p.add_term(e, b[i]);
            for j in 0..n {
                let mut e = vec![0; n];
                e[i] += 1;
                e[j] += 1;
                p.add_term(e, m[(i, j)]);
            }
        }
        p
    }

    pub fn max_coeff_diff(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for (e, c) in &self.terms {
            worst = worst.max((c - other.coeff(e)).abs());
        }
        for (e, c) in &other.terms {
            if !self.terms.contains_key(e) {
                worst = worst.max(c.abs());
            }
        }
        worst
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }
}

impl<T: Num + Clone> Add for &Poly<T> {
    type Output = Poly<T>;
    fn add(self, rhs: &Poly<T>) -> Poly<T> {
        self.try_add(rhs).expect("polynomial variable sets differ")
    }
}

impl<T: Num + Clone> Sub for &Poly<T> {
    type Output = Poly<T>;
    fn sub(self, rhs: &Poly<T>) -> Poly<T> {
        self.try_sub(rhs).expect("polynomial variable sets differ")
    }
}

impl<T: Num + Clone> Mul for &Poly<T> {
    type Output = Poly<T>;
    fn mul(self, rhs: &Poly<T>) -> Poly<T> {
        self.try_mul(rhs).expect("polynomial variable sets differ")
    }
}

impl<T: Num + Clone> Neg for &Poly<T> {
    type Output = Poly<T>;
    fn neg(self) -> Poly<T> {
        self.scale(T::zero() - T::one())
    }
}

pub fn poly_mul<T: Num + Clone>(a: &Poly<T>, b: &Poly<T>) -> Result<Poly<T>, NumericsError> {
    a.try_mul(b)
}

pub fn poly_grad<T: Num + Clone>(p: &Poly<T>) -> Vec<Poly<T>> {
    p.grad()
}

pub fn poly_eval<T: Num + Clone>(p: &Poly<T>, x: &[T]) -> Result<T, NumericsError> {
    p.eval(x)
}
