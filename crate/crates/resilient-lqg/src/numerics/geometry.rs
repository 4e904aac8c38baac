//! Euclidean distance to an ellipsoid.

use nalgebra::{DMatrix, DVector};

use super::{sym_eig, NumericsError};

/// The set `{x : (x - c)ᵀ E (x - c) <= level}` with `E` positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub level: f64,
}

impl Ellipsoid {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        let d = x - &self.center;
        d.dot(&(&self.shape * &d)) <= self.level
    }

    /// Distance from `p` to the set; zero inside, infinite if the set is empty.
    ///
    /// Solves the secular equation for the projection multiplier by bisection.
    pub fn distance(&self, p: &DVector<f64>) -> Result<f64, NumericsError> {
        if self.level < 0.0 {
            return Ok(f64::INFINITY);
        }
        let q = p - &self.center;
        if self.level == 0.0 {
            return Ok(q.norm());
        }
        let (lam, v) = sym_eig(&self.shape)?;
        if lam.iter().any(|&l| l <= 0.0) {
            return Err(NumericsError::NotPsd);
        }
        let qt = v.transpose() * q;
        let g = |mu: f64| -> f64 {
            lam.iter().zip(qt.iter()).map(|(&l, &z)| l * z * z / ((1.0 + mu * l) * (1.0 + mu * l))).sum::<f64>()
        };
        if g(0.0) <= self.level {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        while g(hi) > self.level {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(NumericsError::NonConvergence);
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > self.level {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let mu = hi;
        let d2: f64 = lam
            .iter()
            .zip(qt.iter())
            .map(|(&l, &z)| {
                let w = z / (1.0 + mu * l);
                (w - z) * (w - z)
            })
            .sum();
        Ok(d2.sqrt())
    }
}
