//! Quadrature on uniform grids.

use nalgebra::RealField;

/// Trapezoidal rule for samples spaced `h` apart.
pub fn trapezoid<T: RealField + Copy>(values: &[T], h: T) -> T {
    if values.len() < 2 {
        return T::zero();
    }
    let half = T::one() / (T::one() + T::one());
    let mut acc = (values[0] + values[values.len() - 1]) * half;
    for &v in &values[1..values.len() - 1] {
        acc += v;
    }
    acc * h
}

/// Running trapezoidal integral; entry `k` integrates samples `0..=k`.
pub fn cumulative_trapezoid<T: RealField + Copy>(values: &[T], h: T) -> Vec<T> {
    let half = T::one() / (T::one() + T::one());
    let mut out = Vec::with_capacity(values.len());
    let mut acc = T::zero();
    for (k, &v) in values.iter().enumerate() {
        if k > 0 {
            acc += (values[k - 1] + v) * half * h;
        }
        out.push(acc);
    }
    out
}
