//! Fixed-step Runge-Kutta integration of vector ODEs.

use nalgebra::{DVector, RealField};

/// One classical RK4 step of `y' = f(t, y)` from `t` to `t + h`.
pub fn rk4_step<T, F>(f: &F, t: T, y: &DVector<T>, h: T) -> DVector<T>
where
    T: RealField + Copy,
    F: Fn(T, &DVector<T>) -> DVector<T>,
{
    let two = T::one() + T::one();
    let six = two * (two + T::one());
    let half = h / two;
    let k1 = f(t, y);
    let k2 = f(t + half, &(y + &k1 * half));
    let k3 = f(t + half, &(y + &k2 * half));
    let k4 = f(t + h, &(y + &k3 * h));
    y + (k1 + k2 * two + k3 * two + k4) * (h / six)
}

/// Integrates `steps` RK4 steps and returns every iterate, starting with `y0`.
///
/// `post` runs on each new iterate (projection, divergence checks) and may abort.
pub fn rk4_path<T, F, P, E>(f: F, t0: T, y0: DVector<T>, h: T, steps: usize, mut post: P) -> Result<Vec<DVector<T>>, E>
where
    T: RealField + Copy,
    F: Fn(T, &DVector<T>) -> DVector<T>,
    P: FnMut(usize, &mut DVector<T>) -> Result<(), E>,
{
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y0);
    for k in 0..steps {
        let t = t0 + h * nalgebra::convert::<f64, T>(k as f64);
        let mut next = rk4_step(&f, t, &out[k], h);
        post(k + 1, &mut next)?;
        out.push(next);
    }
    Ok(out)
}
