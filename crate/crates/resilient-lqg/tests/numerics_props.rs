use nalgebra::{DMatrix, DVector};
use num_rational::Rational64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use resilient_lqg::numerics::{poly_grad, poly_mul, spectral_norm, sym_eig, trapezoid, Poly};

fn rational_poly() -> impl Strategy<Value = Poly<Rational64>> {
    prop::collection::vec(((0u32..3, 0u32..3), -6i64..7, 1i64..5), 0..5).prop_map(|terms| {
        let mut p = Poly::zero(2);
        for ((e0, e1), num, den) in terms {
            p.add_term(vec![e0, e1], Rational64::new(num, den));
        }
        p
    })
}

fn real_poly() -> impl Strategy<Value = Poly<f64>> {
    prop::collection::vec(((0u32..3, 0u32..3), -2.0f64..2.0), 0..6).prop_map(|terms| {
        let mut p = Poly::zero(2);
        for ((e0, e1), c) in terms {
            p.add_term(vec![e0, e1], c);
        }
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rational_polys_form_a_commutative_ring(a in rational_poly(), b in rational_poly(), c in rational_poly()) {
        prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
        prop_assert_eq!(&a * &b, &b * &a);
        prop_assert!((&a - &a).is_zero());
    }

    #[test]
    fn real_polys_satisfy_ring_laws_to_rounding(a in real_poly(), b in real_poly(), c in real_poly()) {
        let tol = 1e-12;
        prop_assert!((&(&a * &b) * &c).max_coeff_diff(&(&a * &(&b * &c))) <= tol);
        prop_assert!((&a * &(&b + &c)).max_coeff_diff(&(&(&a * &b) + &(&a * &c))) <= tol);
    }

    #[test]
    fn product_matches_dense_convolution(a in real_poly(), b in real_poly()) {
        // Dense 3x3 coefficient grids convolve into a 5x5 grid.
        let dense = |p: &Poly<f64>| {
            let mut g = [[0.0; 3]; 3];
            for (e, c) in p.terms() {
                g[e[0] as usize][e[1] as usize] = *c;
            }
            g
        };
        let (ga, gb) = (dense(&a), dense(&b));
        let mut conv = [[0.0; 5]; 5];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        conv[i + k][j + l] += ga[i][j] * gb[k][l];
                    }
                }
            }
        }
        let prod = poly_mul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                prop_assert!((prod.coeff(&[i as u32, j as u32]) - conv[i][j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_of_quadratic_form_is_twice_the_matrix(entries in prop::collection::vec(-3.0f64..3.0, 9)) {
        let m = DMatrix::from_column_slice(3, 3, &entries);
        let m = (&m + m.transpose()) * 0.5;
        let p = Poly::quadratic_form(&m, &DVector::zeros(3), 0.0);
        let grad = poly_grad(&p);
        for i in 0..3 {
            for j in 0..3 {
                let mut e = vec![0u32; 3];
                e[j] = 1;
                prop_assert!((grad[i].coeff(&e) - 2.0 * m[(i, j)]).abs() <= 1e-12);
            }
        }
    }
}

fn random_symmetric(rng: &mut ChaCha20Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&g + g.transpose()) * 0.5
}

#[test]
fn sym_eig_reconstructs_random_matrices() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let m = random_symmetric(&mut rng, n);
        let (vals, vecs) = sym_eig(&m).unwrap();
        let residual = (&m * &vecs - &vecs * DMatrix::from_diagonal(&vals)).norm();
        assert!(residual <= 1e-10 * m.norm(), "n = {n}, residual {residual:e}");
        let ortho = (vecs.transpose() * &vecs - DMatrix::identity(n, n)).abs().max();
        assert!(ortho <= 1e-12, "n = {n}, orthogonality {ortho:e}");
        assert!(vals.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }
}

/// Eigenvalues of a symmetric 3x3 matrix as the roots of its characteristic cubic.
fn cubic_roots(m: &DMatrix<f64>) -> [f64; 3] {
    let q = m.trace() / 3.0;
    let shifted = m - DMatrix::identity(3, 3) * q;
    let p = (shifted.norm_squared() / 6.0).sqrt();
    if p == 0.0 {
        return [q; 3];
    }
    let b = shifted / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let mut roots = [lo, 3.0 * q - hi - lo, hi];
    roots.sort_by(f64::total_cmp);
    roots
}

#[test]
fn sym_eig_matches_characteristic_roots_in_three_dimensions() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    for _ in 0..200 {
        let m = random_symmetric(&mut rng, 3);
        let (vals, _) = sym_eig(&m).unwrap();
        let roots = cubic_roots(&m);
        for k in 0..3 {
            assert!((vals[k] - roots[k]).abs() <= 1e-9 * (1.0 + m.norm()), "{vals} vs {roots:?}");
        }
    }
}

#[test]
fn spectral_norm_matches_gram_spectrum() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    for _ in 0..300 {
        let (r, c) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let m: DMatrix<f64> = DMatrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0));
        let (vals, _) = sym_eig(&(m.transpose() * &m)).unwrap();
        let expected = vals[vals.len() - 1].max(0.0).sqrt();
        let got = spectral_norm(&m).unwrap();
        assert!((got - expected).abs() <= 1e-10 * expected.max(1e-300), "{got} vs {expected}");
    }
    let u = DVector::<f64>::from_vec(vec![1.0, -2.0, 0.5]);
    let outer = &u * u.transpose();
    assert!((spectral_norm(&outer).unwrap() - u.norm_squared()).abs() <= 1e-12 * u.norm_squared());
}

#[test]
fn generic_paths_run_in_single_precision() {
    let m = DMatrix::<f32>::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let (vals, _) = sym_eig(&m).unwrap();
    assert!((vals[0] - 1.0).abs() < 1e-5 && (vals[1] - 3.0).abs() < 1e-5);
    assert!((spectral_norm(&m).unwrap() - 3.0).abs() < 1e-5);
    assert!((trapezoid(&[1.0f32; 11], 0.1) - 1.0).abs() < 1e-6);
}
