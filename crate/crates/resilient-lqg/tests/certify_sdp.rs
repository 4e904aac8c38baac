use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use resilient_lqg::certify::{
    build_extended_system, eta_bound, p0_lower_bound, recheck_certificate, verify_reachability, verify_safety, CovarianceBounds, ExtendedSystem,
};
use resilient_lqg::gains::{compute_gains, GainSchedule};
use resilient_lqg::model::{validate_scenario, ScenarioConfig, ValidatedScenario};
use resilient_lqg::numerics::{sym_eig, AffineSym};
use resilient_lqg::sdp::{sdp_feasibility, SdpOptions, SdpVerdict};

const GAMMA: f64 = 0.078125;

fn case_study() -> (ValidatedScenario, GainSchedule) {
    let sc = validate_scenario(&ScenarioConfig::case_study()).unwrap();
    let g = compute_gains(&sc).unwrap();
    (sc, g)
}

fn project_psd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eig(m).unwrap();
    let clipped = vals.map(|v| v.max(floor));
    &vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose()
}

/// Alternating projections between `{X ⪰ floor·I}` and the matrices that agree with
/// `known` where `mask` is set. Returns the final gap between the two sets.
fn projection_gap(known: &DMatrix<f64>, mask: &DMatrix<bool>, floor: f64) -> f64 {
    let mut x = known.clone();
    let mut gap = f64::INFINITY;
    for _ in 0..5000 {
        let p = project_psd(&x, floor);
        let a = DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| if mask[(i, j)] { known[(i, j)] } else { p[(i, j)] });
        gap = (&p - &a).norm();
        x = a;
        if gap < 1e-12 {
            break;
        }
    }
    gap
}

/// Partially specified correlation matrices: the SDP finds a strictly positive
/// completion whenever alternating projections find one with a margin, and never
/// claims one when the projections stall at a positive distance.
#[test]
fn psd_completion_agrees_with_alternating_projections() {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let n = 4;
    let (mut feasible, mut infeasible) = (0, 0);
    for _ in 0..150 {
        let mut known = DMatrix::identity(n, n);
        let mut mask = DMatrix::from_fn(n, n, |i, j| i == j);
        let mut free = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.6) {
                    let v = rng.random_range(-1.0..1.0);
                    known[(i, j)] = v;
                    known[(j, i)] = v;
                    mask[(i, j)] = true;
                    mask[(j, i)] = true;
                } else {
                    free.push((i, j));
                }
            }
        }
        let coefficients = free
            .iter()
            .map(|&(i, j)| {
                let mut f = DMatrix::zeros(n, n);
                f[(i, j)] = 1.0;
                f[(j, i)] = 1.0;
                f
            })
            .collect();
        let block = AffineSym { constant: known.clone(), coefficients };
        let verdict = sdp_feasibility(&[block], None, &SdpOptions::default()).unwrap();
        if projection_gap(&known, &mask, 1e-2) < 1e-9 {
            feasible += 1;
            assert!(verdict.is_feasible(), "missed a completion of {known}");
        } else if projection_gap(&known, &mask, 0.0) > 1e-2 {
            infeasible += 1;
            assert!(!verdict.is_feasible(), "claimed a completion of {known}");
            assert!(verdict.is_infeasible(), "no infeasibility ray for {known}");
        }
    }
    assert!(feasible >= 20 && infeasible >= 20, "unbalanced sample: {feasible} feasible, {infeasible} infeasible");
}

#[test]
fn infeasibility_rays_are_valid_separating_witnesses() {
    // x ≥ 1 and x ≤ -1 as 1x1 blocks, plus a 2x2 block that forces |x| ≤ 1/2.
    let scalar = |c: f64, a: f64| AffineSym { constant: DMatrix::from_element(1, 1, c), coefficients: vec![DMatrix::from_element(1, 1, a)] };
    let disk = AffineSym {
        constant: DMatrix::from_diagonal_element(2, 2, 0.5),
        coefficients: vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
    };
    let blocks = [scalar(-1.0, 1.0), disk];
    match sdp_feasibility(&blocks, None, &SdpOptions::default()).unwrap() {
        SdpVerdict::Infeasible { ray, residual, value, .. } => {
            let trace: f64 = ray.iter().map(|z| z.trace()).sum();
            assert!((trace - 1.0).abs() <= 1e-9);
            for z in &ray {
                assert!(sym_eig(z).unwrap().0.min() >= -1e-9);
            }
            let lin: f64 = blocks.iter().zip(&ray).map(|(b, z)| b.coefficients[0].dot(z)).sum();
            let off: f64 = blocks.iter().zip(&ray).map(|(b, z)| b.constant.dot(z)).sum();
            assert!(lin.abs() <= 1e-7 && residual <= 1e-7);
            assert!(off < 0.0 && (off - value).abs() <= 1e-12);
        }
        other => panic!("expected a ray, got {other:?}"),
    }
}

#[test]
fn extended_drift_matches_plant_and_filter_steps() {
    let (sc, g) = case_study();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    for pattern in 0..sc.num_patterns() {
        let ext = build_extended_system(&sc, pattern, &g).unwrap();
        let c_alpha = &sc.pattern_sets[pattern].c;
        for k in [0usize, 17, 5000, sc.steps - 1] {
            let x = DVector::from_fn(sc.n, |_, _| rng.random_range(-1.0..1.0));
            let xhat = DVector::from_fn(sc.n, |_, _| rng.random_range(-1.0..1.0));
            let disturbance = DVector::from_fn(sc.m, |_, _| rng.random_range(-0.1..0.1));
            let u = &ext.gain * &xhat * 0.5 - g.tracking.r_inv_bt() * &g.tracking.s_fine()[2 * k] * 0.5 + &disturbance;
            let x_next = &x + (&sc.a * &x + &sc.b * &u) * sc.dt;
            let xhat_next = &xhat + (&sc.a * &xhat + &sc.b * &u + &ext.theta * (c_alpha * (&x - &xhat))) * sc.dt;

            let mut xbar = DVector::zeros(2 * sc.n);
            xbar.rows_mut(0, sc.n).copy_from(&x);
            xbar.rows_mut(sc.n, sc.n).copy_from(&xhat);
            let stepped = &xbar + (&ext.a_bar * &xbar + &ext.b_bar * &disturbance + &ext.offset[k]) * sc.dt;
            assert!((stepped.rows(0, sc.n) - &x_next).norm() <= 1e-12);
            assert!((stepped.rows(sc.n, sc.n) - &xhat_next).norm() <= 1e-12);
        }
        let expected_diffusion = DMatrix::from_fn(2 * sc.n, 2 * sc.n, |i, j| match (i < sc.n, j < sc.n) {
            (true, true) => sc.sigma_w[(i, j)],
            (false, false) => (&ext.theta * &sc.pattern_sets[pattern].sigma_v * ext.theta.transpose())[(i - sc.n, j - sc.n)],
            _ => 0.0,
        });
        assert!((ext.diffusion() - expected_diffusion).norm() <= 1e-20);
    }
}

fn safety_certificate(ext: &ExtendedSystem, sc: &ValidatedScenario, gamma: f64) -> resilient_lqg::certify::BarrierCertificate {
    verify_safety(ext, gamma, sc.config().eps_s, sc.unsafe_region(), &SdpOptions::default()).unwrap().expect("certificate at the selected radius")
}

#[test]
fn certificates_survive_an_independent_recheck() {
    let (sc, g) = case_study();
    for pattern in 0..sc.num_patterns() {
        let ext = build_extended_system(&sc, pattern, &g).unwrap();
        let safety = safety_certificate(&ext, &sc, GAMMA);
        let reach = verify_reachability(&ext, GAMMA, sc.config().eps_r, sc.goal_region(), &SdpOptions::default()).unwrap().expect("reachability certificate");
        for cert in [&safety, &reach] {
            let check = recheck_certificate(cert, &ext);
            assert!(check.passes(1e-7, 1e-9), "pattern {pattern} {:?}: {check:?}", cert.kind);
        }
    }
}

#[test]
fn acceptance_is_monotone_in_the_radius() {
    let (sc, g) = case_study();
    let ext = build_extended_system(&sc, 0, &g).unwrap();
    let opts = SdpOptions::default();
    for &(gamma, eps) in &[(0.5, 0.3), (0.2, 0.1), (GAMMA, 0.3), (0.05, 0.05)] {
        let accept = |r: f64| verify_safety(&ext, r, eps, sc.unsafe_region(), &opts).map(|c| c.is_some()).unwrap_or(false);
        if accept(gamma) {
            for shrink in [0.5, 0.25, 0.0] {
                assert!(accept(gamma * shrink), "accepted {gamma} but not {}", gamma * shrink);
            }
        }
    }
}

/// Euler-Maruyama in deviation coordinates, where the certificate lives.
fn barrier_paths(ext: &ExtendedSystem, cert: &resilient_lqg::certify::BarrierCertificate, disturbance: &DVector<f64>, paths: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let checkpoints: Vec<usize> = (0..=ext.steps).step_by(1000).collect();
    let mut values = vec![Vec::with_capacity(paths); checkpoints.len()];
    let mut sups = Vec::with_capacity(paths);
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let drive = &ext.b_bar * disturbance;
    let sq = ext.dt.sqrt();
    for _ in 0..paths {
        let mut delta = DVector::zeros(ext.dim());
        let mut sup = f64::NEG_INFINITY;
        let mut c = 0;
        for k in 0..=ext.steps {
            let d = cert.value(&delta, k as f64 * ext.dt);
            sup = sup.max(d);
            if checkpoints.get(c) == Some(&k) {
                values[c].push(d);
                c += 1;
            }
            let xi = DVector::from_fn(ext.lambda.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            delta = &delta + (&ext.a_bar * &delta + &drive) * ext.dt + &ext.lambda * xi * sq;
        }
        sups.push(sup);
    }
    (values, sups)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn barrier_is_a_supermartingale_under_bounded_disturbances() {
    let (sc, g) = case_study();
    let ext = build_extended_system(&sc, 0, &g).unwrap();
    let cert = safety_certificate(&ext, &sc, GAMMA);
    let d0 = cert.value(&DVector::zeros(ext.dim()), 0.0);
    assert!(d0 <= sc.config().eps_s + 1e-9);
    for dir in [[1.0, 0.0], [0.0, -1.0], [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2]] {
        let disturbance = DVector::from_row_slice(&dir) * GAMMA;
        let paths = 300;
        let (values, sups) = barrier_paths(&ext, &cert, &disturbance, paths);
        for w in values.windows(2) {
            let diffs: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
            let (mean, se) = mean_and_se(&diffs);
            assert!(mean <= 3.0 * se + 1e-12, "mean increment {mean:e} (se {se:e}) along {dir:?}");
        }
        let crossings = sups.iter().filter(|&&s| s >= 1.0).count() as f64 / paths as f64;
        let sigma = (d0.min(1.0) * (1.0 - d0.min(1.0)) / paths as f64).sqrt();
        assert!(crossings <= d0 + 3.0 * sigma, "P(sup D ≥ 1) = {crossings} above D(0) = {d0}");
    }
}

#[test]
fn eta_scales_inversely_with_the_squared_radius() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for _ in 0..200 {
        let (li, lij, kb) = (rng.random_range(1e-9..1.0), rng.random_range(1e-9..1.0), rng.random_range(0.1..10.0));
        let n = rng.random_range(1..6);
        let gamma = rng.random_range(0.01..2.0);
        let base = eta_bound(li, lij, n, kb, gamma).unwrap();
        for j in -6i32..=6 {
            let c = 2f64.powi(j);
            assert_eq!(eta_bound(li, lij, n, kb, gamma * c).unwrap(), base / (c * c));
        }
    }
}

/// Closed-form 2x2 eigenvalues give an independent route to the `η` inputs.
#[test]
fn risk_bounds_match_a_closed_form_oracle() {
    let (sc, g) = case_study();
    let top = |m: &DMatrix<f64>| {
        let half_tr = 0.5 * (m[(0, 0)] + m[(1, 1)]);
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        half_tr + (half_tr * half_tr - det).max(0.0).sqrt()
    };
    let lambda = |f: &resilient_lqg::gains::FilterSchedule| f.phi_fine().iter().map(top).fold(0.0, f64::max);
    let kbar = g.tracking.gain_fine().iter().map(|k| top(&(k.transpose() * k)).sqrt()).fold(0.0, f64::max);
    let cov = CovarianceBounds::from_gains(&sc, &g);
    assert!((cov.kbar - kbar).abs() <= 1e-12 * kbar);
    let p1 = [0.85, 0.9];
    let risk = cov.risk(&p1, GAMMA);
    for i in 0..2 {
        let j = 1 - i;
        let li = lambda(&g.patterns[i]);
        let lij = lambda(g.pair(i, j));
        let eta = 4.0 * (li + lij) * sc.n as f64 * kbar * kbar / (GAMMA * GAMMA);
        assert!((risk.eta[i][j] - eta).abs() <= 1e-10 * eta, "eta[{i}][{j}] {} vs {eta}", risk.eta[i][j]);
        assert_eq!(risk.eta[i][i], 0.0);
        let p2 = (1.0 - risk.eta[i][j]).max(0.0);
        assert_eq!(risk.p2_lower[i], p2);
        assert_eq!(risk.p0_lower[i], p1[i] * p2);
    }
    assert_eq!(p0_lower_bound(0.5, &[0.25, 0.5]), (0.25, 0.125));
    assert_eq!(p0_lower_bound(0.5, &[0.75, 0.5]), (0.0, 0.0));
}
