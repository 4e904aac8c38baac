use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use resilient_lqg::harness::{case_study_attack, monte_carlo, simulate_run, Adversary, Controller, SimContext};
use resilient_lqg::model::{validate_scenario, ScenarioConfig};
use resilient_lqg::policy::triangle_split_holds;
use resilient_lqg::qcqp::bench::{random_instance, sampling_reference};
use resilient_lqg::qcqp::{check_feasible, solve, BallConstraint, QcqpProblem};

fn instance(seed: u64) -> QcqpProblem {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=4);
    let q = rng.random_range(1..=4);
    random_instance(&mut rng, m, q)
}

#[test]
fn solver_beats_every_sampled_feasible_point() {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    for seed in 0..1000 {
        let p = instance(seed);
        let sol = solve(&p).unwrap();
        let value = p.objective(&sol.u);
        if let Some((_, best)) = sampling_reference(&mut rng, &p, 100_000) {
            assert!(value <= best + 1e-9, "instance {seed}: {value} > sampled {best}");
        }
        assert!(p.max_violation(&sol.u) <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scaling_the_objective_keeps_the_argmin(seed in 0u64..1_000_000, c in 0.01f64..100.0) {
        let p = instance(seed);
        let scaled = QcqpProblem { r: &p.r * c, lin: &p.lin * c, balls: p.balls.clone() };
        let u1 = solve(&p).unwrap().u;
        let uc = solve(&scaled).unwrap().u;
        prop_assert!((uc - u1).norm() <= 1e-7);
    }

    #[test]
    fn shrinking_a_ball_never_lowers_the_optimum(seed in 0u64..1_000_000, which in 0usize..4, shrink in 0.5f64..1.0) {
        let p = instance(seed);
        let i = which % p.balls.len();
        let mut tighter = p.clone();
        tighter.balls[i].radius *= shrink;
        if check_feasible(&tighter.balls).is_empty() {
            return Ok(());
        }
        let loose = p.objective(&solve(&p).unwrap().u);
        let tight = tighter.objective(&solve(&tighter).unwrap().u);
        prop_assert!(tight >= loose - 1e-9 * (1.0 + loose.abs()));
    }

    #[test]
    fn single_ball_with_exterior_minimizer_is_active(seed in 0u64..1_000_000) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let m = rng.random_range(1..=4);
        let mut p = random_instance(&mut rng, m, 1);
        let free = p.unconstrained_minimizer();
        p.balls[0].center = &free + DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let gap = (&free - &p.balls[0].center).norm();
        p.balls[0].radius = 0.5 * gap;
        let u = solve(&p).unwrap().u;
        prop_assert!(((&u - &p.balls[0].center).norm() - p.balls[0].radius).abs() <= 1e-9);
    }

    #[test]
    fn half_sums_split_across_the_triangle_inequality(
        a in prop::collection::vec(-5.0f64..5.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
        k in prop::collection::vec(-5.0f64..5.0, 6),
        gamma in 0.01f64..5.0,
    ) {
        let k = DMatrix::from_column_slice(2, 3, &k);
        let (ka, kb) = (&k * DVector::from_vec(a) * 0.25, &k * DVector::from_vec(b) * 0.25);
        if (&ka + &kb).norm() > gamma {
            prop_assert!(ka.norm() > 0.5 * gamma || kb.norm() > 0.5 * gamma);
        }
    }
}

/// Centers whose farthest pair is within `2γ` and whose midpoint is within `γ` of
/// every center always yield a common point.
#[test]
fn close_centers_always_share_a_point() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let gamma = 1.0;
    let mut hypothesis_hits = 0;
    for _ in 0..20_000 {
        let m = rng.random_range(1..=4);
        let q = rng.random_range(2..=4);
        let centers: Vec<DVector<f64>> = (0..q).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-1.2..1.2))).collect();
        let balls: Vec<BallConstraint> = centers.iter().enumerate().map(|(i, c)| BallConstraint::new(c.clone(), gamma, i)).collect();
        if !triangle_split_holds(&centers, gamma) {
            hypothesis_hits += 1;
            assert!(!check_feasible(&balls).is_empty(), "centers {centers:?}");
        }
    }
    assert!(hypothesis_hits > 1000, "generator rarely meets the hypothesis ({hypothesis_hits})");
}

fn case_study_context() -> SimContext {
    SimContext::new(validate_scenario(&ScenarioConfig::case_study()).unwrap()).unwrap()
}

#[test]
fn attacked_runs_keep_nested_survivors_and_feasible_inputs() {
    let ctx = case_study_context();
    let controller = Controller::Proposed { gammas: vec![0.078125, 0.078125] };
    let attack = case_study_attack(&ctx.scenario);
    for run in 0..5 {
        let (trace, metrics) = simulate_run(&ctx, &controller, &attack, 3, run).unwrap();
        for w in trace.surviving.windows(2) {
            assert!(w[1].iter().all(|i| w[0].contains(i)), "surviving set grew");
        }
        assert!(metrics.max_ball_excess <= 1e-9);
        assert!(trace.empty_steps.iter().all(|&(_, split)| split), "empty intersection without the split condition");
        for a in &trace.a {
            assert!(a.iter().enumerate().all(|(s, v)| s == 3 || *v == 0.0));
        }
    }
}

#[test]
fn attack_free_false_eliminations_stay_below_the_eta_bound() {
    let ctx = case_study_context();
    let sc = &ctx.scenario;
    let cov = resilient_lqg::certify::CovarianceBounds::from_gains(sc, &ctx.gains);
    let gammas = vec![0.078125, 0.078125];
    let eta = cov.eta(0.078125);
    let bound = (0..2).map(|i| (0..2).filter(|&j| j != i).map(|j| eta[i][j]).sum::<f64>()).fold(0.0, f64::max);
    let runs = 200;
    let summary = monte_carlo(&ctx, &Controller::Proposed { gammas }, &Adversary::none(), runs, 17, 1).unwrap();
    let eliminated = summary.metrics.iter().filter(|m| !m.eliminated.is_empty()).count();
    let freq = eliminated as f64 / runs as f64;
    let sigma = resilient_lqg::harness::Estimate95::binomial_sigma(bound.min(1.0), runs);
    assert!(freq <= bound + 1.645 * sigma, "false elimination rate {freq} vs bound {bound}");
}
