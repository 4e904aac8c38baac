//! End-to-end acceptance checks on the case study. Prints one line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use resilient_lqg::certify::{
    build_extended_system, default_strategies, divergence_frequency, eta_bound, gamma_selection, mc_verify, p0_lower_bound, verify_reachability,
    verify_safety, BarrierSearch, CertifyOptions, CovarianceBounds, Selection,
};
use resilient_lqg::dual::{default_lambda_grid, dual_control, dual_solution, lambda_sweep};
use resilient_lqg::gains::{compute_gains, integrate_filter_with, nominal_input, FilterSchedule};
use resilient_lqg::harness::{
    case_study_attack, default_workers, monte_carlo, simulate_run, Adversary, Controller, Estimate, Estimate95, SimContext, RMS_WINDOW,
};
use resilient_lqg::model::{validate_scenario, ScenarioConfig, SensorSet, ValidatedScenario};
use resilient_lqg::policy::triangle_split_holds;
use resilient_lqg::qcqp::{bench, check_feasible, solve, BallConstraint, QcqpProblem};
use resilient_lqg::sdp::SdpOptions;

const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

type Check = Result<Outcome, Box<dyn std::error::Error>>;

struct Setup {
    ctx: SimContext,
    selection: Selection<BarrierSearch>,
    workers: usize,
}

fn scenario_file(name: &str) -> ValidatedScenario {
    let path = format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"));
    validate_scenario(&ScenarioConfig::load(&path).expect("scenario file")).expect("valid scenario")
}

fn select(sc: &ValidatedScenario, gains: &resilient_lqg::gains::GainSchedule) -> Selection<BarrierSearch> {
    let cfg = sc.config();
    gamma_selection(sc, gains, cfg.eps_s, cfg.eps_r, 10, &CertifyOptions::default())
        .expect("selection runs")
        .expect("selection terminates")
}

fn proposed(setup: &Setup) -> Controller {
    Controller::Proposed { gammas: setup.selection.gammas.clone() }
}

fn resilience(setup: &Setup) -> Check {
    let start = Instant::now();
    let attack = case_study_attack(&setup.ctx.scenario);
    let s = monte_carlo(&setup.ctx, &proposed(setup), &attack, 200, SEED, setup.workers)?;
    let violation = s.violation.mean;
    let reach = 1.0 - s.goal_miss.mean;
    let elapsed = start.elapsed();
    let pass = violation <= 0.3 && reach >= 0.7 && elapsed <= Duration::from_secs(300);
    Ok(Outcome::new(pass, format!("violation {violation:.3} (≤ 0.3), goal reach {reach:.3} (≥ 0.7), {:.1}s", elapsed.as_secs_f64())))
}

fn baseline_failure(setup: &Setup) -> Check {
    let attack = case_study_attack(&setup.ctx.scenario);
    let s = monte_carlo(&setup.ctx, &Controller::Lqg(Estimate::Full), &attack, 200, SEED, setup.workers)?;
    let failed = s.metrics.iter().filter(|m| m.safety_violated || !m.reached_goal).count() as f64 / 200.0;
    Ok(Outcome::new(failed >= 0.5, format!("full-sensor LQG fails in {failed:.3} of runs (≥ 0.5)")))
}

fn attack_free_tracking(setup: &Setup) -> Check {
    let runs = 50;
    let none = Adversary::none();
    let rms = |c: &Controller| -> Result<Vec<f64>, resilient_lqg::harness::HarnessError> {
        Ok(monte_carlo(&setup.ctx, c, &none, runs, SEED, setup.workers)?.metrics.iter().map(|m| m.rms_tracking_error).collect())
    };
    let ours = rms(&proposed(setup))?;
    let mut pass = true;
    let mut parts = Vec::new();
    for i in 0..setup.ctx.scenario.num_patterns() {
        let other = rms(&Controller::Lqg(Estimate::Pattern(i)))?;
        let wins = ours.iter().zip(&other).filter(|(a, b)| a <= b).count();
        pass &= wins as f64 >= 0.8 * runs as f64;
        parts.push(format!("vs LQG excluding {}: {wins}/{runs}", i + 1));
    }
    Ok(Outcome::new(pass, format!("{} paired runs at or below over {RMS_WINDOW} steps (≥ 80%)", parts.join(", "))))
}

fn cost_convergence(setup: &Setup) -> Check {
    let runs = 50;
    let attack = case_study_attack(&setup.ctx.scenario);
    let mean_ln = |c: &Controller| -> Result<f64, resilient_lqg::harness::HarnessError> {
        let s = monte_carlo(&setup.ctx, c, &attack, runs, SEED, setup.workers)?;
        Ok(s.metrics.iter().map(|m| m.total_cost.ln()).sum::<f64>() / runs as f64)
    };
    let ours = mean_ln(&proposed(setup))?;
    let full = mean_ln(&Controller::Lqg(Estimate::Full))?;
    let second = mean_ln(&Controller::Lqg(Estimate::Pattern(1)))?;
    let (gap, spread) = ((ours - second).abs(), (full - second).abs());
    Ok(Outcome::new(
        gap <= 0.1 * spread,
        format!("mean ln J: proposed {ours:.4}, full {full:.4}, excluding 2 {second:.4}; gap {gap:.2e} vs 0.1 x {spread:.3}"),
    ))
}

fn qcqp_oracle(_: &Setup) -> Check {
    let start = Instant::now();
    let r = bench::run_suite(1000, 4, 20_000, SEED);
    let elapsed = start.elapsed();
    let pass = r.failures == 0
        && r.max_relative_gap <= 1e-3
        && r.max_sampling_excess <= 1e-3
        && r.max_feasibility_violation <= 1e-9
        && r.max_kkt_residual <= 1e-8
        && elapsed <= Duration::from_secs(60);
    Ok(Outcome::new(
        pass,
        format!(
            "gap {:.1e}, sampling excess {:.1e}, feasibility {:.1e}, KKT {:.1e}, {} failures, {:.1}s",
            r.max_relative_gap,
            r.max_sampling_excess,
            r.max_feasibility_violation,
            r.max_kkt_residual,
            r.failures,
            elapsed.as_secs_f64()
        ),
    ))
}

fn relative_change(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn step_halving(setup: &Setup) -> Check {
    let coarse = &setup.ctx.scenario;
    let fine = coarse.with_dt(coarse.dt / 2.0)?;
    let (gc, gf) = (&setup.ctx.gains, compute_gains(&fine)?);
    let terminal = |f: &FilterSchedule| f.phi(f.steps()).clone();
    let coarse_filters = std::iter::once(&gc.full).chain(&gc.patterns).chain(gc.pairs.iter().map(|(_, f)| f));
    let fine_filters = std::iter::once(&gf.full).chain(&gf.patterns).chain(gf.pairs.iter().map(|(_, f)| f));
    let phi = coarse_filters.zip(fine_filters).map(|(a, b)| relative_change(&terminal(a), &terminal(b))).fold(0.0, f64::max);
    let p = relative_change(gc.tracking.p(0), gf.tracking.p(0));

    let single = scenario_file("case_study_single.json");
    let single_fine = single.with_dt(single.dt / 2.0)?;
    let (gs, gsf) = (compute_gains(&single)?, compute_gains(&single_fine)?);
    let mut p_dual = 0.0f64;
    for lambda in [0.0, 1e-2, 1.0, 10.0] {
        let a = dual_solution(&single, &gs, lambda, 0.078125)?;
        let b = dual_solution(&single_fine, &gsf, lambda, 0.078125)?;
        p_dual = p_dual.max(relative_change(a.p(0), b.p(0)));
    }

    let one = DMatrix::from_element(1, 1, 1.0);
    let zero = DMatrix::from_element(1, 1, 0.0);
    let sensors = SensorSet::new(&one, &one, &[])?;
    let scalar = integrate_filter_with(&zero, &one, &one, &sensors, 1e-3, 5000)?;
    let tanh_err = (0..=5000).map(|k| (scalar.phi(k)[(0, 0)] - (k as f64 * 1e-3).tanh()).abs()).fold(0.0, f64::max);

    let pass = phi <= 1e-6 && p <= 1e-6 && p_dual <= 1e-6 && tanh_err <= 1e-6;
    Ok(Outcome::new(pass, format!("Φ(T) {phi:.1e}, P(0) {p:.1e}, dual P(0) {p_dual:.1e}, tanh {tanh_err:.1e} (all ≤ 1e-6)")))
}

fn certificate_soundness(setup: &Setup) -> Check {
    let sc = &setup.ctx.scenario;
    let (eps_s, eps_r) = (sc.config().eps_s, sc.config().eps_r);
    let runs = 500;
    let strategies = default_strategies(sc.m);
    let mut pass = strategies.len() == 10;
    let (mut worst_unsafe, mut worst_miss) = (0.0f64, 0.0f64);
    let mut checked = 0;
    for (i, witness) in setup.selection.witnesses.iter().enumerate() {
        if witness.is_none() {
            continue;
        }
        checked += 1;
        let ext = build_extended_system(sc, i, &setup.ctx.gains)?;
        let report = mc_verify(sc, &ext, setup.selection.gammas[i], &strategies, runs, SEED + i as u64, setup.workers)?;
        for o in &report.outcomes {
            worst_unsafe = worst_unsafe.max(o.unsafe_freq.mean);
            worst_miss = worst_miss.max(o.goal_miss_freq.mean);
            pass &= o.unsafe_freq.mean <= eps_s + 3.0 * Estimate95::binomial_sigma(eps_s, runs);
            pass &= o.goal_miss_freq.mean <= eps_r + 3.0 * Estimate95::binomial_sigma(eps_r, runs);
        }
    }
    pass &= checked > 0;
    Ok(Outcome::new(
        pass,
        format!("{checked} certified patterns x {} strategies x {runs} runs: worst unsafe {worst_unsafe:.3}, worst goal miss {worst_miss:.3}", strategies.len()),
    ))
}

fn monotonicity(setup: &Setup) -> Check {
    let sc = &setup.ctx.scenario;
    let opts = SdpOptions::default();
    let mut accepted = 0;
    let mut failures = Vec::new();
    let mut combos = 0;
    for pattern in 0..sc.num_patterns() {
        let ext = build_extended_system(sc, pattern, &setup.ctx.gains)?;
        let accept = |g: f64| -> bool {
            let safe = verify_safety(&ext, g, sc.config().eps_s, sc.unsafe_region(), &opts);
            let reach = verify_reachability(&ext, g, sc.config().eps_r, sc.goal_region(), &opts);
            matches!((safe, reach), (Ok(Some(_)), Ok(Some(_))))
        };
        for gamma in [0.02, 0.078125, 0.2, 0.5, 1.0] {
            combos += 1;
            if accept(gamma) {
                accepted += 1;
                if !accept(gamma / 2.0) {
                    failures.push((pattern + 1, gamma));
                }
            }
        }
    }
    Ok(Outcome::new(
        failures.is_empty() && accepted > 0,
        format!("{combos} combinations, {accepted} accepted, failures {failures:?}"),
    ))
}

fn risk_arithmetic(setup: &Setup) -> Check {
    let sc = &setup.ctx.scenario;
    let sel = &setup.selection;
    let cov = CovarianceBounds::from_gains(sc, &setup.ctx.gains);
    let q = sc.num_patterns();
    let g = sel.gamma_min;
    let mut exact = true;
    for i in 0..q {
        let mut row = Vec::new();
        for j in (0..q).filter(|&j| j != i) {
            let oracle = 4.0 * (cov.lambda_patterns[i] + cov.lambda_pairs[i][j]) * sc.n as f64 * cov.kbar * cov.kbar / (g * g);
            let direct = eta_bound(cov.lambda_patterns[i], cov.lambda_pairs[i][j], sc.n, cov.kbar, g)?;
            exact &= oracle.to_bits() == direct.to_bits() && oracle.to_bits() == sel.bounds.eta[i][j].to_bits();
            row.push(oracle);
        }
        let p2 = (1.0 - row.iter().sum::<f64>()).max(0.0);
        let p0 = sel.p1_targets[i] * p2;
        let (lib_p2, lib_p0) = p0_lower_bound(sel.p1_targets[i], &row);
        exact &= p2.to_bits() == lib_p2.to_bits() && p0.to_bits() == lib_p0.to_bits();
        exact &= p0.to_bits() == sel.bounds.p0_lower[i].to_bits();
    }

    let runs = 500;
    let freqs = divergence_frequency(&setup.ctx, g, runs, SEED, setup.workers)?;
    let mut within = true;
    let mut parts = Vec::new();
    for f in &freqs {
        let eta = sel.bounds.eta[f.pattern][f.other];
        let sigma = Estimate95::binomial_sigma(eta.min(1.0), runs);
        within &= f.frequency.mean <= eta + 3.0 * sigma;
        parts.push(format!("({},{}) {:.3} vs η {eta:.3}", f.pattern + 1, f.other + 1, f.frequency.mean));
    }
    Ok(Outcome::new(exact && within, format!("bit-exact {exact}; divergence frequency {}", parts.join(", "))))
}

fn dual_consistency(_: &Setup) -> Check {
    let ctx = SimContext::new(scenario_file("case_study_single.json"))?;
    let sel = select(&ctx.scenario, &ctx.gains);
    let gamma = sel.gammas[0];
    let workers = default_workers();
    let table = lambda_sweep(&ctx, gamma, &default_lambda_grid(), &Adversary::none(), 50, SEED, workers)?;
    let zero = &table.rows[0];
    let overlap = (zero.v3.mean - table.v2.mean).abs() <= zero.v3.half_width + table.v2.half_width;
    let lower = table.rows.iter().all(|r| r.diff_vs_v2.mean >= -r.diff_vs_v2.half_width);

    // λ = 0 against the QCQP solution wherever the unconstrained minimizer is interior.
    let sc = &ctx.scenario;
    let sol = dual_solution(sc, &ctx.gains, 0.0, gamma)?;
    let (trace, _) = simulate_run(&ctx, &Controller::Dual(std::sync::Arc::new(sol.clone())), &Adversary::none(), SEED, 0)?;
    let tr = &ctx.gains.tracking;
    let (mut interior, mut worst) = (0, 0.0f64);
    for k in 0..sc.steps {
        let xt = sol.augmented_state(&trace.xhat_full[k], &trace.xhat_patterns[0][k], k);
        let u = dual_control(&sol, &xt, k)?;
        let lin = sc.b.transpose() * (tr.p(k) * &trace.xhat_full[k] + tr.s(k));
        let center = nominal_input(tr, &trace.xhat_patterns[0][k], k)?;
        let problem = QcqpProblem { r: sc.r.clone(), lin, balls: vec![BallConstraint::new(center.clone(), gamma, 0)] };
        let free = problem.unconstrained_minimizer();
        if (&free - &center).norm() < gamma {
            interior += 1;
            let qp = solve(&problem)?.u;
            worst = worst.max((&u - &qp).norm());
        }
    }
    let matches = interior > 0 && worst <= 1e-8;
    Ok(Outcome::new(
        overlap && lower && matches,
        format!(
            "γ {gamma}; V3(0) {:.5} ± {:.1e} vs V2 {:.5} ± {:.1e}; V2 ≤ V3(λ) + CI on all {} λ: {lower}; λ=0 vs QCQP on {interior} interior steps: {worst:.1e}",
            zero.v3.mean,
            zero.v3.half_width,
            table.v2.mean,
            table.v2.half_width,
            table.rows.len()
        ),
    ))
}

fn split_logic(_: &Setup) -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let trials = 1_000_000;
    let (mut split_cex, mut ball_cex, mut hypothesis) = (0, 0, 0);
    for _ in 0..trials {
        let m = rng.random_range(1..=4);
        let n = rng.random_range(1..=4);
        let gamma = rng.random_range(0.05..2.0);

        // A pair estimate disagreeing with both single estimates by a combined amount.
        let k = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let a = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let b = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let (ka, kb) = (&k * &a * 0.25, &k * &b * 0.25);
        if (&ka + &kb).norm() > gamma && ka.norm() <= 0.5 * gamma && kb.norm() <= 0.5 * gamma {
            split_cex += 1;
        }

        let q = rng.random_range(2..=4);
        let spread = rng.random_range(0.2..1.5) * gamma;
        let centers: Vec<DVector<f64>> = (0..q).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-spread..spread))).collect();
        if !triangle_split_holds(&centers, gamma) {
            hypothesis += 1;
            let balls: Vec<BallConstraint> =
                centers.iter().enumerate().map(|(i, c)| BallConstraint::new(c.clone(), gamma * rng.random_range(1.0..1.5), i)).collect();
            if check_feasible(&balls).is_empty() {
                ball_cex += 1;
            }
        }
    }
    Ok(Outcome::new(
        split_cex == 0 && ball_cex == 0 && hypothesis > trials / 10,
        format!("{trials} instances: {split_cex} split counterexamples, {ball_cex} empty intersections among {hypothesis} unsplit instances"),
    ))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let ctx = SimContext::new(scenario_file("case_study.json")).expect("case-study gains");
    let selection = select(&ctx.scenario, &ctx.gains);
    println!(
        "selected radii {:?} (γ_min {}, P0 lower {:?}) after {} iterations in {:.1}s",
        selection.gammas,
        selection.gamma_min,
        selection.bounds.p0_lower,
        selection.iterations,
        start.elapsed().as_secs_f64()
    );
    let setup = Setup { ctx, selection, workers: default_workers() };

    let criteria: [(&str, fn(&Setup) -> Check); 11] = [
        ("case-study resilience", resilience),
        ("baseline failure", baseline_failure),
        ("attack-free tracking", attack_free_tracking),
        ("cost convergence", cost_convergence),
        ("QCQP oracle equivalence", qcqp_oracle),
        ("Riccati and filter convergence", step_halving),
        ("certificate soundness", certificate_soundness),
        ("radius monotonicity", monotonicity),
        ("risk-bound arithmetic", risk_arithmetic),
        ("dual consistency", dual_consistency),
        ("split and ball-existence logic", split_logic),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (verdict, detail) = match check(&setup) {
            Ok(o) => (if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} {verdict} {name}: {detail} [{:.1}s]", i + 1, t.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed in {:.1}s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
