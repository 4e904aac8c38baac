mod args;
mod plot;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde_json::json;

use resilient_lqg::certify::{self, CertifyOptions};
use resilient_lqg::dual;
use resilient_lqg::harness::{self, Adversary, Controller, SimContext};
use resilient_lqg::model::{validate_scenario, ScenarioConfig, ValidatedScenario};
use resilient_lqg::qcqp::bench;

use args::{Cli, Command, Common, Format, QcqpCommand};

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(a) => simulate(&a.common, &a.controller, &a.attack, a.gammas.as_deref(), a.dump_gains.as_deref()),
        Command::Montecarlo(a) => montecarlo(&a.common, &a.controller, &a.attack, a.gammas.as_deref(), a.runs),
        Command::Compare(a) => compare(&a.common, &a.attack, a.gammas.as_deref(), a.runs),
        Command::Certify(a) => certify_cmd(&a),
        Command::Dual(a) => dual_cmd(&a),
        Command::Casestudy(a) => casestudy(&a),
        Command::Qcqp { command: QcqpCommand::Bench(a) } => {
            let r = bench::run_suite(a.instances, a.max_dim, a.samples, a.seed);
            println!("{}", serde_json::to_string_pretty(&r)?);
            if r.failures > 0 {
                bail!("{} instances failed", r.failures);
            }
            Ok(())
        }
    }
}

fn load_scenario(common: &Common) -> Result<ValidatedScenario> {
    let cfg = ScenarioConfig::load(&common.scenario).with_context(|| format!("loading {}", common.scenario.display()))?;
    let sc = validate_scenario(&cfg)?;
    match common.dt {
        Some(dt) => Ok(sc.with_dt(dt)?),
        None => Ok(sc),
    }
}

fn context(common: &Common) -> Result<SimContext> {
    Ok(SimContext::new(load_scenario(common)?)?)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(common.out.clone())
}

/// Radii from `--gammas` when given, otherwise from the certificate-based selection.
fn resolve_gammas(ctx: &SimContext, gammas: Option<&str>) -> Result<Vec<f64>> {
    if let Some(list) = gammas {
        let g = args::parse_floats(list)?;
        if g.len() != ctx.scenario.num_patterns() {
            bail!("--gammas has {} entries for {} patterns", g.len(), ctx.scenario.num_patterns());
        }
        return Ok(g);
    }
    let sc = &ctx.scenario;
    let sel = certify::gamma_selection(sc, &ctx.gains, sc.eps_s(), sc.eps_r(), 10, &CertifyOptions::default())?
        .context("radius selection did not reach the target probability; pass --gammas")?;
    eprintln!("selected radii {:?}", sel.gammas);
    Ok(sel.gammas)
}

fn simulate(common: &Common, controller: &str, attack: &str, gammas: Option<&str>, dump_gains: Option<&Path>) -> Result<()> {
    let ctx = context(common)?;
    if let Some(path) = dump_gains {
        report::write_gains(path, &ctx)?;
    }
    let adversary = args::parse_attack(attack, &ctx.scenario)?;
    let controller = build_controller(&ctx, controller, gammas)?;
    let (trace, metrics) = harness::simulate(&ctx, &controller, &adversary, common.seed)?;
    let dir = out_dir(common)?;
    match common.format {
        Format::Csv => report::write_trace(&dir.join("trace.csv"), &ctx.scenario, &trace)?,
        Format::Json => fs::write(dir.join("trace.json"), serde_json::to_string(&report::trace_json(&trace))?)?,
    }
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn build_controller(ctx: &SimContext, name: &str, gammas: Option<&str>) -> Result<Controller> {
    match args::parse_controller(name, ctx.scenario.num_patterns())? {
        args::ControllerChoice::Proposed => Ok(Controller::Proposed { gammas: resolve_gammas(ctx, gammas)? }),
        args::ControllerChoice::Lqg(e) => Ok(Controller::Lqg(e)),
    }
}

fn montecarlo(common: &Common, controller: &str, attack: &str, gammas: Option<&str>, runs: usize) -> Result<()> {
    let ctx = context(common)?;
    let adversary = args::parse_attack(attack, &ctx.scenario)?;
    let controller = build_controller(&ctx, controller, gammas)?;
    let summary = harness::monte_carlo(&ctx, &controller, &adversary, runs, common.seed, common.workers())?;
    let dir = out_dir(common)?;
    match common.format {
        Format::Csv => report::write_run_metrics(&dir.join("runs.csv"), &summary.metrics)?,
        Format::Json => fs::write(dir.join("montecarlo.json"), serde_json::to_string_pretty(&summary)?)?,
    }
    println!("{}", serde_json::to_string_pretty(&report::summary_json(&summary))?);
    Ok(())
}

fn compare(common: &Common, attack: &str, gammas: Option<&str>, runs: usize) -> Result<()> {
    let ctx = context(common)?;
    let adversary = args::parse_attack(attack, &ctx.scenario)?;
    let controllers = harness::standard_controllers(&ctx.scenario, resolve_gammas(&ctx, gammas)?);
    let cmp = harness::compare_controllers(&ctx, &controllers, &adversary, runs, common.seed, common.workers())?;
    let dir = out_dir(common)?;
    report::write_series(&dir, "compare", &ctx.scenario, &cmp)?;
    if common.plot {
        plot::write_figures(&dir, "compare", &ctx.scenario, &cmp)?;
    }
    let summaries: Vec<_> = cmp.summaries.iter().map(report::summary_json).collect();
    println!("{}", serde_json::to_string_pretty(&summaries)?);
    Ok(())
}

fn certify_cmd(a: &args::CertifyArgs) -> Result<()> {
    let ctx = context(&a.common)?;
    let sc = &ctx.scenario;
    let opts = CertifyOptions { gamma0: a.gamma0, rho: a.rho, rho_reach: None, ..CertifyOptions::default() };
    let eps_s = a.eps_s.unwrap_or(sc.eps_s());
    let eps_r = a.eps_r.unwrap_or(sc.eps_r());
    let Some(sel) = certify::gamma_selection(sc, &ctx.gains, eps_s, eps_r, a.iter_times, &opts)? else {
        bail!("radius selection did not reach 1 - max(eps_s, eps_r) within {} iterations", a.iter_times);
    };
    let mut verification = Vec::new();
    if a.mc_runs > 0 {
        let strategies = certify::default_strategies(sc.m);
        for i in 0..sc.num_patterns() {
            let ext = certify::build_extended_system(sc, i, &ctx.gains)?;
            verification.push(certify::mc_verify(sc, &ext, sel.gammas[i], &strategies, a.mc_runs, a.common.seed, a.common.workers())?);
        }
    }
    let bundle = report::certificate_bundle(&sel, &verification);
    let dir = out_dir(&a.common)?;
    let path = dir.join("certificate.json");
    fs::write(&path, serde_json::to_string_pretty(&bundle)?)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "gamma_i": sel.gammas,
            "gamma_min": sel.gamma_min,
            "p0_lower": sel.bounds.p0_lower,
            "iterations": sel.iterations,
            "bundle": path,
        }))?
    );
    Ok(())
}

fn dual_cmd(a: &args::DualArgs) -> Result<()> {
    let ctx = context(&a.common)?;
    if ctx.scenario.num_patterns() != 1 {
        bail!("the dual controller needs a scenario with exactly one attack pattern");
    }
    let gamma = resolve_gammas(&ctx, a.gamma.map(|g| g.to_string()).as_deref())?[0];
    let grid = match &a.lambda_grid {
        Some(list) => args::parse_floats(list)?,
        None => dual::default_lambda_grid(),
    };
    let adversary = args::parse_attack(&a.attack, &ctx.scenario)?;
    let table = dual::lambda_sweep(&ctx, gamma, &grid, &adversary, a.runs, a.common.seed, a.common.workers())?;
    let dir = out_dir(&a.common)?;
    match a.common.format {
        Format::Csv => report::write_sweep(&dir.join("dual.csv"), &table)?,
        Format::Json => fs::write(dir.join("dual.json"), serde_json::to_string_pretty(&table)?)?,
    }
    let mut w = csv::Writer::from_writer(std::io::stdout());
    report::sweep_rows(&mut w, &table)?;
    eprintln!("V2 = {:.6e} ± {:.1e}, best lambda {:?}", table.v2.mean, table.v2.half_width, table.best_lambda);
    Ok(())
}

fn casestudy(a: &args::CaseStudyArgs) -> Result<()> {
    let ctx = context(&a.common)?;
    let gammas = resolve_gammas(&ctx, a.gammas.as_deref())?;
    let controllers = harness::standard_controllers(&ctx.scenario, gammas);
    let dir = out_dir(&a.common)?;
    let workers = a.common.workers();
    let runs = [(Adversary::none(), "attack_free"), (harness::case_study_attack(&ctx.scenario), "attacked")];
    let mut summary = Vec::new();
    for (adversary, label) in runs {
        let cmp = harness::compare_controllers(&ctx, &controllers, &adversary, a.runs, a.common.seed, workers)?;
        report::write_series(&dir, label, &ctx.scenario, &cmp)?;
        if a.common.plot {
            plot::write_figures(&dir, label, &ctx.scenario, &cmp)?;
        }
        summary.push(json!({
            "adversary": label,
            "summaries": cmp.summaries.iter().map(report::summary_json).collect::<Vec<_>>(),
        }));
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
