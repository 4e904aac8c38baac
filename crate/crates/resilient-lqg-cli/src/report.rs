//! CSV and JSON writers for the command outputs.

use std::io::Write;
use std::path::Path;

use anyhow::Result;
use serde_json::{json, Value};

use resilient_lqg::certify::{BarrierCertificate, BarrierSearch, McVerification, RegionTerm, Selection};
use resilient_lqg::dual::SweepTable;
use resilient_lqg::harness::{Comparison, MonteCarloSummary, RunMetrics, SimContext, SimTrace};
use resilient_lqg::model::ValidatedScenario;
use resilient_lqg::{Matrix, Vector};

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn push_vector(rec: &mut Vec<String>, v: &Vector) {
    rec.extend(v.iter().map(|x| x.to_string()));
}

/// `t, vec(P), vec(K), s` per grid step, with `vec` in row-major order.
pub fn write_gains(path: &Path, ctx: &SimContext) -> Result<()> {
    let sc = &ctx.scenario;
    let tr = &ctx.gains.tracking;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..sc.n).flat_map(|i| (0..sc.n).map(move |j| format!("P_{}{}", i + 1, j + 1))));
    header.extend((0..sc.m).flat_map(|i| (0..sc.n).map(move |j| format!("K_{}{}", i + 1, j + 1))));
    header.extend((0..sc.n).map(|i| format!("s_{}", i + 1)));
    w.write_record(&header)?;
    for k in 0..=sc.steps {
        let mut rec = vec![sc.time(k).to_string()];
        rec.extend(rows(tr.p(k)).into_iter().flatten().map(|v| v.to_string()));
        rec.extend(rows(tr.gain(k)).into_iter().flatten().map(|v| v.to_string()));
        push_vector(&mut rec, tr.s(k));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn surviving_label(set: &[usize]) -> String {
    set.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(";")
}

pub fn write_trace(path: &Path, sc: &ValidatedScenario, trace: &SimTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=sc.n).map(|i| format!("x{i}")));
    header.extend((1..=sc.m).map(|i| format!("u{i}")));
    header.extend((1..=sc.p).map(|i| format!("a{i}")));
    header.extend((1..=sc.n).map(|i| format!("xhat_full_{i}")));
    for p in 1..=sc.num_patterns() {
        header.extend((1..=sc.n).map(|i| format!("xhat_excl{p}_{i}")));
    }
    for ((a, b), _) in &sc.pair_sets {
        header.extend((1..=sc.n).map(|i| format!("xhat_excl{}{}_{i}", a + 1, b + 1)));
    }
    header.push("surviving_set".into());
    header.push("running_cost".into());
    w.write_record(&header)?;
    let zeros_u = Vector::zeros(sc.m);
    for k in 0..trace.t.len() {
        let mut rec = vec![trace.t[k].to_string()];
        push_vector(&mut rec, &trace.x[k]);
        // No input is applied at the final grid point.
        push_vector(&mut rec, trace.u.get(k).unwrap_or(&zeros_u));
        push_vector(&mut rec, &trace.a[k]);
        push_vector(&mut rec, &trace.xhat_full[k]);
        for bank in trace.xhat_patterns.iter().chain(&trace.xhat_pairs) {
            push_vector(&mut rec, &bank[k]);
        }
        rec.push(trace.surviving.get(k).map_or_else(String::new, |s| surviving_label(s)));
        rec.push(trace.running_cost[k].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_json(trace: &SimTrace) -> Value {
    let vecs = |v: &[Vector]| v.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>();
    json!({
        "t": trace.t,
        "x": vecs(&trace.x),
        "u": vecs(&trace.u),
        "a": vecs(&trace.a),
        "xhat_full": vecs(&trace.xhat_full),
        "xhat_patterns": trace.xhat_patterns.iter().map(|b| vecs(b)).collect::<Vec<_>>(),
        "xhat_pairs": trace.xhat_pairs.iter().map(|b| vecs(b)).collect::<Vec<_>>(),
        "surviving_set": trace.surviving.iter().map(|s| s.iter().map(|i| i + 1).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "running_cost": trace.running_cost,
    })
}

pub fn write_run_metrics(path: &Path, metrics: &[RunMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "total_cost", "safety_violated", "first_violation_step", "reached_goal", "rms_tracking_error", "eliminated", "max_ball_excess"])?;
    for (run, m) in metrics.iter().enumerate() {
        w.write_record([
            run.to_string(),
            m.total_cost.to_string(),
            m.safety_violated.to_string(),
            m.first_violation_step.map_or_else(String::new, |s| s.to_string()),
            m.reached_goal.to_string(),
            m.rms_tracking_error.to_string(),
            surviving_label(&m.eliminated),
            m.max_ball_excess.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary without the per-run records.
pub fn summary_json(s: &MonteCarloSummary) -> Value {
    json!({
        "controller": s.controller,
        "runs": s.runs,
        "cost": s.cost,
        "violation": s.violation,
        "goal_miss": s.goal_miss,
    })
}

/// Tracking error, log running cost and run-0 trajectories, one column per controller.
pub fn write_series(dir: &Path, label: &str, sc: &ValidatedScenario, cmp: &Comparison) -> Result<()> {
    let names: Vec<&str> = cmp.series.iter().map(|s| s.controller.as_str()).collect();
    for (suffix, pick) in [
        ("tracking_error", (|s: &resilient_lqg::harness::FigureSeries| &s.tracking_error) as fn(&_) -> &Vec<f64>),
        ("ln_cost", |s| &s.ln_running_cost),
    ] {
        let mut w = csv::Writer::from_path(dir.join(format!("{label}_{suffix}.csv")))?;
        let mut header = vec!["step".to_string(), "t".to_string()];
        header.extend(names.iter().map(|n| n.to_string()));
        w.write_record(&header)?;
        for k in 0..=sc.steps {
            let mut rec = vec![k.to_string(), sc.time(k).to_string()];
            rec.extend(cmp.series.iter().map(|s| pick(s)[k].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    let mut w = csv::Writer::from_path(dir.join(format!("{label}_trajectories.csv")))?;
    let mut header = vec!["step".to_string()];
    for n in &names {
        header.extend((1..=sc.n).map(|i| format!("{n}_x{i}")));
    }
    w.write_record(&header)?;
    for k in 0..=sc.steps {
        let mut rec = vec![k.to_string()];
        for s in &cmp.series {
            rec.extend(s.trajectory[k].iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn certificate_json(c: &BarrierCertificate) -> Value {
    let region = match &c.region {
        RegionTerm::Clearance(d) => json!({ "clearance": d }),
        RegionTerm::Goal(_) => json!({ "goal": "terminal" }),
    };
    json!({
        "kind": c.kind,
        "gamma": c.gamma,
        "eps": c.eps,
        "quad": rows(&c.quad),
        "lin": c.lin.as_slice(),
        "offset": c.offset,
        "slope": c.slope,
        "region_multiplier": c.region_multiplier,
        "disturbance_multiplier": c.disturbance_multiplier,
        "region": region,
        "grams": c.grams.iter().map(|(label, g)| json!({ "label": label, "matrix": rows(g) })).collect::<Vec<_>>(),
    })
}

pub fn certificate_bundle(sel: &Selection<BarrierSearch>, verification: &[McVerification]) -> Value {
    let patterns: Vec<Value> = sel
        .witnesses
        .iter()
        .enumerate()
        .map(|(i, w)| match w {
            Some(s) => json!({
                "pattern": i + 1,
                "gamma_s": s.gamma_s,
                "gamma_r": s.gamma_r,
                "gamma": s.gamma,
                "numerical_failures": s.numerical_failures,
                "safety": certificate_json(&s.safety),
                "reachability": certificate_json(&s.reachability),
            }),
            None => json!({ "pattern": i + 1, "gamma": 0.0, "certificate": null }),
        })
        .collect();
    json!({
        "gamma_i": sel.gammas,
        "gamma_min": sel.gamma_min,
        "eta": sel.bounds.eta.iter().map(|r| r.iter().map(|v| if v.is_finite() { json!(v) } else { json!(null) }).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "p1": sel.bounds.p1,
        "p2_lower": sel.bounds.p2_lower,
        "p0_lower": sel.bounds.p0_lower,
        "kbar": sel.bounds.kbar,
        "iterations": sel.iterations,
        "patterns": patterns,
        "mc_verification": verification,
    })
}

pub fn sweep_rows<W: Write>(w: &mut csv::Writer<W>, table: &SweepTable) -> Result<()> {
    w.write_record(["lambda", "v3_mean", "v3_ci", "violation_sup", "v3_minus_v2", "v3_minus_v2_ci"])?;
    for r in &table.rows {
        w.write_record([
            r.lambda.to_string(),
            r.v3.mean.to_string(),
            r.v3.half_width.to_string(),
            r.violation_sup.to_string(),
            r.diff_vs_v2.mean.to_string(),
            r.diff_vs_v2.half_width.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: &Path, table: &SweepTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    sweep_rows(&mut w, table)
}
