use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ghp_core::agents::{run_agents, AgentOptions};
use ghp_core::config::Config;
use ghp_core::model::hurwitz_sweep;
use ghp_core::oracle::{cauchy_schwarz_chain, cop, energy_hessian, solve_reference, ReferenceSolution, SolverOptions, SteadyStateProblem};
use ghp_core::sim::{
    compare_runs, detect_settling, run_closed_loop, segment_settling, write_csv, ClosedLoop, ComparisonReport, Profile,
    RunSummary, Scheme, SegmentSettling, SimulationTrace, Variant,
};

use crate::output::OutDir;
use crate::{CmdResult, Common, Failure};

fn csv_bytes(trace: &SimulationTrace) -> CmdResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(trace, &mut buf).map_err(|e| Failure::Numeric(e.to_string()))?;
    Ok(buf)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.3e}"))
}

#[derive(Serialize)]
struct SimulateSummary {
    #[serde(flatten)]
    run: RunSummary,
    segments: Vec<SegmentSettling>,
    events: Vec<ghp_core::sim::Event>,
}

pub fn simulate(c: &Common, agents: bool) -> CmdResult {
    let loaded = c.load()?;
    let cfg = &loaded.config;
    let sc = cfg.scenario()?;
    let trace = if agents { run_agents(&sc, &AgentOptions::default())?.trace } else { run_closed_loop(&sc)? };

    let mut out = OutDir::create(&c.out, "simulate", &loaded)?;
    out.write(&cfg.output.trace, &csv_bytes(&trace)?)?;
    let crit = cfg.simulation.settling;
    let summary = SimulateSummary {
        run: trace.summary(&crit),
        segments: segment_settling(&trace, &sc.change_steps(), crit.tol_state, crit.window),
        events: trace.events.clone(),
    };
    out.write_json(&cfg.output.summary, &summary)?;
    let extra: Vec<String> = if agents { vec!["--agents".into()] } else { Vec::new() };
    out.finish(&loaded, &extra)?;

    let r = &summary.run;
    println!("steps        {}", r.steps);
    println!("energy       {:.6} kWh", r.energy_kwh);
    println!("terminal KKT {}", fmt_opt(r.terminal_kkt));
    println!("plant resid  {}", fmt_opt(r.terminal_plant_residual));
    println!(
        "settled      {} (t = {})",
        r.settling.settled,
        r.settling.settling_time.map_or("n/a".into(), |t| format!("{:.2} h", t / 3600.0))
    );
    println!("clamps       {} (worst {:.3e})", r.clamp_count, r.worst_clamp);
    println!("wrote        {}", c.out.display());
    if let Some(a) = &trace.abort {
        return Err(Failure::Numeric(format!("run aborted at t = {} s: {}", a.time, a.error)));
    }
    Ok(())
}

#[derive(Serialize)]
struct SolveOutput {
    at_time_h: f64,
    step: u64,
    problem: SteadyStateProblem,
    solution: ReferenceSolution,
}

pub fn solve(c: &Common, at_time: Option<f64>) -> CmdResult {
    let loaded = c.load()?;
    let cfg = &loaded.config;
    let sc = cfg.scenario()?;
    let hours = at_time.unwrap_or(cfg.simulation.horizon_h);
    if !(hours.is_finite() && hours >= 0.0) {
        return Err(Failure::Config(format!("--at-time must be a non-negative number of hours (got {hours})")));
    }
    let step = sc.step_at(hours);
    let problem = ClosedLoop::new(&sc)?.problem_at(step)?;
    let solution = solve_reference(&problem, &SolverOptions::default())?;

    let mut out = OutDir::create(&c.out, "solve", &loaded)?;
    println!("T_s        {:.6}", solution.point.supply);
    println!("T          {:?}", solution.point.air);
    println!("q          {:?}", solution.flows);
    println!("objective  {:.9}", solution.objective);
    println!("KKT        {:.3e}", solution.kkt.summary);
    let doc = SolveOutput { at_time_h: hours, step, problem, solution };
    out.write_json(&cfg.output.solution, &doc)?;
    out.finish(&loaded, &[format!("--at-time {hours:?}")])
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct VerifyReport {
    passed: bool,
    checks: Vec<Check>,
}

fn supply_values(p: &Profile) -> Vec<f64> {
    match p {
        Profile::Constant { value } => vec![*value],
        Profile::Step { points } | Profile::Linear { points } => points.iter().map(|b| b.value).collect(),
    }
}

fn convexity(cfg: &Config, samples: usize, seed: u64) -> CmdResult<Check> {
    let ghp = &cfg.ghp;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_eig = f64::INFINITY;
    let mut chain_fail = 0;
    for _ in 0..samples {
        let supply = rng.random_range(ghp.supply_min..=ghp.supply_max);
        // floor somewhere between 15 °C and the supply temperature
        let heat: Vec<f64> = cfg
            .building
            .zones
            .iter()
            .map(|z| rng.random_range(0.0..=1.0) * z.max_flow * ghp.water_heat_capacity * (supply - 15.0).max(0.0))
            .collect();
        if !cauchy_schwarz_chain(&heat, supply, ghp)?.holds(1e-12) {
            chain_fail += 1;
        }
        worst_eig = worst_eig.min(energy_hessian(&heat, supply, ghp)?.1);
    }
    Ok(Check {
        name: "convexity",
        passed: chain_fail == 0 && worst_eig >= -1e-10,
        detail: format!("{samples} points: chain violations {chain_fail}, min Hessian eigenvalue {worst_eig:.3e}"),
    })
}

pub fn verify(c: &Common, samples: usize, seed: u64) -> CmdResult {
    let loaded = c.load()?;
    let cfg = &loaded.config;
    let sc = cfg.scenario()?;
    let crit = cfg.simulation.settling;
    let mut checks = Vec::new();

    let supplies = match &sc.scheme {
        Scheme::FlowOnly { supply } => supply_values(supply),
        Scheme::Joint { .. } => vec![sc.ghp.supply_min, sc.ghp.supply_max],
    };
    let bad: Vec<String> = supplies.iter().filter_map(|&s| cop(s, &sc.ghp).err().map(|e| e.to_string())).collect();
    checks.push(Check {
        name: "cop-domain",
        passed: bad.is_empty(),
        detail: if bad.is_empty() { format!("COP > 0 at all {} supply values", supplies.len()) } else { bad.join("; ") },
    });

    let sweep = hurwitz_sweep(&sc.graph, &sc.ghp, 5)?;
    checks.push(Check {
        name: "hurwitz",
        passed: sweep.all_pass(),
        detail: format!("{}/{} stable, worst abscissa {:.3e}", sweep.passed, sweep.cases, sweep.worst_abscissa),
    });

    checks.push(convexity(cfg, samples, seed)?);

    let trace = run_closed_loop(&sc)?;
    let report = detect_settling(&trace, &crit);
    let settle_detail = match &trace.abort {
        Some(a) => format!("aborted at t = {} s: {}", a.time, a.error),
        None => format!(
            "settled {} at {}, KKT {}, plant residual {}",
            report.settled,
            report.settling_time.map_or("n/a".into(), |t| format!("{:.2} h", t / 3600.0)),
            fmt_opt(report.kkt_residual),
            fmt_opt(report.plant_residual)
        ),
    };
    checks.push(Check { name: "closed-loop-settles", passed: report.settled, detail: settle_detail });

    let cross = match (&trace.abort, &trace.terminal, trace.last()) {
        (None, Some(term), Some(last)) => {
            let cl = ClosedLoop::new(&sc)?;
            let sol = solve_reference(&cl.problem_at(term.step)?, &SolverOptions::default())?;
            let n = sc.graph.len();
            let gap = (0..n)
                .flat_map(|i| {
                    [
                        (last.state[i] - sol.point.air[i]).abs(),
                        (last.flows[i] - sol.flows[i]).abs(),
                        (last.state[n + i] - sol.point.floor[i]).abs(),
                    ]
                })
                .fold(0.0, f64::max);
            let kkt = term.kkt.as_ref().map(|k| k.summary);
            let mut passed = gap < 1e-3 && kkt.is_some_and(|k| k < crit.kkt_tol);
            let mut detail = format!("max gap to oracle {gap:.3e}, KKT {}", fmt_opt(kkt));
            if sc.is_joint() {
                let ts = term.point.supply;
                let nu = term.kkt.as_ref().map_or(f64::INFINITY, |k| k.complementarity_supply);
                passed &= (sc.ghp.supply_min..=sc.ghp.supply_max).contains(&ts) && nu < 1e-6;
                let _ = write!(detail, ", T_s {ts:.4}, supply complementarity {nu:.3e}");
            }
            Check { name: "kkt-cross-check", passed, detail }
        }
        _ => Check { name: "kkt-cross-check", passed: false, detail: "no terminal point (run aborted)".into() },
    };
    checks.push(cross);

    let passed = checks.iter().all(|c| c.passed);
    for ch in &checks {
        println!("{} {:<20} {}", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.detail);
    }
    let mut out = OutDir::create(&c.out, "verify", &loaded)?;
    out.write_json("verify.json", &VerifyReport { passed, checks })?;
    out.finish(&loaded, &[format!("--samples {samples}"), format!("--seed {seed}")])?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Check("verification failed".into()))
    }
}

fn apply_variant(cfg: &Config, name: &str) -> CmdResult<Config> {
    let mut cfg = cfg.clone();
    for m in name.split('+') {
        match m.trim() {
            "full" | "distributed" => cfg.controller.variant = Variant::Distributed,
            "decentralized" | "reduced-comm" => cfg.controller.variant = Variant::Decentralized,
            "extra" => cfg.controller.extra_dynamics = true,
            "no-extra" => cfg.controller.extra_dynamics = false,
            other => return Err(Failure::Config(format!("unknown variant modifier `{other}`"))),
        }
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct VariantResult {
    name: String,
    energy_kwh: f64,
    terminal_kkt: Option<f64>,
    kkt_passed: bool,
    settled: bool,
}

#[derive(Serialize)]
struct Pair {
    a: String,
    b: String,
    report: ComparisonReport,
}

#[derive(Serialize)]
struct CompareOutput {
    variants: Vec<VariantResult>,
    comparisons: Vec<Pair>,
}

pub fn compare(c: &Common, variants: &[String]) -> CmdResult {
    let loaded = c.load()?;
    let cfg = &loaded.config;
    let crit = cfg.simulation.settling;
    let burn_in = cfg.simulation.burn_in_h * 3600.0;
    let mut traces = Vec::new();
    let mut results = Vec::new();
    for v in variants {
        let sc = apply_variant(cfg, v)?.scenario()?;
        let tr = run_closed_loop(&sc)?;
        if let Some(a) = &tr.abort {
            return Err(Failure::Numeric(format!("variant {v} aborted at t = {} s: {}", a.time, a.error)));
        }
        let s = detect_settling(&tr, &crit);
        results.push(VariantResult {
            name: v.clone(),
            energy_kwh: tr.energy_kwh,
            terminal_kkt: s.kkt_residual,
            kkt_passed: s.kkt_residual.is_some_and(|k| k < crit.kkt_tol),
            settled: s.settled,
        });
        traces.push(tr);
    }
    let mut comparisons = Vec::new();
    for (k, tr) in traces.iter().enumerate().skip(1) {
        let report = compare_runs(&traces[0], tr, burn_in)?;
        comparisons.push(Pair { a: variants[0].clone(), b: variants[k].clone(), report });
    }

    let mut long = String::from("variant,time_s,zone,T,Tf,q\n");
    for (v, tr) in variants.iter().zip(&traces) {
        let n = tr.zones();
        for r in &tr.rows {
            for i in 0..n {
                let _ = writeln!(long, "{v},{:.16e},{},{:.16e},{:.16e},{:.16e}", r.time, i + 1, r.state[i], r.state[n + i], r.flows[i]);
            }
        }
    }

    for r in &results {
        println!(
            "{:<24} E = {:.6} kWh  KKT {} ({})  settled {}",
            r.name,
            r.energy_kwh,
            fmt_opt(r.terminal_kkt),
            if r.kkt_passed { "ok" } else { "above tolerance" },
            r.settled
        );
    }
    for p in &comparisons {
        println!("{} vs {}: dE = {:+.6} kWh", p.a, p.b, p.report.energy_delta);
        for (i, g) in p.report.max_temperature_gap.iter().enumerate() {
            println!(
                "  zone {}: max|dT| = {g:.4} C  TV(q) {:.6} vs {:.6}",
                i + 1,
                p.report.flow_variation_a[i],
                p.report.flow_variation_b[i]
            );
        }
    }

    let mut out = OutDir::create(&c.out, "compare", &loaded)?;
    out.write_json("compare.json", &CompareOutput { variants: results, comparisons })?;
    out.write("compare-long.csv", long.as_bytes())?;
    out.finish(&loaded, &[format!("--variants {}", variants.join(","))])
}
