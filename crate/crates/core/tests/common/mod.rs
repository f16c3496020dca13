#![allow(dead_code)]

use ghp_core::config::{bundled, Config};
use ghp_core::model::{plant_rhs, DisturbanceSample, PlantInputs, PlantState};
use ghp_core::oracle::{cop, solve_reference, ProblemKind, ReferenceSolution, SolverOptions, SteadyStateProblem};
use ghp_core::sim::{integrate_step, ClosedLoop, Rk4Workspace, Scenario, Scheme, SimulationTrace, STAGE_OFFSETS};
use nalgebra::{DMatrix, DVector};

pub fn config(name: &str, overrides: &[&str]) -> Config {
    let text = bundled(name).unwrap_or_else(|| panic!("no bundled scenario {name}"));
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Config::load(text, &ov).unwrap()
}

pub fn scenario(name: &str, overrides: &[&str]) -> Scenario {
    config(name, overrides).scenario().unwrap()
}

/// Largest gap of the last recorded (T, q, T_f) from the reference optimum of
/// the problem in force at step `k`.
pub fn gap_at_row(sc: &Scenario, trace: &SimulationTrace, row: usize, k: u64) -> (f64, ReferenceSolution) {
    let cl = ClosedLoop::new(sc).unwrap();
    let sol = solve_reference(&cl.problem_at(k).unwrap(), &SolverOptions::default()).unwrap();
    let r = &trace.rows[row];
    let n = sc.graph.len();
    let gap = (0..n)
        .flat_map(|i| {
            [
                (r.state[i] - sol.point.air[i]).abs(),
                (r.flows[i] - sol.flows[i]).abs(),
                (r.state[n + i] - sol.point.floor[i]).abs(),
            ]
        })
        .fold(0.0, f64::max);
    (gap, sol)
}

pub fn terminal_gap(sc: &Scenario, trace: &SimulationTrace) -> (f64, ReferenceSolution) {
    let k = trace.terminal.as_ref().expect("run finished").step;
    gap_at_row(sc, trace, trace.rows.len() - 1, k)
}

/// Steps the closed loop from `x` over steps `k0..k1`, clamping duals after each step.
pub fn advance(cl: &ClosedLoop, x: &mut [f64], k0: u64, k1: u64) {
    let dt = cl.scenario().dt;
    let mut s = cl.scratch();
    let mut ws = Rk4Workspace::new(x.len());
    let mut clamped = Vec::new();
    for k in k0..k1 {
        integrate_step(|st, xs, o| cl.derivative(xs, k, STAGE_OFFSETS[st], o, &mut s), x, dt, &mut ws).unwrap();
        cl.clamp_duals(x, &mut clamped);
    }
}

/// State after `seconds` of closed loop from the default start, at step `dt`.
pub fn state_after(sc: &Scenario, dt: f64, seconds: f64) -> Vec<f64> {
    let mut sc = sc.clone();
    sc.dt = dt;
    let cl = ClosedLoop::new(&sc).unwrap();
    let mut x = cl.initial_state().unwrap();
    advance(&cl, &mut x, 0, (seconds / dt).round() as u64);
    x
}

/// `|x_h - x_{h/2}| / |x_{h/2} - x_{h/4}|` in the max norm at time `seconds`.
pub fn self_convergence_ratio(sc: &Scenario, dt: f64, seconds: f64) -> f64 {
    let a = state_after(sc, dt, seconds);
    let b = state_after(sc, dt / 2.0, seconds);
    let c = state_after(sc, dt / 4.0, seconds);
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    d(&a, &b) / d(&b, &c)
}

fn project(h: f64, x: f64) -> f64 {
    if x > 0.0 {
        h
    } else {
        h.max(0.0)
    }
}

/// Flow-only closed loop written with the multiplier `ζ` as a state, so the
/// controller sees `T_o` and `Q` directly. Zone layout
/// `[Z, u, û, Z_f, Ẑ_f, ζ, λ, μ⁺, μ⁻]` after the plant block.
pub struct ExplicitZeta {
    sc: Scenario,
}

impl ExplicitZeta {
    pub const ZONE: usize = 9;

    pub fn new(sc: &Scenario) -> Self {
        assert!(matches!(sc.scheme, Scheme::FlowOnly { .. }));
        assert!(sc.setpoints.is_none());
        Self { sc: sc.clone() }
    }

    /// Converts a library state (ζ̃ in slot 5) to this layout.
    pub fn from_library(&self, x: &[f64]) -> Vec<f64> {
        let n = self.sc.graph.len();
        let kz = self.sc.effective_gains().k_zeta;
        let mut y = x.to_vec();
        for i in 0..n {
            let c = self.sc.graph.zone(i).air_capacitance;
            y[3 * n + Self::ZONE * i + 5] = kz * (x[3 * n + Self::ZONE * i + 5] + c * x[i]);
        }
        y
    }

    pub fn derivative(&self, x: &[f64], k: u64, c: f64) -> Vec<f64> {
        let sc = &self.sc;
        let g = &sc.graph;
        let ghp = &sc.ghp;
        let gain = sc.effective_gains();
        let n = g.len();
        let dt = sc.dt;
        let Scheme::FlowOnly { supply } = &sc.scheme else { unreachable!() };
        let ts = supply.sample(k, c, dt);
        let to = sc.disturbances.outdoor.sample(k, c, dt);
        let q: Vec<f64> = sc.disturbances.gains.iter().map(|p| p.sample(k, c, dt)).collect();
        let s = sc.energy_weight.sample(k, c, dt);
        let d = cop(ts, ghp).unwrap();
        let z = |i: usize| &x[3 * n + Self::ZONE * i..3 * n + Self::ZONE * (i + 1)];

        let flows: Vec<f64> = (0..n)
            .map(|i| {
                let v = z(i);
                (v[1] / (ghp.water_heat_capacity * (ts - v[3]))).clamp(0.0, g.zone(i).max_flow)
            })
            .collect();
        let plant = PlantState::from_slice(g, &x[..3 * n]).unwrap();
        let dp = plant_rhs(
            &plant,
            &PlantInputs { flow: flows, supply: ts },
            &DisturbanceSample { outdoor: to, gains: q.clone() },
            g,
            ghp,
        )
        .unwrap();
        let mut out = dp.to_vec();

        for i in 0..n {
            let p = g.zone(i);
            let v = z(i);
            let (zz, u, uh, zf, zfh, zeta, lam, mp, mm) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
            let raf = p.air_floor_resistance;
            let kappa = p.max_flow * ghp.water_heat_capacity;
            let mut diag = 1.0 / p.envelope_resistance + 1.0 / raf;
            let mut cross = 0.0;
            let mut flux = 0.0;
            for nb in g.neighbors(i) {
                diag += 1.0 / nb.resistance;
                cross += z(nb.zone)[5] / nb.resistance;
                flux += (z(nb.zone)[0] - zz) / nb.resistance;
            }
            out.extend([
                gain.k_z * (p.comfort_weight * (p.setpoint - zz) + zeta * diag - cross - lam / raf),
                gain.k_u * (-s / d - lam - mp + mm + gain.k_eu * (uh - u)),
                gain.k_eu_hat * (u - uh),
                gain.k_zf * ((lam - zeta) / raf - mp * kappa + gain.k_ezf * (zfh - zf)),
                gain.k_ezf_hat * (zf - zfh),
                gain.k_zeta * ((to - zz) / p.envelope_resistance + flux + (zf - zz) / raf + q[i]),
                gain.k_lambda * ((zz - zf) / raf + u),
                gain.k_mu_plus * project(u - kappa * (ts - zf), mp),
                gain.k_mu_minus * project(-u, mm),
            ]);
        }
        out
    }

    pub fn step(&self, x: &mut [f64], k: u64) {
        let dt = self.sc.dt;
        let at = |y: &[f64], kk: &[f64], h: f64| y.iter().zip(kk).map(|(a, b)| a + h * b).collect::<Vec<_>>();
        let k1 = self.derivative(x, k, 0.0);
        let k2 = self.derivative(&at(x, &k1, dt / 2.0), k, 0.5);
        let k3 = self.derivative(&at(x, &k2, dt / 2.0), k, 0.5);
        let k4 = self.derivative(&at(x, &k3, dt), k, 1.0);
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let n = self.sc.graph.len();
        for i in 0..n {
            for off in [7, 8] {
                let j = 3 * n + Self::ZONE * i + off;
                x[j] = x[j].max(0.0);
            }
        }
    }
}

/// Runs the library loop and the explicit-ζ loop side by side over `steps`
/// steps and returns the largest per-step gap after mapping ζ̃ to ζ.
pub fn explicit_zeta_gap(sc: &Scenario, steps: u64) -> f64 {
    let cl = ClosedLoop::new(sc).unwrap();
    let ex = ExplicitZeta::new(sc);
    let mut x = cl.initial_state().unwrap();
    let mut y = ex.from_library(&x);
    let mut worst = 0.0f64;
    for k in 0..steps {
        advance(&cl, &mut x, k, k + 1);
        ex.step(&mut y, k);
        let m = ex.from_library(&x);
        worst = m.iter().zip(&y).fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    worst
}

/// Independent optimum by nested grid refinement in flow coordinates: for
/// given `q` and `T_s` the balances are linear in `Z`, and the flow bounds
/// become a box.
pub struct GridOptimum {
    pub flows: Vec<f64>,
    pub heat: Vec<f64>,
    pub air: Vec<f64>,
    pub supply: f64,
    pub objective: f64,
}

pub fn grid_optimum(p: &SteadyStateProblem, points: usize, levels: usize) -> GridOptimum {
    let g = &p.graph;
    let n = g.len();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        l[(i, i)] += 1.0 / g.zone(i).envelope_resistance;
    }
    for e in g.edges() {
        let w = 1.0 / e.resistance;
        l[(e.a, e.a)] += w;
        l[(e.b, e.b)] += w;
        l[(e.a, e.b)] -= w;
        l[(e.b, e.a)] -= w;
    }
    let base = DVector::from_fn(n, |i, _| p.outdoor / g.zone(i).envelope_resistance + p.gains[i]);
    let joint = p.is_joint();
    let ghp = &p.ghp;

    // u_i = a_i (T_s - Z_i) with a_i = c_w q_i / (1 + c_w q_i R_af)
    let eval = |q: &[f64], ts: f64| -> (f64, Vec<f64>, Vec<f64>) {
        let a: Vec<f64> = (0..n)
            .map(|i| {
                let c = ghp.water_heat_capacity * q[i];
                c / (1.0 + c * g.zone(i).air_floor_resistance)
            })
            .collect();
        let mut m = l.clone();
        for i in 0..n {
            m[(i, i)] += a[i];
        }
        let rhs = DVector::from_fn(n, |i, _| base[i] + a[i] * ts);
        let z = m.lu().solve(&rhs).unwrap();
        let u: Vec<f64> = (0..n).map(|i| a[i] * (ts - z[i])).collect();
        let d = ghp.cop_intercept - ghp.cop_slope * ts;
        let mut f = 0.0;
        for i in 0..n {
            let zp = g.zone(i);
            f += 0.5 * zp.comfort_weight * (z[i] - zp.setpoint).powi(2);
            f += p.energy_weight * if joint { u[i] * u[i] / d } else { u[i] / d };
        }
        (f, u, z.iter().copied().collect())
    };

    let (lo, hi) = match p.kind {
        ProblemKind::FlowOnly { supply } => (supply, supply),
        ProblemKind::Joint => (ghp.supply_min, ghp.supply_max),
    };
    let dims = n + usize::from(joint);
    let mut center: Vec<f64> = (0..n).map(|i| 0.5 * g.zone(i).max_flow).collect();
    center.push(0.5 * (lo + hi));
    let mut span: Vec<f64> = (0..n).map(|i| 0.5 * g.zone(i).max_flow).collect();
    span.push(0.5 * (hi - lo));
    let mut best: Option<(f64, Vec<f64>)> = None;

    for _ in 0..levels {
        let total = points.pow(dims as u32);
        for idx in 0..total {
            let mut r = idx;
            let mut cand = center.clone();
            for (d, c) in cand.iter_mut().enumerate().take(dims) {
                let j = r % points;
                r /= points;
                *c += span[d] * (2.0 * j as f64 / (points - 1) as f64 - 1.0);
            }
            for i in 0..n {
                cand[i] = cand[i].clamp(0.0, g.zone(i).max_flow);
            }
            cand[n] = cand[n].clamp(lo, hi);
            let f = eval(&cand[..n], cand[n]).0;
            if best.as_ref().is_none_or(|b| f < b.0) {
                best = Some((f, cand));
            }
        }
        center = best.as_ref().unwrap().1.clone();
        for s in span.iter_mut() {
            *s *= 0.6;
        }
    }
    let (objective, x) = best.unwrap();
    let (_, heat, air) = eval(&x[..n], x[n]);
    GridOptimum { flows: x[..n].to_vec(), heat, air, supply: x[n], objective }
}
