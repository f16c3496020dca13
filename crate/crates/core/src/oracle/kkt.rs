use serde::{Deserialize, Serialize};

use super::{cop, Coupling, PrimalDualPoint, ProblemKind, SteadyStateProblem};
use crate::error::{ensure_finite, Result};

/// Componentwise KKT residuals of a primal-dual point.
///
/// Stationarity entries are signed; feasibility entries are the constraint
/// violation (`max(0, ·)` for inequalities); complementarity entries are
/// `|multiplier · constraint|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity_air: Vec<f64>,
    pub stationarity_heat: Vec<f64>,
    pub stationarity_floor: Vec<f64>,
    /// Zero for the flow-only problem.
    pub stationarity_supply: f64,
    pub zone_balance: Vec<f64>,
    pub floor_balance: Vec<f64>,
    pub upper_violation: Vec<f64>,
    pub lower_violation: Vec<f64>,
    pub supply_violation: f64,
    pub complementarity_upper: Vec<f64>,
    pub complementarity_lower: Vec<f64>,
    /// `|ν^+ (T_s - T_max)| + |ν^- (T_min - T_s)|`; for the flow-only problem
    /// `|ν^+| + |ν^-|` since those multipliers must vanish.
    pub complementarity_supply: f64,
    /// Smallest inequality multiplier (negative means dual infeasible).
    pub dual_margin: f64,
    /// Largest absolute entry over all residuals, counting `max(0, -dual_margin)`.
    pub summary: f64,
}

impl KktReport {
    pub fn max_stationarity(&self) -> f64 {
        max_abs(&self.stationarity_air)
            .max(max_abs(&self.stationarity_heat))
            .max(max_abs(&self.stationarity_floor))
            .max(self.stationarity_supply.abs())
    }

    pub fn max_feasibility(&self) -> f64 {
        max_abs(&self.zone_balance)
            .max(max_abs(&self.floor_balance))
            .max(max_abs(&self.upper_violation))
            .max(max_abs(&self.lower_violation))
            .max(self.supply_violation)
    }

    pub fn max_complementarity(&self) -> f64 {
        max_abs(&self.complementarity_upper)
            .max(max_abs(&self.complementarity_lower))
            .max(self.complementarity_supply)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn kkt_residual(point: &PrimalDualPoint, problem: &SteadyStateProblem) -> Result<KktReport> {
    problem.validate()?;
    let n = problem.len();
    point.check_shape(n)?;
    for (name, v) in [
        ("air", &point.air),
        ("heat", &point.heat),
        ("floor", &point.floor),
        ("zeta", &point.zeta),
        ("lambda", &point.lambda),
        ("mu_plus", &point.mu_plus),
        ("mu_minus", &point.mu_minus),
    ] {
        ensure_finite(name, v)?;
    }
    ensure_finite("supply/nu", &[point.supply, point.nu_plus, point.nu_minus])?;

    let g = &problem.graph;
    let ghp = &problem.ghp;
    let sigma = ghp.mode.sign();
    let s = problem.energy_weight;
    let joint = problem.is_joint();
    let coupled = problem.coupling == Coupling::Distributed;
    let ts = match problem.kind {
        ProblemKind::FlowOnly { supply } => supply,
        ProblemKind::Joint => point.supply,
    };
    let d = cop(ts, ghp)?;

    let mut st_z = vec![0.0; n];
    let mut st_u = vec![0.0; n];
    let mut st_f = vec![0.0; n];
    let mut bal = vec![0.0; n];
    let mut fbal = vec![0.0; n];
    let mut up = vec![0.0; n];
    let mut lo = vec![0.0; n];
    let mut cu = vec![0.0; n];
    let mut cl = vec![0.0; n];
    let mut mu_kappa = 0.0;
    let mut u_sq = 0.0;

    for i in 0..n {
        let zp = g.zone(i);
        let (z, u, zf) = (point.air[i], point.heat[i], point.floor[i]);
        let (zeta, lam, mup, mum) = (point.zeta[i], point.lambda[i], point.mu_plus[i], point.mu_minus[i]);
        let kappa = problem.flow_bound_slope(i);

        let mut diag = 1.0 / zp.envelope_resistance + 1.0 / zp.air_floor_resistance;
        let mut cross = 0.0;
        let mut flux = 0.0;
        for nb in g.neighbors(i) {
            flux += (point.air[nb.zone] - z) / nb.resistance;
            if coupled {
                diag += 1.0 / nb.resistance;
                cross += point.zeta[nb.zone] / nb.resistance;
            }
        }
        st_z[i] = zp.comfort_weight * (z - zp.setpoint) - zeta * diag + cross + lam / zp.air_floor_resistance;
        let energy_grad = if joint { 2.0 * s * u / d } else { s * sigma / d };
        st_u[i] = energy_grad + lam + sigma * mup - sigma * mum;
        st_f[i] = (zeta - lam) / zp.air_floor_resistance + sigma * mup * kappa;

        bal[i] = (problem.outdoor - z) / zp.envelope_resistance
            + flux
            + (zf - z) / zp.air_floor_resistance
            + problem.gains[i];
        fbal[i] = (z - zf) / zp.air_floor_resistance + u;

        let c_up = sigma * (u - kappa * (ts - zf));
        let c_lo = -sigma * u;
        up[i] = c_up.max(0.0);
        lo[i] = c_lo.max(0.0);
        cu[i] = (mup * c_up).abs();
        cl[i] = (mum * c_lo).abs();

        mu_kappa += mup * kappa;
        u_sq += u * u;
    }

    let (st_ts, supply_violation, comp_supply) = if joint {
        let st = ghp.cop_slope * s * u_sq / (d * d) - sigma * mu_kappa + point.nu_plus - point.nu_minus;
        let hi = ts - ghp.supply_max;
        let lo = ghp.supply_min - ts;
        (st, hi.max(lo).max(0.0), (point.nu_plus * hi).abs() + (point.nu_minus * lo).abs())
    } else {
        (0.0, 0.0, point.nu_plus.abs() + point.nu_minus.abs())
    };

    let dual_margin = point
        .mu_plus
        .iter()
        .chain(&point.mu_minus)
        .copied()
        .chain([point.nu_plus, point.nu_minus])
        .fold(f64::INFINITY, f64::min);

    let mut report = KktReport {
        stationarity_air: st_z,
        stationarity_heat: st_u,
        stationarity_floor: st_f,
        stationarity_supply: st_ts,
        zone_balance: bal,
        floor_balance: fbal,
        upper_violation: up,
        lower_violation: lo,
        supply_violation,
        complementarity_upper: cu,
        complementarity_lower: cl,
        complementarity_supply: comp_supply,
        dual_margin,
        summary: 0.0,
    };
    report.summary = report
        .max_stationarity()
        .max(report.max_feasibility())
        .max(report.max_complementarity())
        .max((-dual_margin).max(0.0));
    Ok(report)
}
