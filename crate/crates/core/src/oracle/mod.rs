//! Steady-state optimization problems the controllers are meant to solve,
//! with an independent reference solver and KKT checker.
//!
//! Decision variables are the steady zone temperatures `Z_i`, the heat
//! delivered to each floor loop `u_i = c_w q_i (T_s - Z_fi)`, the steady
//! floor temperatures `Z_fi`, and in the joint problem the supply
//! temperature `T_s`. Constraints:
//!
//! ```text
//!   (T_o - Z_i)/R_i + Σ_j (Z_j - Z_i)/R_ij + (Z_fi - Z_i)/R_afi + Q_i = 0   (ζ_i)
//!   (Z_i - Z_fi)/R_afi + u_i = 0                                          (λ_i)
//!   σ (u_i - q_i^max c_w (T_s - Z_fi)) <= 0                               (μ_i^+)
//!   -σ u_i <= 0                                                           (μ_i^-)
//!   T_s - T_s^max <= 0,  T_s^min - T_s <= 0          (joint only)         (ν^+, ν^-)
//! ```
//!
//! with `σ = +1` in heating and `-1` in cooling. The flow-only objective is
//! `Σ ½ r_i (Z_i - T_i^set)² + s σ u_i / COP(T_s)`; the joint problem replaces
//! the energy term with the convex upper bound `s u_i² / COP(T_s)`.

mod convexity;
mod kkt;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BuildingGraph, GhpParams};

pub use convexity::{cauchy_schwarz_chain, energy_hessian, CauchySchwarzChain};
pub use kkt::{kkt_residual, KktReport};
pub use solver::{solve_reference, ReferenceSolution, SolverOptions};

/// Which problem: fixed supply temperature or supply temperature as a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemKind {
    FlowOnly { supply: f64 },
    Joint,
}

/// How the stationarity conditions treat the inter-zone terms.
///
/// `Local` is the equilibrium of the decentralized controllers running on the
/// coupled building: zone balances hold with coupling, but each zone's
/// stationarity condition ignores its neighbours (each zone treats the
/// equilibrium inter-zone heat flux as an exogenous gain).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    #[default]
    Distributed,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateProblem {
    pub kind: ProblemKind,
    #[serde(default)]
    pub coupling: Coupling,
    pub graph: BuildingGraph,
    pub ghp: GhpParams,
    /// Energy weight `s`.
    pub energy_weight: f64,
    pub outdoor: f64,
    pub gains: Vec<f64>,
}

impl SteadyStateProblem {
    pub fn new(
        kind: ProblemKind,
        graph: BuildingGraph,
        ghp: GhpParams,
        energy_weight: f64,
        outdoor: f64,
        gains: Vec<f64>,
    ) -> Result<Self> {
        let p = Self { kind, coupling: Coupling::Distributed, graph, ghp, energy_weight, outdoor, gains };
        p.validate()?;
        Ok(p)
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.ghp.validate()?;
        let n = self.graph.len();
        if self.gains.len() != n {
            return Err(Error::Structure(format!("{} heat gains for {n} zones", self.gains.len())));
        }
        if let Some(i) = self.gains.iter().position(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::InvalidParameter {
                field: format!("gains[{i}]"),
                reason: format!("heat gain must be finite and >= 0 (got {})", self.gains[i]),
            });
        }
        if !(self.energy_weight.is_finite() && self.energy_weight >= 0.0) {
            return Err(Error::InvalidParameter {
                field: "energy_weight".into(),
                reason: format!("must be >= 0 (got {})", self.energy_weight),
            });
        }
        if !self.outdoor.is_finite() {
            return Err(Error::InvalidParameter { field: "outdoor".into(), reason: "must be finite".into() });
        }
        if let ProblemKind::FlowOnly { supply } = self.kind {
            cop(supply, &self.ghp)?;
            if supply < self.ghp.supply_min || supply > self.ghp.supply_max {
                return Err(Error::InvalidParameter {
                    field: "supply".into(),
                    reason: format!(
                        "fixed supply {supply} outside [{}, {}]",
                        self.ghp.supply_min, self.ghp.supply_max
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn is_joint(&self) -> bool {
        matches!(self.kind, ProblemKind::Joint)
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    /// `q_i^max c_w`, the slope of the linearized flow bound.
    pub(crate) fn flow_bound_slope(&self, i: usize) -> f64 {
        self.graph.zone(i).max_flow * self.ghp.water_heat_capacity
    }
}

/// A primal point with its multipliers. For the flow-only problem `supply`
/// repeats the fixed supply temperature and `ν^±` are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualPoint {
    pub air: Vec<f64>,
    pub heat: Vec<f64>,
    pub floor: Vec<f64>,
    pub supply: f64,
    pub zeta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    pub nu_plus: f64,
    pub nu_minus: f64,
}

impl PrimalDualPoint {
    pub fn len(&self) -> usize {
        self.air.len()
    }

    pub fn is_empty(&self) -> bool {
        self.air.is_empty()
    }

    pub(crate) fn check_shape(&self, n: usize) -> Result<()> {
        let lens = [
            self.air.len(),
            self.heat.len(),
            self.floor.len(),
            self.zeta.len(),
            self.lambda.len(),
            self.mu_plus.len(),
            self.mu_minus.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Structure(format!("primal-dual point shape {lens:?} for {n} zones")));
        }
        Ok(())
    }

    /// Flow rates `q_i = u_i / (c_w (T_s - Z_fi))`.
    pub fn flows(&self, ghp: &GhpParams) -> Vec<f64> {
        self.heat
            .iter()
            .zip(&self.floor)
            .map(|(u, zf)| u / (ghp.water_heat_capacity * (self.supply - zf)))
            .collect()
    }
}

/// Coefficient of performance `b - a·T_s`.
pub fn cop(supply: f64, ghp: &GhpParams) -> Result<f64> {
    let c = ghp.cop_unchecked(supply);
    if c > 0.0 && c.is_finite() {
        Ok(c)
    } else {
        Err(Error::CopDomain { supply, cop: c })
    }
}

fn comfort(point: &PrimalDualPoint, graph: &BuildingGraph) -> f64 {
    graph
        .zones()
        .iter()
        .zip(&point.air)
        .map(|(z, t)| 0.5 * z.comfort_weight * (t - z.setpoint).powi(2))
        .sum()
}

/// Flow-only objective `Σ ½ r_i (Z_i - T_i^set)² + s |u_i| / COP(T_s)`.
pub fn objective_flow_only(point: &PrimalDualPoint, problem: &SteadyStateProblem) -> Result<f64> {
    point.check_shape(problem.len())?;
    let c = cop(point.supply, &problem.ghp)?;
    let sigma = problem.ghp.mode.sign();
    let energy: f64 = point.heat.iter().map(|u| sigma * u).sum();
    Ok(comfort(point, &problem.graph) + problem.energy_weight * energy / c)
}

/// Joint objective `Σ ½ r_i (Z_i - T_i^set)² + s u_i² / COP(T_s)`.
pub fn objective_joint(point: &PrimalDualPoint, problem: &SteadyStateProblem) -> Result<f64> {
    point.check_shape(problem.len())?;
    let c = cop(point.supply, &problem.ghp)?;
    let energy: f64 = point.heat.iter().map(|u| u * u).sum();
    Ok(comfort(point, &problem.graph) + problem.energy_weight * energy / c)
}

pub fn objective(point: &PrimalDualPoint, problem: &SteadyStateProblem) -> Result<f64> {
    match problem.kind {
        ProblemKind::FlowOnly { .. } => objective_flow_only(point, problem),
        ProblemKind::Joint => objective_joint(point, problem),
    }
}

/// Electrical power `Σ c_w q_i |T_s - T_fi| / COP(T_s)` (kW).
pub fn energy_exact(flows: &[f64], supply: f64, floor: &[f64], ghp: &GhpParams) -> Result<f64> {
    if flows.len() != floor.len() {
        return Err(Error::Structure(format!("{} flows, {} floor temperatures", flows.len(), floor.len())));
    }
    let c = cop(supply, ghp)?;
    let heat: f64 = flows
        .iter()
        .zip(floor)
        .map(|(q, tf)| ghp.water_heat_capacity * q * (supply - tf).abs())
        .sum();
    Ok(heat / c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_building, reference_ghp};

    fn point_at_setpoints(g: &BuildingGraph, supply: f64) -> PrimalDualPoint {
        let n = g.len();
        PrimalDualPoint {
            air: g.zones().iter().map(|z| z.setpoint).collect(),
            heat: vec![0.0; n],
            floor: vec![25.0; n],
            supply,
            zeta: vec![0.0; n],
            lambda: vec![0.0; n],
            mu_plus: vec![0.0; n],
            mu_minus: vec![0.0; n],
            nu_plus: 0.0,
            nu_minus: 0.0,
        }
    }

    #[test]
    fn cop_line() {
        let ghp = reference_ghp();
        assert!((cop(40.0, &ghp).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(cop(0.0, &ghp).unwrap(), 8.4);
        let edge = ghp.cop_intercept / ghp.cop_slope;
        assert!(matches!(cop(edge, &ghp), Err(Error::CopDomain { .. })));
        assert!(matches!(cop(80.0, &ghp), Err(Error::CopDomain { .. })));
    }

    #[test]
    fn objective_vanishes_at_setpoints_without_heat() {
        let g = reference_building();
        let p = SteadyStateProblem::new(ProblemKind::FlowOnly { supply: 40.0 }, g.clone(), reference_ghp(), 10.0, 5.0, vec![0.0; 4])
            .unwrap();
        let pt = point_at_setpoints(&g, 40.0);
        assert_eq!(objective_flow_only(&pt, &p).unwrap(), 0.0);
        assert_eq!(objective_joint(&pt, &p).unwrap(), 0.0);
    }

    #[test]
    fn comfort_term_only() {
        let mut z = reference_building().zone(0).clone();
        z.comfort_weight = 0.5;
        z.setpoint = 20.0;
        let g = BuildingGraph::new(vec![z], vec![]).unwrap();
        let p = SteadyStateProblem::new(ProblemKind::FlowOnly { supply: 40.0 }, g.clone(), reference_ghp(), 0.0, 0.0, vec![0.0])
            .unwrap();
        let mut pt = point_at_setpoints(&g, 40.0);
        pt.air[0] = 22.0;
        pt.heat[0] = 3.0;
        assert!((objective(&pt, &p).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_energy() {
        let ghp = reference_ghp();
        assert_eq!(energy_exact(&[0.0; 4], 40.0, &[25.0; 4], &ghp).unwrap(), 0.0);
        let e = energy_exact(&[0.03], 40.0, &[30.0], &ghp).unwrap();
        assert!((e - 0.31395).abs() < 1e-12, "{e}");
        // linear in each flow
        let e2 = energy_exact(&[0.06], 40.0, &[30.0], &ghp).unwrap();
        assert!((e2 - 2.0 * e).abs() < 1e-12);
        assert!(energy_exact(&[0.01], 80.0, &[30.0], &ghp).is_err());
    }

    #[test]
    fn fixed_supply_outside_box_rejected() {
        let r = SteadyStateProblem::new(
            ProblemKind::FlowOnly { supply: 45.0 },
            reference_building(),
            reference_ghp(),
            1.0,
            0.0,
            vec![0.0; 4],
        );
        assert!(r.is_err());
    }
}
