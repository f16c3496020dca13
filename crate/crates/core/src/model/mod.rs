//! Lumped RC model of a multi-zone building with hydronic floor heating.
//!
//! Every zone carries three temperature nodes: room air `T_i`, floor slab
//! `T_fi` and the water in the floor pipes `T_wi`. Zones exchange heat with
//! the outdoors, with their neighbours through shared walls, and with their
//! own floor. The heat pump injects `c_w q_i (T_s - T_fi)` into each loop.
//!
//! Units are SI with time in seconds: capacitances in kJ/°C, resistances in
//! °C/kW, so every `R·C` product is a time constant in seconds.
//!
//! An optional second-order wall model gives every shared wall its own
//! temperature node `T_ij` with capacitance `C_ij`. Walls only change the
//! transient; see [`linear::wall_reduction_check`].

pub mod linear;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};

pub use linear::{
    hurwitz_sweep, is_hurwitz, steady_state, system_matrix, wall_reduction_check, HurwitzReport, HurwitzSweep, LinearPlant,
    WallReductionReport,
};

/// Thermal and comfort parameters of one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneParams {
    /// Room air capacitance `C_i` (kJ/°C).
    pub air_capacitance: f64,
    /// Zone-to-outdoor resistance `R_i` (°C/kW).
    pub envelope_resistance: f64,
    /// Air-to-floor resistance `R_afi` (°C/kW).
    pub air_floor_resistance: f64,
    /// Floor capacitance `C_fi` (kJ/°C).
    pub floor_capacitance: f64,
    /// Floor-to-water resistance `R_fwi` (°C/kW).
    pub floor_water_resistance: f64,
    /// Pipe water capacitance `C_wi` (kJ/°C).
    pub water_capacitance: f64,
    /// Maximum water flow `q_i^max` (kg/s).
    pub max_flow: f64,
    /// Temperature set point (°C).
    pub setpoint: f64,
    /// Comfort weight `r_i` (dimensionless).
    pub comfort_weight: f64,
}

impl ZoneParams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        ensure_positive(format!("{prefix}.air_capacitance"), self.air_capacitance)?;
        ensure_positive(format!("{prefix}.envelope_resistance"), self.envelope_resistance)?;
        ensure_positive(format!("{prefix}.air_floor_resistance"), self.air_floor_resistance)?;
        ensure_positive(format!("{prefix}.floor_capacitance"), self.floor_capacitance)?;
        ensure_positive(format!("{prefix}.floor_water_resistance"), self.floor_water_resistance)?;
        ensure_positive(format!("{prefix}.water_capacitance"), self.water_capacitance)?;
        ensure_positive(format!("{prefix}.max_flow"), self.max_flow)?;
        ensure_positive(format!("{prefix}.comfort_weight"), self.comfort_weight)?;
        if !self.setpoint.is_finite() {
            return Err(Error::InvalidParameter {
                field: format!("{prefix}.setpoint"),
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }
}

/// A shared wall between two zones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Inter-zone resistance `R_ij` (°C/kW).
    pub resistance: f64,
    /// Wall capacitance `C_ij` (kJ/°C); only used by the wall-state model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_capacitance: Option<f64>,
}

/// A neighbour as seen from one zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub zone: usize,
    pub edge: usize,
    pub resistance: f64,
}

/// Undirected connected zone graph with thermal parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct BuildingGraph {
    zones: Vec<ZoneParams>,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<Neighbor>>,
    walls: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    zones: Vec<ZoneParams>,
    #[serde(default)]
    edges: Vec<Edge>,
}

impl TryFrom<RawGraph> for BuildingGraph {
    type Error = Error;
    fn try_from(raw: RawGraph) -> Result<Self> {
        BuildingGraph::new(raw.zones, raw.edges)
    }
}

impl From<BuildingGraph> for RawGraph {
    fn from(g: BuildingGraph) -> Self {
        RawGraph { zones: g.zones, edges: g.edges }
    }
}

impl BuildingGraph {
    /// Validates parameters and topology. Wall states are enabled when every
    /// edge carries a wall capacitance; a partial assignment is rejected.
    pub fn new(zones: Vec<ZoneParams>, edges: Vec<Edge>) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::Structure("building has no zones".into()));
        }
        for (i, z) in zones.iter().enumerate() {
            z.validate(&format!("zones[{i}]"))?;
        }
        let n = zones.len();
        let mut seen = std::collections::BTreeSet::new();
        for (k, e) in edges.iter().enumerate() {
            if e.a >= n || e.b >= n {
                return Err(Error::Structure(format!(
                    "edges[{k}] references zone out of range ({}, {}) with {n} zones",
                    e.a, e.b
                )));
            }
            if e.a == e.b {
                return Err(Error::Structure(format!("edges[{k}] is a self-edge on zone {}", e.a)));
            }
            if !seen.insert((e.a.min(e.b), e.a.max(e.b))) {
                return Err(Error::Structure(format!(
                    "edges[{k}] duplicates the pair ({}, {})",
                    e.a, e.b
                )));
            }
            ensure_positive(format!("edges[{k}].resistance"), e.resistance)?;
            if let Some(c) = e.wall_capacitance {
                ensure_positive(format!("edges[{k}].wall_capacitance"), c)?;
            }
        }
        let with_walls = edges.iter().filter(|e| e.wall_capacitance.is_some()).count();
        if with_walls != 0 && with_walls != edges.len() {
            return Err(Error::Structure(
                "wall capacitance must be given for every edge or for none".into(),
            ));
        }
        let walls = with_walls > 0;

        let mut neighbors = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            neighbors[e.a].push(Neighbor { zone: e.b, edge: k, resistance: e.resistance });
            neighbors[e.b].push(Neighbor { zone: e.a, edge: k, resistance: e.resistance });
        }
        for list in &mut neighbors {
            list.sort_by_key(|nb| nb.zone);
        }

        // connectivity
        let mut visited = vec![false; n];
        let mut stack = vec![0];
        visited[0] = true;
        while let Some(i) = stack.pop() {
            for nb in &neighbors[i] {
                if !visited[nb.zone] {
                    visited[nb.zone] = true;
                    stack.push(nb.zone);
                }
            }
        }
        if let Some(i) = visited.iter().position(|v| !v) {
            return Err(Error::Structure(format!("zone graph is not connected (zone {i} unreachable)")));
        }

        Ok(Self { zones, edges, neighbors, walls })
    }

    pub fn zones(&self) -> &[ZoneParams] {
        &self.zones
    }

    pub fn zone(&self, i: usize) -> &ZoneParams {
        &self.zones[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbours of zone `i`, sorted by zone index.
    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.neighbors[i]
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn has_walls(&self) -> bool {
        self.walls
    }

    /// Number of state variables of the plant (3 per zone plus walls).
    pub fn state_len(&self) -> usize {
        3 * self.len() + if self.walls { self.edges.len() } else { 0 }
    }

    /// Copy with every `R_ij` scaled and wall states dropped.
    pub fn with_scaled_edges(&self, factor: f64) -> Result<Self> {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { resistance: e.resistance * factor, wall_capacitance: None, ..e.clone() })
            .collect();
        Self::new(self.zones.clone(), edges)
    }

    /// Copy with wall states enabled, all walls sharing `capacitance`.
    pub fn with_walls(&self, capacitance: f64) -> Result<Self> {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { wall_capacitance: Some(capacitance), ..e.clone() })
            .collect();
        Self::new(self.zones.clone(), edges)
    }

    /// Copy with replaced set points.
    pub fn with_setpoints(&self, setpoints: &[f64]) -> Result<Self> {
        if setpoints.len() != self.len() {
            return Err(Error::Structure(format!(
                "{} set points for {} zones",
                setpoints.len(),
                self.len()
            )));
        }
        let zones = self
            .zones
            .iter()
            .zip(setpoints)
            .map(|(z, &t)| ZoneParams { setpoint: t, ..z.clone() })
            .collect();
        Self::new(zones, self.edges.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Heating,
    Cooling,
}

impl Mode {
    /// +1 in heating, -1 in cooling: the sign of `T_s - T_f` and of `u`.
    pub fn sign(self) -> f64 {
        match self {
            Mode::Heating => 1.0,
            Mode::Cooling => -1.0,
        }
    }
}

/// Heat pump data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GhpParams {
    /// Specific heat of water `c_w` (kJ/(kg·°C)).
    pub water_heat_capacity: f64,
    /// COP slope `a` (1/°C).
    pub cop_slope: f64,
    /// COP intercept `b`.
    pub cop_intercept: f64,
    pub supply_min: f64,
    pub supply_max: f64,
    #[serde(default)]
    pub mode: Mode,
}

impl GhpParams {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("ghp.water_heat_capacity", self.water_heat_capacity)?;
        ensure_positive("ghp.cop_slope", self.cop_slope)?;
        ensure_positive("ghp.cop_intercept", self.cop_intercept)?;
        if !(self.supply_min.is_finite() && self.supply_max.is_finite()) || self.supply_min > self.supply_max {
            return Err(Error::InvalidParameter {
                field: "ghp.supply_min".into(),
                reason: format!("need supply_min <= supply_max (got {} > {})", self.supply_min, self.supply_max),
            });
        }
        if self.cop_intercept - self.cop_slope * self.supply_max <= 0.0 {
            return Err(Error::InvalidParameter {
                field: "ghp.supply_max".into(),
                reason: format!(
                    "COP b - a*T_s_max = {} must stay positive",
                    self.cop_intercept - self.cop_slope * self.supply_max
                ),
            });
        }
        Ok(())
    }

    /// `b - a·T_s` without a domain check.
    pub fn cop_unchecked(&self, supply: f64) -> f64 {
        self.cop_intercept - self.cop_slope * supply
    }
}

/// All physical temperatures. Also used for time derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub air: Vec<f64>,
    pub floor: Vec<f64>,
    pub water: Vec<f64>,
    /// Wall temperatures `T_ij`, one per edge; empty unless wall states are on.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub walls: Vec<f64>,
}

impl PlantState {
    /// Every node at the same temperature.
    pub fn uniform(graph: &BuildingGraph, temperature: f64) -> Self {
        let n = graph.len();
        let m = if graph.has_walls() { graph.edges().len() } else { 0 };
        Self {
            air: vec![temperature; n],
            floor: vec![temperature; n],
            water: vec![temperature; n],
            walls: vec![temperature; m],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            air: vec![0.0; self.air.len()],
            floor: vec![0.0; self.floor.len()],
            water: vec![0.0; self.water.len()],
            walls: vec![0.0; self.walls.len()],
        }
    }

    /// Stacks `[air, floor, water, walls]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        self.write_into(&mut v);
        v
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.air);
        out.extend_from_slice(&self.floor);
        out.extend_from_slice(&self.water);
        out.extend_from_slice(&self.walls);
    }

    pub fn from_slice(graph: &BuildingGraph, x: &[f64]) -> Result<Self> {
        let n = graph.len();
        if x.len() != graph.state_len() {
            return Err(Error::Structure(format!(
                "plant state has {} entries, expected {}",
                x.len(),
                graph.state_len()
            )));
        }
        Ok(Self {
            air: x[..n].to_vec(),
            floor: x[n..2 * n].to_vec(),
            water: x[2 * n..3 * n].to_vec(),
            walls: x[3 * n..].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.air.len() + self.floor.len() + self.water.len() + self.walls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, graph: &BuildingGraph) -> Result<()> {
        let n = graph.len();
        let m = if graph.has_walls() { graph.edges().len() } else { 0 };
        if self.air.len() != n || self.floor.len() != n || self.water.len() != n || self.walls.len() != m {
            return Err(Error::Structure(format!(
                "plant state shape ({}, {}, {}, {}) does not match {n} zones / {m} walls",
                self.air.len(),
                self.floor.len(),
                self.water.len(),
                self.walls.len()
            )));
        }
        ensure_finite("T", &self.air)?;
        ensure_finite("T_f", &self.floor)?;
        ensure_finite("T_w", &self.water)?;
        ensure_finite("T_wall", &self.walls)
    }
}

/// Actuated inputs: per-zone flow and the common supply temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantInputs {
    pub flow: Vec<f64>,
    pub supply: f64,
}

/// Disturbances evaluated at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSample {
    pub outdoor: f64,
    pub gains: Vec<f64>,
}

const FLOW_BOUND_SLACK: f64 = 1e-12;

/// Time derivative of every plant temperature.
pub fn plant_rhs(
    state: &PlantState,
    inputs: &PlantInputs,
    dist: &DisturbanceSample,
    graph: &BuildingGraph,
    ghp: &GhpParams,
) -> Result<PlantState> {
    let mut out = state.zeros_like();
    plant_rhs_into(state, inputs, dist, graph, ghp, &mut out)?;
    Ok(out)
}

/// [`plant_rhs`] writing into a preallocated derivative.
pub fn plant_rhs_into(
    state: &PlantState,
    inputs: &PlantInputs,
    dist: &DisturbanceSample,
    graph: &BuildingGraph,
    ghp: &GhpParams,
    out: &mut PlantState,
) -> Result<()> {
    state.check(graph)?;
    let n = graph.len();
    if inputs.flow.len() != n || dist.gains.len() != n {
        return Err(Error::Structure(format!(
            "{} flows / {} gains for {n} zones",
            inputs.flow.len(),
            dist.gains.len()
        )));
    }
    ensure_finite("q", &inputs.flow)?;
    ensure_finite("Q", &dist.gains)?;
    if !inputs.supply.is_finite() || !dist.outdoor.is_finite() {
        return Err(Error::Numeric("supply or outdoor temperature not finite".into()));
    }
    for (i, (&q, z)) in inputs.flow.iter().zip(graph.zones()).enumerate() {
        if q < -FLOW_BOUND_SLACK || q > z.max_flow + FLOW_BOUND_SLACK {
            return Err(Error::InvalidParameter {
                field: format!("q[{i}]"),
                reason: format!("flow {q} outside [0, {}]", z.max_flow),
            });
        }
    }

    let walls = graph.has_walls();
    for i in 0..n {
        let z = graph.zone(i);
        let t = state.air[i];
        let tf = state.floor[i];
        let tw = state.water[i];

        let mut flux = (dist.outdoor - t) / z.envelope_resistance;
        for nb in graph.neighbors(i) {
            let other = if walls { state.walls[nb.edge] } else { state.air[nb.zone] };
            flux += (other - t) / nb.resistance;
        }
        flux += (tf - t) / z.air_floor_resistance + dist.gains[i];
        out.air[i] = flux / z.air_capacitance;

        out.floor[i] =
            ((t - tf) / z.air_floor_resistance + (tw - tf) / z.floor_water_resistance) / z.floor_capacitance;
        out.water[i] = ((tf - tw) / z.floor_water_resistance
            + ghp.water_heat_capacity * inputs.flow[i] * (inputs.supply - tf))
            / z.water_capacitance;
    }
    if walls {
        for (k, e) in graph.edges().iter().enumerate() {
            let tij = state.walls[k];
            let c = e.wall_capacitance.expect("validated wall capacitance");
            out.walls[k] = ((state.air[e.a] - tij) / e.resistance + (state.air[e.b] - tij) / e.resistance) / c;
        }
    }
    Ok(())
}

/// Zones where the supply temperature is on the wrong side of the floor
/// temperature for the operating mode.
pub fn mode_violations(floor: &[f64], supply: f64, mode: Mode) -> Vec<usize> {
    floor
        .iter()
        .enumerate()
        .filter(|(_, &tf)| mode.sign() * (supply - tf) <= 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Reference four-zone house: 2×2 floor plan, edges 0-1, 0-2, 1-3, 2-3.
pub fn reference_building() -> BuildingGraph {
    let q_max = [0.03, 0.04, 0.045, 0.035];
    let setpoints = [22.0, 21.0, 22.0, 20.0];
    let zones = q_max
        .iter()
        .zip(setpoints)
        .map(|(&max_flow, setpoint)| ZoneParams {
            air_capacitance: 20.0,
            envelope_resistance: 15.0,
            air_floor_resistance: 3.0,
            floor_capacitance: 35.0,
            floor_water_resistance: 5.0,
            water_capacitance: 25.0,
            max_flow,
            setpoint,
            comfort_weight: 0.5,
        })
        .collect();
    let edges = [(0, 1), (0, 2), (1, 3), (2, 3)]
        .into_iter()
        .map(|(a, b)| Edge { a, b, resistance: 23.0, wall_capacitance: None })
        .collect();
    BuildingGraph::new(zones, edges).expect("reference building is valid")
}

/// Heat pump constants of the reference building.
pub fn reference_ghp() -> GhpParams {
    GhpParams {
        water_heat_capacity: 4.186,
        cop_slope: 0.11,
        cop_intercept: 8.4,
        supply_min: 38.0,
        supply_max: 42.0,
        mode: Mode::Heating,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_zone() -> BuildingGraph {
        let mut z = reference_building().zone(0).clone();
        z.setpoint = 22.0;
        BuildingGraph::new(vec![z], vec![]).unwrap()
    }

    fn no_flow(n: usize, supply: f64) -> PlantInputs {
        PlantInputs { flow: vec![0.0; n], supply }
    }

    #[test]
    fn zero_flux_network_is_at_rest() {
        let g = single_zone();
        let s = PlantState::uniform(&g, 10.0);
        let d = plant_rhs(
            &s,
            &no_flow(1, 40.0),
            &DisturbanceSample { outdoor: 10.0, gains: vec![0.0] },
            &g,
            &reference_ghp(),
        )
        .unwrap();
        assert_eq!(d.air, vec![0.0]);
        assert_eq!(d.floor, vec![0.0]);
        assert_eq!(d.water, vec![0.0]);
    }

    #[test]
    fn envelope_loss_of_single_zone() {
        let g = single_zone();
        let s = PlantState::uniform(&g, 20.0);
        let d = plant_rhs(
            &s,
            &no_flow(1, 40.0),
            &DisturbanceSample { outdoor: 10.0, gains: vec![0.0] },
            &g,
            &reference_ghp(),
        )
        .unwrap();
        // C dT/dt = (10 - 20) / 15
        assert!((d.air[0] - (-1.0 / 30.0)).abs() < 1e-15);
        assert_eq!(d.floor[0], 0.0);
        assert_eq!(d.water[0], 0.0);
    }

    #[test]
    fn interzone_flux_cancels_in_the_sum() {
        let g = reference_building();
        let ghp = reference_ghp();
        let s = PlantState {
            air: vec![19.0, 23.5, 17.25, 21.0],
            floor: vec![24.0, 22.0, 25.5, 20.0],
            water: vec![30.0, 28.0, 33.0, 26.0],
            walls: vec![],
        };
        let inputs = PlantInputs { flow: vec![0.01, 0.02, 0.0, 0.035], supply: 40.0 };
        let dist = DisturbanceSample { outdoor: 3.0, gains: vec![0.1, 0.1, 0.0, 0.3] };
        let d = plant_rhs(&s, &inputs, &dist, &g, &ghp).unwrap();

        let stored: f64 = (0..4)
            .map(|i| {
                let z = g.zone(i);
                z.air_capacitance * d.air[i] + z.floor_capacitance * d.floor[i] + z.water_capacitance * d.water[i]
            })
            .sum();
        let external: f64 = (0..4)
            .map(|i| {
                let z = g.zone(i);
                (dist.outdoor - s.air[i]) / z.envelope_resistance
                    + dist.gains[i]
                    + ghp.water_heat_capacity * inputs.flow[i] * (inputs.supply - s.floor[i])
            })
            .sum();
        assert!((stored - external).abs() < 1e-12, "{stored} vs {external}");
    }

    #[test]
    fn graph_validation() {
        let z = reference_building().zone(0).clone();
        let e = |a, b| Edge { a, b, resistance: 23.0, wall_capacitance: None };
        assert!(BuildingGraph::new(vec![z.clone(), z.clone()], vec![]).is_err(), "disconnected");
        assert!(BuildingGraph::new(vec![z.clone()], vec![e(0, 0)]).is_err(), "self edge");
        assert!(BuildingGraph::new(vec![z.clone(), z.clone()], vec![e(0, 1), e(1, 0)]).is_err());
        let mut bad = z.clone();
        bad.envelope_resistance = -1.0;
        match BuildingGraph::new(vec![bad], vec![]) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "zones[0].envelope_resistance"),
            other => panic!("{other:?}"),
        }
        let mut partial = vec![e(0, 1), e(1, 2)];
        partial[0].wall_capacitance = Some(50.0);
        assert!(BuildingGraph::new(vec![z.clone(), z.clone(), z], partial).is_err());
    }

    #[test]
    fn ghp_validation() {
        let mut g = reference_ghp();
        assert!(g.validate().is_ok());
        g.supply_max = 80.0;
        assert!(g.validate().is_err());
        let mut g = reference_ghp();
        g.supply_min = 43.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn flow_out_of_bounds_is_rejected() {
        let g = single_zone();
        let s = PlantState::uniform(&g, 20.0);
        let inputs = PlantInputs { flow: vec![0.5], supply: 40.0 };
        let dist = DisturbanceSample { outdoor: 0.0, gains: vec![0.0] };
        assert!(plant_rhs(&s, &inputs, &dist, &g, &reference_ghp()).is_err());
        let mut s = s;
        s.air[0] = f64::NAN;
        let err = plant_rhs(&s, &no_flow(1, 40.0), &dist, &g, &reference_ghp()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn mode_violation_detection() {
        assert_eq!(mode_violations(&[30.0, 41.0, 40.0], 40.0, Mode::Heating), vec![1, 2]);
        assert_eq!(mode_violations(&[30.0, 41.0], 35.0, Mode::Cooling), vec![0]);
    }
}
