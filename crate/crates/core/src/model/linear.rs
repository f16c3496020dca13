//! State-space form of the plant under constant inputs, stability check and
//! equilibrium solve.

use nalgebra::{DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use super::{plant_rhs, BuildingGraph, DisturbanceSample, GhpParams, PlantInputs, PlantState};
use crate::error::{Error, Result};

/// `ẋ = A·x + b_o·T_o + B_Q·Q + c` for fixed flows and supply temperature.
///
/// The state stacks `[T (n), T_f (n), T_w (n), T_wall (m)]`.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub matrix: DMatrix<f64>,
    pub outdoor_gain: DVector<f64>,
    pub heat_gain: DMatrix<f64>,
    /// Heat pump injection `c_w q_i T_s / C_wi` on the water rows.
    pub supply_injection: DVector<f64>,
}

impl LinearPlant {
    /// Affine offset `w(T_o, Q)`.
    pub fn offset(&self, dist: &DisturbanceSample) -> Result<DVector<f64>> {
        if dist.gains.len() != self.heat_gain.ncols() {
            return Err(Error::Structure(format!(
                "{} heat gains for {} zones",
                dist.gains.len(),
                self.heat_gain.ncols()
            )));
        }
        let q = DVector::from_column_slice(&dist.gains);
        Ok(&self.outdoor_gain * dist.outdoor + &self.heat_gain * q + &self.supply_injection)
    }
}

pub fn system_matrix(graph: &BuildingGraph, ghp: &GhpParams, inputs: &PlantInputs) -> Result<LinearPlant> {
    let n = graph.len();
    if inputs.flow.len() != n {
        return Err(Error::Structure(format!("{} flows for {n} zones", inputs.flow.len())));
    }
    let dim = graph.state_len();
    let (air, floor, water) = (0, n, 2 * n);
    let mut a = DMatrix::zeros(dim, dim);
    let mut bo = DVector::zeros(dim);
    let mut bq = DMatrix::zeros(dim, n);
    let mut inj = DVector::zeros(dim);

    for i in 0..n {
        let z = graph.zone(i);
        let ca = z.air_capacitance;
        a[(air + i, air + i)] -= 1.0 / (z.envelope_resistance * ca) + 1.0 / (z.air_floor_resistance * ca);
        a[(air + i, floor + i)] += 1.0 / (z.air_floor_resistance * ca);
        bo[air + i] = 1.0 / (z.envelope_resistance * ca);
        bq[(air + i, i)] = 1.0 / ca;
        for nb in graph.neighbors(i) {
            let g = 1.0 / (nb.resistance * ca);
            a[(air + i, air + i)] -= g;
            if graph.has_walls() {
                a[(air + i, 3 * n + nb.edge)] += g;
            } else {
                a[(air + i, air + nb.zone)] += g;
            }
        }

        let cf = z.floor_capacitance;
        a[(floor + i, air + i)] += 1.0 / (z.air_floor_resistance * cf);
        a[(floor + i, floor + i)] -= 1.0 / (z.air_floor_resistance * cf) + 1.0 / (z.floor_water_resistance * cf);
        a[(floor + i, water + i)] += 1.0 / (z.floor_water_resistance * cf);

        let cw = z.water_capacitance;
        let pump = ghp.water_heat_capacity * inputs.flow[i];
        a[(water + i, floor + i)] += 1.0 / (z.floor_water_resistance * cw) - pump / cw;
        a[(water + i, water + i)] -= 1.0 / (z.floor_water_resistance * cw);
        inj[water + i] = pump * inputs.supply / cw;
    }
    if graph.has_walls() {
        for (k, e) in graph.edges().iter().enumerate() {
            let c = e.wall_capacitance.expect("validated wall capacitance");
            let g = 1.0 / (e.resistance * c);
            let row = 3 * n + k;
            a[(row, row)] -= 2.0 * g;
            a[(row, air + e.a)] += g;
            a[(row, air + e.b)] += g;
        }
    }
    Ok(LinearPlant { matrix: a, outdoor_gain: bo, heat_gain: bq, supply_injection: inj })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurwitzReport {
    pub hurwitz: bool,
    /// Largest real part over the spectrum.
    pub abscissa: f64,
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<HurwitzReport> {
    if !a.is_square() {
        return Err(Error::Structure(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("Schur decomposition did not converge".into()))?;
    let abscissa = schur
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(HurwitzReport { hurwitz: abscissa < 0.0, abscissa })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurwitzSweep {
    pub cases: usize,
    pub passed: usize,
    /// Largest spectral abscissa met over the grid.
    pub worst_abscissa: f64,
}

impl HurwitzSweep {
    pub fn all_pass(&self) -> bool {
        self.cases > 0 && self.passed == self.cases
    }
}

fn grid(lo: f64, hi: f64, levels: usize) -> impl Iterator<Item = f64> {
    (0..levels).map(move |k| if levels == 1 { lo } else { lo + (hi - lo) * k as f64 / (levels - 1) as f64 })
}

/// Stability of the plant over a `levels³` grid: uniform flow scale
/// `0..=1` of `q_max` (zero flow included), supply temperature across its box
/// and inter-zone resistance scale `0.5..=2`.
pub fn hurwitz_sweep(graph: &BuildingGraph, ghp: &GhpParams, levels: usize) -> Result<HurwitzSweep> {
    let mut sweep = HurwitzSweep { cases: 0, passed: 0, worst_abscissa: f64::NEG_INFINITY };
    for edge_scale in grid(0.5, 2.0, levels) {
        let g = graph.with_scaled_edges(edge_scale)?;
        for scale in grid(0.0, 1.0, levels) {
            let flow: Vec<f64> = g.zones().iter().map(|z| scale * z.max_flow).collect();
            for supply in grid(ghp.supply_min, ghp.supply_max, levels) {
                let lin = system_matrix(&g, ghp, &PlantInputs { flow: flow.clone(), supply })?;
                let r = is_hurwitz(&lin.matrix)?;
                sweep.cases += 1;
                sweep.passed += r.hurwitz as usize;
                sweep.worst_abscissa = sweep.worst_abscissa.max(r.abscissa);
            }
        }
    }
    Ok(sweep)
}

/// Unique equilibrium under constant inputs and disturbances.
pub fn steady_state(
    graph: &BuildingGraph,
    ghp: &GhpParams,
    inputs: &PlantInputs,
    dist: &DisturbanceSample,
) -> Result<PlantState> {
    let lin = system_matrix(graph, ghp, inputs)?;
    let w = lin.offset(dist)?;
    let x = lin
        .matrix
        .lu()
        .solve(&(-w))
        .ok_or_else(|| Error::Numeric("system matrix is singular".into()))?;
    let state = PlantState::from_slice(graph, x.as_slice())?;
    let residual = plant_rhs(&state, inputs, dist, graph, ghp)?;
    let worst = residual.to_vec().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(worst < 1e-10) {
        return Err(Error::Numeric(format!("equilibrium residual {worst:e} too large")));
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallReductionReport {
    /// max |Z_ij - (Z_i + Z_j)/2| over walls.
    pub wall_residual: f64,
    /// max gap between the wall model and the first-order model with `2·R_ij`
    /// over zone, floor and water temperatures.
    pub reduced_gap: f64,
}

/// Checks that wall states sit at the mean of their two zones at equilibrium
/// and that the first-order model with doubled inter-zone resistances has the
/// same zone equilibrium.
pub fn wall_reduction_check(
    graph: &BuildingGraph,
    ghp: &GhpParams,
    inputs: &PlantInputs,
    dist: &DisturbanceSample,
) -> Result<WallReductionReport> {
    if !graph.has_walls() {
        return Err(Error::Structure("wall states are not enabled on this graph".into()));
    }
    let full = steady_state(graph, ghp, inputs, dist)?;
    let wall_residual = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| (full.walls[k] - 0.5 * (full.air[e.a] + full.air[e.b])).abs())
        .fold(0.0, f64::max);

    let reduced_graph = graph.with_scaled_edges(2.0)?;
    let reduced = steady_state(&reduced_graph, ghp, inputs, dist)?;
    let reduced_gap = full
        .air
        .iter()
        .zip(&reduced.air)
        .chain(full.floor.iter().zip(&reduced.floor))
        .chain(full.water.iter().zip(&reduced.water))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(WallReductionReport { wall_residual, reduced_gap })
}
