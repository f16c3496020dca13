use serde::{Deserialize, Serialize};

use super::{
    actuation_clamp, project, recover_flow, NeighborMsg, ZoneGains, ZoneMeasurement, ZoneSchedule, ZoneToCompressorMsg,
};
use crate::error::{Error, Result};
use crate::model::{BuildingGraph, GhpParams, Neighbor, ZoneParams};
use crate::oracle::{cop, PrimalDualPoint};

/// Scenario-I zone controller state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ZoneCtrl1State {
    pub z: f64,
    pub u: f64,
    pub u_hat: f64,
    pub zf: f64,
    pub zf_hat: f64,
    pub zeta_tilde: f64,
    pub lambda: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
}

/// Scenario-II zone controller state (no `û`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ZoneCtrl2State {
    pub z: f64,
    pub u: f64,
    pub zf: f64,
    pub zf_hat: f64,
    pub zeta_tilde: f64,
    pub lambda: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
}

impl ZoneCtrl1State {
    pub const LEN: usize = 9;

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.z,
            self.u,
            self.u_hat,
            self.zf,
            self.zf_hat,
            self.zeta_tilde,
            self.lambda,
            self.mu_plus,
            self.mu_minus,
        ]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            z: x[0],
            u: x[1],
            u_hat: x[2],
            zf: x[3],
            zf_hat: x[4],
            zeta_tilde: x[5],
            lambda: x[6],
            mu_plus: x[7],
            mu_minus: x[8],
        }
    }

    /// Offsets of `μ^+`, `μ^-` in [`Self::to_array`].
    pub const DUALS: [usize; 2] = [7, 8];
}

impl ZoneCtrl2State {
    pub const LEN: usize = 8;

    pub fn to_array(&self) -> [f64; 8] {
        [self.z, self.u, self.zf, self.zf_hat, self.zeta_tilde, self.lambda, self.mu_plus, self.mu_minus]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            z: x[0],
            u: x[1],
            zf: x[2],
            zf_hat: x[3],
            zeta_tilde: x[4],
            lambda: x[5],
            mu_plus: x[6],
            mu_minus: x[7],
        }
    }

    pub const DUALS: [usize; 2] = [6, 7];
}

/// Parts shared by both zone controllers.
#[derive(Debug, Clone, PartialEq)]
struct ZoneCore {
    index: usize,
    params: ZoneParams,
    neighbors: Vec<Neighbor>,
    ghp: GhpParams,
    gains: ZoneGains,
    decentralized: bool,
}

struct Shared {
    z: f64,
    u: f64,
    zf: f64,
    zf_hat: f64,
    zeta_tilde: f64,
    lambda: f64,
    mu_plus: f64,
    mu_minus: f64,
}

struct SharedDot {
    z: f64,
    zf: f64,
    zf_hat: f64,
    zeta_tilde: f64,
    lambda: f64,
    mu_plus: f64,
    mu_minus: f64,
    /// `-λ - σμ^+ + σμ^-`, the dual part of the `u` drift.
    dual_u: f64,
    cop: f64,
}

impl ZoneCore {
    fn new(graph: &BuildingGraph, index: usize, ghp: &GhpParams, gains: &ZoneGains) -> Result<Self> {
        if index >= graph.len() {
            return Err(Error::Structure(format!("zone {index} not in a {}-zone building", graph.len())));
        }
        if graph.has_walls() {
            return Err(Error::Structure(
                "controllers run on the first-order model; reduce wall states before building them".into(),
            ));
        }
        ghp.validate()?;
        gains.validate(&format!("gains[{index}]."))?;
        Ok(Self {
            index,
            params: graph.zone(index).clone(),
            neighbors: graph.neighbors(index).to_vec(),
            ghp: ghp.clone(),
            gains: *gains,
            decentralized: false,
        })
    }

    fn links(&self) -> &[Neighbor] {
        if self.decentralized {
            &[]
        } else {
            &self.neighbors
        }
    }

    fn check_msgs(&self, msgs: &[NeighborMsg]) -> Result<()> {
        if self.decentralized {
            return Ok(());
        }
        let ok = msgs.len() == self.neighbors.len()
            && msgs.iter().zip(&self.neighbors).all(|(m, nb)| m.sender == nb.zone);
        if ok {
            Ok(())
        } else {
            Err(Error::Structure(format!(
                "zone {} expects messages from {:?}, got {:?}",
                self.index,
                self.neighbors.iter().map(|n| n.zone).collect::<Vec<_>>(),
                msgs.iter().map(|m| m.sender).collect::<Vec<_>>()
            )))
        }
    }

    fn zeta(&self, zeta_tilde: f64, meas: &ZoneMeasurement) -> f64 {
        self.gains.k_zeta * (zeta_tilde + self.params.air_capacitance * meas.air)
    }

    fn zeta_tilde_for(&self, zeta: f64, meas: &ZoneMeasurement) -> f64 {
        zeta / self.gains.k_zeta - self.params.air_capacitance * meas.air
    }

    fn kappa(&self) -> f64 {
        self.params.max_flow * self.ghp.water_heat_capacity
    }

    fn shared(
        &self,
        v: &Shared,
        meas: &ZoneMeasurement,
        msgs: &[NeighborMsg],
        sched: &ZoneSchedule,
    ) -> Result<SharedDot> {
        self.check_msgs(msgs)?;
        let p = &self.params;
        let g = &self.gains;
        let sigma = self.ghp.mode.sign();
        let kappa = self.kappa();
        let d = cop(sched.supply, &self.ghp)?;
        let zeta = self.zeta(v.zeta_tilde, meas);
        let e = meas.air - v.z;
        let ef = meas.floor - v.zf;
        let raf = p.air_floor_resistance;

        let mut diag = 1.0 / p.envelope_resistance + 1.0 / raf;
        let mut cross = 0.0;
        let mut coupling = 0.0;
        for (nb, m) in self.links().iter().zip(msgs) {
            diag += 1.0 / nb.resistance;
            cross += m.zeta / nb.resistance;
            coupling += (e - m.tracking_error) / nb.resistance;
        }

        Ok(SharedDot {
            z: g.k_z * (p.comfort_weight * (sched.setpoint - v.z) + zeta * diag - cross - v.lambda / raf),
            zf: g.k_zf * ((v.lambda - zeta) / raf - sigma * v.mu_plus * kappa + g.k_ezf * (v.zf_hat - v.zf)),
            zf_hat: g.k_ezf_hat * (v.zf - v.zf_hat),
            zeta_tilde: e / p.envelope_resistance + coupling + (e - ef) / raf,
            lambda: g.k_lambda * ((v.z - v.zf) / raf + v.u),
            mu_plus: g.k_mu_plus * project(sigma * (v.u - kappa * (sched.supply - v.zf)), v.mu_plus),
            mu_minus: g.k_mu_minus * project(-sigma * v.u, v.mu_minus),
            dual_u: -v.lambda - sigma * v.mu_plus + sigma * v.mu_minus,
            cop: d,
        })
    }

    fn message(&self, zeta_tilde: f64, z: f64, meas: &ZoneMeasurement) -> NeighborMsg {
        NeighborMsg { sender: self.index, zeta: self.zeta(zeta_tilde, meas), tracking_error: meas.air - z }
    }

    fn applied_flow(&self, u: f64, zf: f64, supply: f64) -> Result<f64> {
        let q = recover_flow(u, supply, zf, self.ghp.water_heat_capacity)?;
        Ok(actuation_clamp(q, self.params.max_flow))
    }
}

macro_rules! common_api {
    () => {
        pub fn index(&self) -> usize {
            self.core.index
        }

        pub fn params(&self) -> &ZoneParams {
            &self.core.params
        }

        pub fn gains(&self) -> &ZoneGains {
            &self.core.gains
        }

        pub fn is_decentralized(&self) -> bool {
            self.core.decentralized
        }

        /// Neighbours this controller exchanges messages with (empty when decentralized).
        pub fn links(&self) -> &[Neighbor] {
            self.core.links()
        }

        /// Drops the inter-zone terms (`R_ij = ∞`): the controller ignores
        /// neighbour messages and needs only local measurements.
        pub fn decentralized(mut self) -> Self {
            self.core.decentralized = true;
            self
        }

        /// `ζ_i = k_ζ (ζ̃_i + C_i T_i)`.
        pub fn zeta(&self, zeta_tilde: f64, meas: &ZoneMeasurement) -> f64 {
            self.core.zeta(zeta_tilde, meas)
        }
    };
}

/// Flow-rate controller with a fixed supply temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneController1 {
    core: ZoneCore,
}

impl ZoneController1 {
    pub fn new(graph: &BuildingGraph, index: usize, ghp: &GhpParams, gains: &ZoneGains) -> Result<Self> {
        Ok(Self { core: ZoneCore::new(graph, index, ghp, gains)? })
    }

    common_api!();

    pub fn init(&self, meas: &ZoneMeasurement) -> ZoneCtrl1State {
        ZoneCtrl1State {
            z: meas.air,
            u: 0.0,
            u_hat: 0.0,
            zf: meas.floor,
            zf_hat: meas.floor,
            zeta_tilde: -self.core.params.air_capacitance * meas.air,
            lambda: 0.0,
            mu_plus: 0.0,
            mu_minus: 0.0,
        }
    }

    /// Controller state sitting at zone `index` of a primal-dual point, with
    /// damping states at rest.
    pub fn state_from_point(&self, point: &PrimalDualPoint, meas: &ZoneMeasurement) -> ZoneCtrl1State {
        let i = self.core.index;
        ZoneCtrl1State {
            z: point.air[i],
            u: point.heat[i],
            u_hat: point.heat[i],
            zf: point.floor[i],
            zf_hat: point.floor[i],
            zeta_tilde: self.core.zeta_tilde_for(point.zeta[i], meas),
            lambda: point.lambda[i],
            mu_plus: point.mu_plus[i],
            mu_minus: point.mu_minus[i],
        }
    }

    pub fn message(&self, x: &ZoneCtrl1State, meas: &ZoneMeasurement) -> NeighborMsg {
        self.core.message(x.zeta_tilde, x.z, meas)
    }

    /// Flow sent to the valve: recovered from `u` and clamped to `[0, q_max]`.
    pub fn applied_flow(&self, x: &ZoneCtrl1State, supply: f64) -> Result<f64> {
        self.core.applied_flow(x.u, x.zf, supply)
    }

    pub fn rhs(
        &self,
        x: &ZoneCtrl1State,
        meas: &ZoneMeasurement,
        msgs: &[NeighborMsg],
        sched: &ZoneSchedule,
    ) -> Result<ZoneCtrl1State> {
        let sh = self.core.shared(
            &Shared {
                z: x.z,
                u: x.u,
                zf: x.zf,
                zf_hat: x.zf_hat,
                zeta_tilde: x.zeta_tilde,
                lambda: x.lambda,
                mu_plus: x.mu_plus,
                mu_minus: x.mu_minus,
            },
            meas,
            msgs,
            sched,
        )?;
        let g = &self.core.gains;
        let sigma = self.core.ghp.mode.sign();
        Ok(ZoneCtrl1State {
            z: sh.z,
            u: g.k_u * (-sched.energy_weight * sigma / sh.cop + sh.dual_u + g.k_eu * (x.u_hat - x.u)),
            u_hat: g.k_eu_hat * (x.u - x.u_hat),
            zf: sh.zf,
            zf_hat: sh.zf_hat,
            zeta_tilde: sh.zeta_tilde,
            lambda: sh.lambda,
            mu_plus: sh.mu_plus,
            mu_minus: sh.mu_minus,
        })
    }
}

/// Zone controller of the joint scheme; the supply temperature comes from the
/// compressor broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneController2 {
    core: ZoneCore,
}

impl ZoneController2 {
    pub fn new(graph: &BuildingGraph, index: usize, ghp: &GhpParams, gains: &ZoneGains) -> Result<Self> {
        Ok(Self { core: ZoneCore::new(graph, index, ghp, gains)? })
    }

    common_api!();

    /// Zone-to-zone messages dropped; the compressor link stays.
    pub fn reduced_comm(self) -> Self {
        self.decentralized()
    }

    pub fn init(&self, meas: &ZoneMeasurement) -> ZoneCtrl2State {
        ZoneCtrl2State {
            z: meas.air,
            u: 0.0,
            zf: meas.floor,
            zf_hat: meas.floor,
            zeta_tilde: -self.core.params.air_capacitance * meas.air,
            lambda: 0.0,
            mu_plus: 0.0,
            mu_minus: 0.0,
        }
    }

    pub fn state_from_point(&self, point: &PrimalDualPoint, meas: &ZoneMeasurement) -> ZoneCtrl2State {
        let i = self.core.index;
        ZoneCtrl2State {
            z: point.air[i],
            u: point.heat[i],
            zf: point.floor[i],
            zf_hat: point.floor[i],
            zeta_tilde: self.core.zeta_tilde_for(point.zeta[i], meas),
            lambda: point.lambda[i],
            mu_plus: point.mu_plus[i],
            mu_minus: point.mu_minus[i],
        }
    }

    pub fn message(&self, x: &ZoneCtrl2State, meas: &ZoneMeasurement) -> NeighborMsg {
        self.core.message(x.zeta_tilde, x.z, meas)
    }

    pub fn compressor_message(&self, x: &ZoneCtrl2State) -> ZoneToCompressorMsg {
        ZoneToCompressorMsg { sender: self.core.index, heat: x.u, mu_kappa: x.mu_plus * self.core.kappa() }
    }

    pub fn applied_flow(&self, x: &ZoneCtrl2State, supply: f64) -> Result<f64> {
        self.core.applied_flow(x.u, x.zf, supply)
    }

    pub fn rhs(
        &self,
        x: &ZoneCtrl2State,
        meas: &ZoneMeasurement,
        msgs: &[NeighborMsg],
        sched: &ZoneSchedule,
    ) -> Result<ZoneCtrl2State> {
        let sh = self.core.shared(
            &Shared {
                z: x.z,
                u: x.u,
                zf: x.zf,
                zf_hat: x.zf_hat,
                zeta_tilde: x.zeta_tilde,
                lambda: x.lambda,
                mu_plus: x.mu_plus,
                mu_minus: x.mu_minus,
            },
            meas,
            msgs,
            sched,
        )?;
        let g = &self.core.gains;
        Ok(ZoneCtrl2State {
            z: sh.z,
            u: g.k_u * (-2.0 * sched.energy_weight * x.u / sh.cop + sh.dual_u),
            zf: sh.zf,
            zf_hat: sh.zf_hat,
            zeta_tilde: sh.zeta_tilde,
            lambda: sh.lambda,
            mu_plus: sh.mu_plus,
            mu_minus: sh.mu_minus,
        })
    }
}
