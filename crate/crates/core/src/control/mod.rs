//! Zone and compressor controllers.
//!
//! Each zone controller sees only its own parameters, its own measured air
//! and floor temperatures, the messages from its neighbours and the supply
//! temperature. Outdoor temperature and heat gains never appear in any
//! signature here.

mod compressor;
mod zone;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

pub use compressor::{CompressorBroadcast, CompressorController, CompressorGains, CompressorState, ZoneToCompressorMsg};
pub use zone::{ZoneController1, ZoneController2, ZoneCtrl1State, ZoneCtrl2State};

/// Guard on `|T_s - Z_f|` in flow recovery (°C).
pub const DEGENERATE_GAP: f64 = 1e-6;

/// `h` if `x > 0`, `max(0, h)` if `x = 0`.
pub fn positive_projection(h: f64, x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Contract(format!("projected variable is negative ({x})")));
    }
    Ok(if x > 0.0 { h } else { h.max(0.0) })
}

/// Projection used inside the vector field. Intermediate Runge-Kutta stages
/// may carry a multiplier a hair below zero; those are treated as on the
/// boundary.
#[inline]
pub(crate) fn project(h: f64, x: f64) -> f64 {
    if x > 0.0 {
        h
    } else {
        h.max(0.0)
    }
}

/// Zone controller gains. `k_eu`, `k_eu_hat` are unused by the scenario-II
/// controller, which has no `û` state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoneGains {
    pub k_z: f64,
    pub k_u: f64,
    pub k_eu: f64,
    pub k_eu_hat: f64,
    pub k_zf: f64,
    pub k_ezf: f64,
    pub k_ezf_hat: f64,
    pub k_zeta: f64,
    pub k_lambda: f64,
    pub k_mu_plus: f64,
    pub k_mu_minus: f64,
}

pub type Gains1 = ZoneGains;
pub type Gains2 = ZoneGains;

impl Default for ZoneGains {
    fn default() -> Self {
        Self {
            k_z: 0.025,
            k_u: 1.0,
            k_eu: 10.0,
            k_eu_hat: 0.1,
            k_zf: 0.033,
            k_ezf: 2.0,
            k_ezf_hat: 1.0,
            k_zeta: 1.0,
            k_lambda: 1.0,
            k_mu_plus: 1.0,
            k_mu_minus: 1.0,
        }
    }
}

impl ZoneGains {
    /// Same gains with the damping couplings `k_eu`, `k_ezf` switched off.
    pub fn without_extra_dynamics(mut self) -> Self {
        self.k_eu = 0.0;
        self.k_ezf = 0.0;
        self
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (name, v) in [
            ("k_z", self.k_z),
            ("k_u", self.k_u),
            ("k_eu_hat", self.k_eu_hat),
            ("k_zf", self.k_zf),
            ("k_ezf_hat", self.k_ezf_hat),
            ("k_zeta", self.k_zeta),
            ("k_lambda", self.k_lambda),
            ("k_mu_plus", self.k_mu_plus),
            ("k_mu_minus", self.k_mu_minus),
        ] {
            ensure_positive(format!("{prefix}{name}"), v)?;
        }
        for (name, v) in [("k_eu", self.k_eu), ("k_ezf", self.k_ezf)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter {
                    field: format!("{prefix}{name}"),
                    reason: format!("must be >= 0 (got {v})"),
                });
            }
        }
        Ok(())
    }
}

/// What a zone controller measures from the plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneMeasurement {
    pub air: f64,
    pub floor: f64,
}

/// Time-varying settings a zone controller is told about: the supply
/// temperature (fixed profile or compressor broadcast), its set point and the
/// energy weight `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneSchedule {
    pub supply: f64,
    pub setpoint: f64,
    pub energy_weight: f64,
}

/// Zone-to-zone feedback: `ζ_j` and the tracking error `T_j - Z_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborMsg {
    pub sender: usize,
    pub zeta: f64,
    pub tracking_error: f64,
}

/// `q = u / (c_w (T_s - Z_f))`. In cooling both `u` and the gap are negative.
pub fn recover_flow(heat: f64, supply: f64, floor: f64, water_heat_capacity: f64) -> Result<f64> {
    let gap = supply - floor;
    if !(gap.abs() >= DEGENERATE_GAP) {
        return Err(Error::DegenerateDenominator { gap: gap.abs() });
    }
    Ok(heat / (water_heat_capacity * gap))
}

/// Valve saturation applied before the flow reaches the plant.
pub fn actuation_clamp(flow: f64, max_flow: f64) -> f64 {
    flow.clamp(0.0, max_flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_cases() {
        assert_eq!(positive_projection(-2.0, 1.5).unwrap(), -2.0);
        assert_eq!(positive_projection(-2.0, 0.0).unwrap(), 0.0);
        assert_eq!(positive_projection(3.0, 0.0).unwrap(), 3.0);
        assert!(matches!(positive_projection(1.0, -1e-3), Err(Error::Contract(_))));
    }

    #[test]
    fn flow_recovery() {
        assert_eq!(recover_flow(0.0, 40.0, 30.0, 4.186).unwrap(), 0.0);
        let q = recover_flow(0.41860, 40.0, 30.0, 4.186).unwrap();
        assert!((q - 0.01).abs() < 1e-15);
        assert!((4.186 * q * 10.0 - 0.4186).abs() < 1e-15);
        assert!(matches!(
            recover_flow(1.0, 30.0 + 1e-12, 30.0, 4.186),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn clamp_to_valve_range() {
        assert_eq!(actuation_clamp(-0.1, 0.03), 0.0);
        assert_eq!(actuation_clamp(0.1, 0.03), 0.03);
        assert_eq!(actuation_clamp(0.01, 0.03), 0.01);
    }

    #[test]
    fn gains_validation() {
        ZoneGains::default().validate("").unwrap();
        ZoneGains::default().without_extra_dynamics().validate("").unwrap();
        let mut g = ZoneGains::default();
        g.k_lambda = 0.0;
        assert!(matches!(g.validate("controller."), Err(Error::InvalidParameter { field, .. }) if field == "controller.k_lambda"));
    }
}
