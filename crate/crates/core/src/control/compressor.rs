use serde::{Deserialize, Serialize};

use super::project;
use crate::error::{ensure_positive, Error, Result};
use crate::model::GhpParams;
use crate::oracle::cop;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressorGains {
    pub k_ts: f64,
    pub k_nu_plus: f64,
    pub k_nu_minus: f64,
}

impl Default for CompressorGains {
    fn default() -> Self {
        Self { k_ts: 0.05, k_nu_plus: 1.0, k_nu_minus: 1.0 }
    }
}

impl CompressorGains {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        ensure_positive(format!("{prefix}k_ts"), self.k_ts)?;
        ensure_positive(format!("{prefix}k_nu_plus"), self.k_nu_plus)?;
        ensure_positive(format!("{prefix}k_nu_minus"), self.k_nu_minus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CompressorState {
    pub supply: f64,
    pub nu_plus: f64,
    pub nu_minus: f64,
}

impl CompressorState {
    pub const LEN: usize = 3;
    pub const DUALS: [usize; 2] = [1, 2];

    pub fn to_array(&self) -> [f64; 3] {
        [self.supply, self.nu_plus, self.nu_minus]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self { supply: x[0], nu_plus: x[1], nu_minus: x[2] }
    }
}

/// Zone feedback to the compressor: `u_i` and `μ_i^+ q_i^max c_w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneToCompressorMsg {
    pub sender: usize,
    pub heat: f64,
    pub mu_kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressorBroadcast {
    pub supply: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressorController {
    zones: usize,
    ghp: GhpParams,
    gains: CompressorGains,
}

impl CompressorController {
    pub fn new(zones: usize, ghp: &GhpParams, gains: &CompressorGains) -> Result<Self> {
        if zones == 0 {
            return Err(Error::Structure("compressor needs at least one zone".into()));
        }
        ghp.validate()?;
        gains.validate("compressor.")?;
        Ok(Self { zones, ghp: ghp.clone(), gains: *gains })
    }

    pub fn zones(&self) -> usize {
        self.zones
    }

    /// Supply temperature starts at the middle of its box, multipliers at zero.
    pub fn init(&self) -> CompressorState {
        CompressorState { supply: 0.5 * (self.ghp.supply_min + self.ghp.supply_max), nu_plus: 0.0, nu_minus: 0.0 }
    }

    pub fn broadcast(&self, x: &CompressorState) -> CompressorBroadcast {
        CompressorBroadcast { supply: x.supply }
    }

    /// `inbox` must hold one message per zone in zone order; sums run in that order.
    pub fn rhs(&self, x: &CompressorState, inbox: &[ZoneToCompressorMsg], energy_weight: f64) -> Result<CompressorState> {
        if inbox.len() != self.zones || inbox.iter().enumerate().any(|(i, m)| m.sender != i) {
            return Err(Error::Structure(format!(
                "compressor expects one message from each of {} zones in order, got senders {:?}",
                self.zones,
                inbox.iter().map(|m| m.sender).collect::<Vec<_>>()
            )));
        }
        let d = cop(x.supply, &self.ghp)?;
        let sigma = self.ghp.mode.sign();
        let mut u_sq = 0.0;
        let mut mu_kappa = 0.0;
        for m in inbox {
            u_sq += m.heat * m.heat;
            mu_kappa += m.mu_kappa;
        }
        let g = &self.gains;
        Ok(CompressorState {
            supply: g.k_ts
                * (-self.ghp.cop_slope * energy_weight * u_sq / (d * d) + sigma * mu_kappa - x.nu_plus + x.nu_minus),
            nu_plus: g.k_nu_plus * project(x.supply - self.ghp.supply_max, x.nu_plus),
            nu_minus: g.k_nu_minus * project(self.ghp.supply_min - x.supply, x.nu_minus),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference_ghp;

    fn idle(n: usize) -> Vec<ZoneToCompressorMsg> {
        (0..n).map(|i| ZoneToCompressorMsg { sender: i, heat: 0.0, mu_kappa: 0.0 }).collect()
    }

    #[test]
    fn idle_zones_leave_supply_alone() {
        let c = CompressorController::new(4, &reference_ghp(), &CompressorGains::default()).unwrap();
        let d = c.rhs(&c.init(), &idle(4), 5.0).unwrap();
        assert_eq!(d, CompressorState { supply: 0.0, nu_plus: 0.0, nu_minus: 0.0 });
    }

    #[test]
    fn lower_bound_projection_at_boundary() {
        let c = CompressorController::new(2, &reference_ghp(), &CompressorGains::default()).unwrap();
        let mut inbox = idle(2);
        inbox[0].heat = 1.0;
        let x = CompressorState { supply: 38.0, nu_plus: 0.0, nu_minus: 0.0 };
        let d = c.rhs(&x, &inbox, 1.0).unwrap();
        assert!(d.supply < 0.0);
        assert_eq!(d.nu_minus, 0.0);
        let below = CompressorState { supply: 37.5, ..x };
        assert_eq!(c.rhs(&below, &inbox, 1.0).unwrap().nu_minus, 0.5);
    }

    #[test]
    fn inbox_must_cover_every_zone_once() {
        let c = CompressorController::new(3, &reference_ghp(), &CompressorGains::default()).unwrap();
        let x = c.init();
        assert!(matches!(c.rhs(&x, &idle(2), 1.0), Err(Error::Structure(_))));
        let mut dup = idle(3);
        dup[2].sender = 1;
        assert!(matches!(c.rhs(&x, &dup, 1.0), Err(Error::Structure(_))));
    }
}
