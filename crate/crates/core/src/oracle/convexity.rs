use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::cop;
use crate::error::{Error, Result};
use crate::model::GhpParams;

/// The chain showing `Σ u_i² / COP` bounds the squared heat pump power from above:
///
/// ```text
/// Σ u_i² / D  >=  (Σ |u_i|)² / (n D)  =  (D / n) (Σ |u_i|)² / D²  >=  (D_min / n) (Σ |u_i|)² / D²
/// ```
///
/// with `D = b - a T_s` and `D_min = b - a T_s^max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchySchwarzChain {
    pub quadratic: f64,
    pub chain: [f64; 3],
}

impl CauchySchwarzChain {
    /// The chain is non-increasing up to a relative tolerance.
    pub fn holds(&self, rel_tol: f64) -> bool {
        let tol = rel_tol * self.quadratic.abs().max(1e-300);
        self.quadratic + tol >= self.chain[0] && self.chain[0] + tol >= self.chain[1] && self.chain[1] + tol >= self.chain[2]
    }
}

pub fn cauchy_schwarz_chain(heat: &[f64], supply: f64, ghp: &GhpParams) -> Result<CauchySchwarzChain> {
    if heat.is_empty() {
        return Err(Error::Structure("no zones".into()));
    }
    if supply > ghp.supply_max {
        return Err(Error::InvalidParameter {
            field: "supply".into(),
            reason: format!("{supply} above supply_max {}", ghp.supply_max),
        });
    }
    let d = cop(supply, ghp)?;
    let d_min = cop(ghp.supply_max, ghp)?;
    let n = heat.len() as f64;
    let sq: f64 = heat.iter().map(|u| u * u).sum();
    let l1: f64 = heat.iter().map(|u| u.abs()).sum();
    Ok(CauchySchwarzChain {
        quadratic: sq / d,
        chain: [l1 * l1 / (n * d), d / n * l1 * l1 / (d * d), d_min / n * l1 * l1 / (d * d)],
    })
}

/// Hessian of `Σ u_i² / (b - a T_s)` in `(u, T_s)` with its smallest eigenvalue.
pub fn energy_hessian(heat: &[f64], supply: f64, ghp: &GhpParams) -> Result<(DMatrix<f64>, f64)> {
    let d = cop(supply, ghp)?;
    let a = ghp.cop_slope;
    let n = heat.len();
    let mut h = DMatrix::zeros(n + 1, n + 1);
    let sq: f64 = heat.iter().map(|u| u * u).sum();
    for (i, u) in heat.iter().enumerate() {
        h[(i, i)] = 2.0 / d;
        let cross = 2.0 * a * u / (d * d);
        h[(i, n)] = cross;
        h[(n, i)] = cross;
    }
    h[(n, n)] = 2.0 * a * a * sq / (d * d * d);
    let min_eig = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((h, min_eig))
}
