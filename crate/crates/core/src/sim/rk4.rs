//! Classic fourth-order Runge-Kutta, split into stages so that the
//! monolithic engine and the agent runner perform identical arithmetic on
//! every state entry.

use crate::error::{Error, Result};

/// Fraction of the step at which each stage evaluates the vector field.
pub const STAGE_OFFSETS: [f64; 4] = [0.0, 0.5, 0.5, 1.0];

/// State at which stage `stage` (1, 2 or 3) evaluates, built from the
/// previous stage's slope: `x0 + h k` with `h = dt/2, dt/2, dt`.
#[inline]
pub fn stage_state(stage: usize, x0: &[f64], k: &[f64], dt: f64, out: &mut [f64]) {
    let h = if stage == 3 { dt } else { 0.5 * dt };
    for ((o, a), b) in out.iter_mut().zip(x0).zip(k) {
        *o = a + h * b;
    }
}

/// `x0 + dt/6 (k1 + 2 k2 + 2 k3 + k4)`.
#[inline]
pub fn combine(x0: &[f64], k: [&[f64]; 4], dt: f64, out: &mut [f64]) {
    let w = dt / 6.0;
    for i in 0..out.len() {
        out[i] = x0[i] + w * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

/// Scratch space for [`integrate_step`].
#[derive(Debug, Clone, Default)]
pub struct Rk4Workspace {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
    x0: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(len: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![0.0; len]), stage: vec![0.0; len], x0: vec![0.0; len] }
    }

    fn resize(&mut self, len: usize) {
        if self.stage.len() != len {
            *self = Self::new(len);
        }
    }
}

/// One step of `ẋ = f(stage, x)`, where `stage` is the stage index 0..4.
pub fn integrate_step<F>(mut f: F, x: &mut [f64], dt: f64, ws: &mut Rk4Workspace) -> Result<()>
where
    F: FnMut(usize, &[f64], &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter { field: "dt".into(), reason: format!("must be > 0 (got {dt})") });
    }
    ws.resize(x.len());
    let Rk4Workspace { k, stage, x0 } = ws;
    let [k1, k2, k3, k4] = k;
    f(0, x, k1)?;
    stage_state(1, x, k1, dt, stage);
    f(1, stage, k2)?;
    stage_state(2, x, k2, dt, stage);
    f(2, stage, k3)?;
    stage_state(3, x, k3, dt, stage);
    f(3, stage, k4)?;
    x0.copy_from_slice(x);
    combine(x0, [k1, k2, k3, k4], dt, x);
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("state entry {i} became {} during the step", x[i])));
    }
    Ok(())
}
