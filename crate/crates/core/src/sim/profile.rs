use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A breakpoint of a piecewise profile; `at_h` is in hours from the start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Breakpoint {
    pub at_h: f64,
    pub value: f64,
}

/// Time profile of a disturbance or schedule.
///
/// Step profiles hold each value from its breakpoint until the next one;
/// changes take effect at the first integration step starting at or after
/// the breakpoint and stay frozen within a step. Linear profiles interpolate
/// between breakpoints, hold their end values outside, and are evaluated at
/// each Runge-Kutta stage time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    Step { points: Vec<Breakpoint> },
    Linear { points: Vec<Breakpoint> },
}

const SNAP_TOL: f64 = 1e-9;

impl Profile {
    pub fn constant(value: f64) -> Self {
        Profile::Constant { value }
    }

    pub fn steps(points: &[(f64, f64)]) -> Self {
        Profile::Step { points: points.iter().map(|&(at_h, value)| Breakpoint { at_h, value }).collect() }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidParameter { field: field.to_string(), reason });
        match self {
            Profile::Constant { value } => {
                if !value.is_finite() {
                    return bad(format!("value {value} is not finite"));
                }
            }
            Profile::Step { points } | Profile::Linear { points } => {
                if points.is_empty() {
                    return bad("profile has no breakpoints".into());
                }
                for (k, p) in points.iter().enumerate() {
                    if !p.at_h.is_finite() || !p.value.is_finite() || p.at_h < 0.0 {
                        return bad(format!("breakpoint {k} ({}, {}) is not a finite non-negative time/value", p.at_h, p.value));
                    }
                    if k > 0 && p.at_h <= points[k - 1].at_h {
                        return bad(format!("breakpoint times must increase (point {k} at {} h)", p.at_h));
                    }
                }
            }
        }
        Ok(())
    }

    /// Value at time `t` seconds, with step changes taking effect exactly at their breakpoints.
    pub fn at(&self, t: f64) -> f64 {
        let h = t / 3600.0;
        match self {
            Profile::Constant { value } => *value,
            Profile::Step { points } => {
                let mut v = points[0].value;
                for p in points {
                    if p.at_h <= h {
                        v = p.value;
                    } else {
                        break;
                    }
                }
                v
            }
            Profile::Linear { points } => interpolate(points, h),
        }
    }

    /// Value seen by Runge-Kutta stage `c` (fraction of the step) of step `k`.
    pub fn sample(&self, k: u64, c: f64, dt: f64) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Step { points } => {
                let mut v = points[0].value;
                for p in points {
                    if snap(p.at_h, dt) <= k {
                        v = p.value;
                    } else {
                        break;
                    }
                }
                v
            }
            Profile::Linear { points } => interpolate(points, (k as f64 + c) * dt / 3600.0),
        }
    }

    /// Step indices at which a step profile changes value.
    pub fn change_steps(&self, dt: f64) -> Vec<u64> {
        match self {
            Profile::Step { points } => points.iter().skip(1).map(|p| snap(p.at_h, dt)).collect(),
            _ => Vec::new(),
        }
    }

    pub fn is_piecewise_constant(&self) -> bool {
        !matches!(self, Profile::Linear { .. })
    }
}

/// First step index whose start time is at or after `at_h`.
pub(crate) fn snap(at_h: f64, dt: f64) -> u64 {
    let r = at_h * 3600.0 / dt - SNAP_TOL;
    if r <= 0.0 {
        0
    } else {
        r.ceil() as u64
    }
}

fn interpolate(points: &[Breakpoint], h: f64) -> f64 {
    let first = points[0];
    if h <= first.at_h {
        return first.value;
    }
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if h <= b.at_h {
            return a.value + (b.value - a.value) * (h - a.at_h) / (b.at_h - a.at_h);
        }
    }
    points[points.len() - 1].value
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_changes_at_breakpoint() {
        let p = Profile::steps(&[(0.0, 4.0), (5.0, -4.0)]);
        assert_eq!(p.at(5.0 * 3600.0 - 1.0), 4.0);
        assert_eq!(p.at(5.0 * 3600.0), -4.0);
        // breakpoint 18000 s on a 0.1 s grid is step 180000 despite rounding in 18000/0.1
        assert_eq!(p.sample(179_999, 0.5, 0.1), 4.0);
        assert_eq!(p.sample(180_000, 0.0, 0.1), -4.0);
        assert_eq!(p.change_steps(0.1), vec![180_000]);
    }

    #[test]
    fn off_grid_breakpoint_rounds_up() {
        let p = Profile::steps(&[(0.0, 1.0), (1.0 / 3600.0 * 0.25, 2.0)]);
        assert_eq!(snap(0.25 / 3600.0, 0.1), 3);
        assert_eq!(p.sample(2, 0.0, 0.1), 1.0);
        assert_eq!(p.sample(3, 0.0, 0.1), 2.0);
    }

    #[test]
    fn linear_holds_ends() {
        let p = Profile::Linear { points: vec![Breakpoint { at_h: 1.0, value: 0.0 }, Breakpoint { at_h: 3.0, value: 4.0 }] };
        assert_eq!(p.at(0.0), 0.0);
        assert_eq!(p.at(2.0 * 3600.0), 2.0);
        assert_eq!(p.at(10.0 * 3600.0), 4.0);
        assert_eq!(p.sample(3600, 0.5, 1.0), 0.0 + 4.0 * (3600.5 / 3600.0 - 1.0) / 2.0);
    }

    #[test]
    fn validation() {
        assert!(Profile::steps(&[]).validate("x").is_err());
        assert!(Profile::steps(&[(0.0, 1.0), (0.0, 2.0)]).validate("x").is_err());
        assert!(Profile::constant(f64::NAN).validate("x").is_err());
        Profile::steps(&[(0.0, 1.0), (2.0, 2.0)]).validate("x").unwrap();
    }
}
