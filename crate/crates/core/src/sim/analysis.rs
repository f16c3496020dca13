use serde::{Deserialize, Serialize};

use super::SimulationTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettlingCriteria {
    /// Largest allowed deviation of any state entry from its terminal value.
    pub tol_state: f64,
    /// Trailing window (s) over which the deviation must stay below `tol_state`.
    pub window: f64,
    pub kkt_tol: f64,
    pub plant_tol: f64,
}

impl Default for SettlingCriteria {
    fn default() -> Self {
        Self { tol_state: 1e-4, window: 1800.0, kkt_tol: 1e-4, plant_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettlingReport {
    pub settled: bool,
    /// Earliest recorded time after which the state stays within tolerance of
    /// its terminal value; `None` if that stretch is shorter than the window.
    pub settling_time: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub plant_residual: Option<f64>,
}

fn settled_from(rows: &[super::TraceRow], tol: f64) -> usize {
    let Some(last) = rows.last() else {
        return 0;
    };
    let mut j = rows.len() - 1;
    while j > 0 {
        let dev = rows[j - 1]
            .state
            .iter()
            .zip(&last.state)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if !(dev < tol) {
            break;
        }
        j -= 1;
    }
    j
}

pub fn detect_settling(trace: &SimulationTrace, c: &SettlingCriteria) -> SettlingReport {
    let kkt_residual = trace.terminal.as_ref().and_then(|t| t.kkt.as_ref()).map(|k| k.summary);
    let plant_residual = trace.terminal.as_ref().and_then(|t| t.plant_residual);
    let Some(last) = trace.rows.last() else {
        return SettlingReport { settled: false, settling_time: None, kkt_residual, plant_residual };
    };
    let j = settled_from(&trace.rows, c.tol_state);
    let t = trace.rows[j].time;
    let window_ok = last.time - t >= c.window;
    let settled = window_ok
        && trace.abort.is_none()
        && kkt_residual.is_none_or(|r| r < c.kkt_tol)
        && plant_residual.is_none_or(|r| r < c.plant_tol);
    SettlingReport { settled, settling_time: window_ok.then_some(t), kkt_residual, plant_residual }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSettling {
    pub start_step: u64,
    pub end_step: u64,
    pub settled: bool,
    pub settling_time: Option<f64>,
}

/// State-only settling check on each stretch between consecutive boundaries
/// (schedule change steps), using the last recorded row of each stretch as
/// its reference.
pub fn segment_settling(trace: &SimulationTrace, boundaries: &[u64], tol_state: f64, window: f64) -> Vec<SegmentSettling> {
    let end = trace.rows.last().map_or(0, |r| r.step + 1);
    let mut cuts = vec![0];
    cuts.extend(boundaries.iter().copied().filter(|&b| b > 0 && b < end));
    cuts.push(end);
    cuts.windows(2)
        .map(|w| {
            let rows: Vec<_> = trace.rows.iter().filter(|r| r.step >= w[0] && r.step < w[1]).cloned().collect();
            if rows.is_empty() {
                return SegmentSettling { start_step: w[0], end_step: w[1], settled: false, settling_time: None };
            }
            let j = settled_from(&rows, tol_state);
            let ok = rows[rows.len() - 1].time - rows[j].time >= window;
            SegmentSettling { start_step: w[0], end_step: w[1], settled: ok, settling_time: ok.then_some(rows[j].time) }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Per zone, max over the grid of `|T_i^a - T_i^b|`.
    pub max_temperature_gap: Vec<f64>,
    /// `E^b - E^a` (kWh).
    pub energy_delta: f64,
    /// Per zone total variation of the applied flow after the burn-in.
    pub flow_variation_a: Vec<f64>,
    pub flow_variation_b: Vec<f64>,
}

fn flow_variation(trace: &SimulationTrace, burn_in: f64) -> Vec<f64> {
    let n = trace.zones();
    let rows: Vec<_> = trace.rows.iter().filter(|r| r.time >= burn_in).collect();
    (0..n)
        .map(|i| rows.windows(2).map(|w| (w[1].flows[i] - w[0].flows[i]).abs()).sum())
        .collect()
}

pub fn compare_runs(a: &SimulationTrace, b: &SimulationTrace, burn_in: f64) -> Result<ComparisonReport> {
    if a.zones() != b.zones()
        || a.rows.len() != b.rows.len()
        || a.rows.iter().zip(&b.rows).any(|(x, y)| x.time.to_bits() != y.time.to_bits())
    {
        return Err(Error::Structure(format!(
            "traces are on different grids ({} rows / {} zones vs {} rows / {} zones)",
            a.rows.len(),
            a.zones(),
            b.rows.len(),
            b.zones()
        )));
    }
    let n = a.zones();
    let max_temperature_gap = (0..n)
        .map(|i| a.rows.iter().zip(&b.rows).fold(0.0f64, |m, (x, y)| m.max((x.state[i] - y.state[i]).abs())))
        .collect();
    Ok(ComparisonReport {
        max_temperature_gap,
        energy_delta: b.energy_kwh - a.energy_kwh,
        flow_variation_a: flow_variation(a, burn_in),
        flow_variation_b: flow_variation(b, burn_in),
    })
}
