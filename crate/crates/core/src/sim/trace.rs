use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{ClosedLoop, SettlingCriteria, SettlingReport, StateLayout, StepOutputs};
use crate::error::{Error, Result};
use crate::model::GhpParams;
use crate::oracle::{energy_exact, kkt_residual, KktReport, PrimalDualPoint};

pub const FLAG_MODE_VIOLATION: u8 = 1;
pub const FLAG_SUPPLY_EXCURSION: u8 = 2;
pub const FLAG_DUAL_CLAMP: u8 = 4;

/// One recorded step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    /// Seconds.
    pub time: f64,
    /// Full closed-loop state at the start of the step.
    pub state: Vec<f64>,
    pub flows: Vec<f64>,
    pub supply: f64,
    pub outdoor: f64,
    pub gains: Vec<f64>,
    pub energy_weight: f64,
    /// Electrical power (kW).
    pub power: f64,
    /// Cumulative energy (kWh) up to this step.
    pub energy_kwh: f64,
    pub flags: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum EventKind {
    /// Supply temperature on the wrong side of a floor temperature (starts or ends).
    ModeViolation { zone: usize, active: bool },
    /// Supply temperature outside its box (starts or ends).
    SupplyExcursion { supply: f64, active: bool },
    /// A multiplier went negative over a step and was reset to zero.
    DualClamp { offset: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub step: u64,
    pub time: f64,
    pub error: String,
}

/// Closed-loop point at the end of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub step: u64,
    pub point: PrimalDualPoint,
    /// KKT residual against the problem in force at the final step.
    pub kkt: Option<KktReport>,
    pub plant_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub layout: StateLayout,
    pub dt: f64,
    pub rows: Vec<TraceRow>,
    pub events: Vec<Event>,
    pub energy_kwh: f64,
    pub clamp_count: u64,
    /// Most negative value a multiplier reached before clamping.
    pub worst_clamp: f64,
    pub abort: Option<Abort>,
    pub terminal: Option<Terminal>,
}

impl SimulationTrace {
    pub fn zones(&self) -> usize {
        self.layout.zones
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.rows.last().map(|r| r.state.as_slice())
    }

    pub fn summary(&self, criteria: &SettlingCriteria) -> RunSummary {
        let count = |f: fn(&EventKind) -> bool| self.events.iter().filter(|e| f(&e.kind)).count();
        RunSummary {
            steps: self.terminal.as_ref().map(|t| t.step).or(self.abort.as_ref().map(|a| a.step)).unwrap_or(0),
            dt: self.dt,
            rows: self.rows.len(),
            energy_kwh: self.energy_kwh,
            mode_violation_events: count(|k| matches!(k, EventKind::ModeViolation { active: true, .. })),
            supply_excursion_events: count(|k| matches!(k, EventKind::SupplyExcursion { active: true, .. })),
            clamp_count: self.clamp_count,
            worst_clamp: self.worst_clamp,
            terminal_kkt: self.terminal.as_ref().and_then(|t| t.kkt.as_ref()).map(|k| k.summary),
            terminal_plant_residual: self.terminal.as_ref().and_then(|t| t.plant_residual),
            terminal_supply: self.terminal.as_ref().map(|t| t.point.supply),
            settling: super::detect_settling(self, criteria),
            abort: self.abort.clone(),
        }
    }
}

/// Compact run summary written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub dt: f64,
    pub rows: usize,
    pub energy_kwh: f64,
    pub mode_violation_events: usize,
    pub supply_excursion_events: usize,
    pub clamp_count: u64,
    pub worst_clamp: f64,
    pub terminal_kkt: Option<f64>,
    pub terminal_plant_residual: Option<f64>,
    pub terminal_supply: Option<f64>,
    pub settling: SettlingReport,
    pub abort: Option<Abort>,
}

/// Builds a trace step by step; shared by the monolithic and agent runners.
pub(crate) struct Recorder {
    trace: SimulationTrace,
    every: u64,
    ghp: GhpParams,
    prev_power: Option<f64>,
    mode_active: Vec<bool>,
    supply_active: bool,
    last_clamp: Vec<Option<u64>>,
    clamp_step: Option<u64>,
}

impl Recorder {
    pub(crate) fn new(cl: &ClosedLoop) -> Self {
        let layout = cl.layout();
        Self {
            trace: SimulationTrace {
                layout,
                dt: cl.scenario.dt,
                rows: Vec::new(),
                events: Vec::new(),
                energy_kwh: 0.0,
                clamp_count: 0,
                worst_clamp: 0.0,
                abort: None,
                terminal: None,
            },
            every: cl.scenario.record_every as u64,
            ghp: cl.scenario.ghp.clone(),
            prev_power: None,
            mode_active: vec![false; layout.zones],
            supply_active: false,
            last_clamp: vec![None; layout.len()],
            clamp_step: None,
        }
    }

    fn time(&self, k: u64) -> f64 {
        k as f64 * self.trace.dt
    }

    pub(crate) fn record(&mut self, k: u64, x: &[f64], out: &StepOutputs, force: bool) -> Result<()> {
        let n = self.trace.layout.zones;
        let floor = &x[n..2 * n];
        let power = energy_exact(&out.flows, out.supply, floor, &self.ghp)?;
        if let Some(p0) = self.prev_power {
            self.trace.energy_kwh += self.trace.dt * 0.5 * (p0 + power) / 3600.0;
        }
        self.prev_power = Some(power);

        let time = self.time(k);
        let mut flags = 0;
        let sign = self.ghp.mode.sign();
        for (i, tf) in floor.iter().enumerate() {
            let active = sign * (out.supply - tf) <= 0.0;
            if active {
                flags |= FLAG_MODE_VIOLATION;
            }
            if active != self.mode_active[i] {
                self.mode_active[i] = active;
                self.trace.events.push(Event { step: k, time, kind: EventKind::ModeViolation { zone: i, active } });
            }
        }
        let excursion = out.supply < self.ghp.supply_min || out.supply > self.ghp.supply_max;
        if excursion {
            flags |= FLAG_SUPPLY_EXCURSION;
        }
        if excursion != self.supply_active {
            self.supply_active = excursion;
            self.trace.events.push(Event {
                step: k,
                time,
                kind: EventKind::SupplyExcursion { supply: out.supply, active: excursion },
            });
        }
        if self.clamp_step == Some(k) {
            flags |= FLAG_DUAL_CLAMP;
        }

        if force || k % self.every == 0 {
            self.trace.rows.push(TraceRow {
                step: k,
                time,
                state: x.to_vec(),
                flows: out.flows.clone(),
                supply: out.supply,
                outdoor: out.outdoor,
                gains: out.gains.clone(),
                energy_weight: out.energy_weight,
                power,
                energy_kwh: self.trace.energy_kwh,
                flags,
            });
        }
        Ok(())
    }

    /// Multipliers clamped at the end of the step leading to step `k`.
    pub(crate) fn clamps(&mut self, k: u64, clamped: &[(usize, f64)]) {
        if clamped.is_empty() {
            return;
        }
        self.clamp_step = Some(k);
        for &(offset, value) in clamped {
            self.trace.clamp_count += 1;
            self.trace.worst_clamp = self.trace.worst_clamp.min(value);
            let fresh = self.last_clamp[offset].is_none_or(|prev| prev + 1 < k);
            if fresh {
                self.trace.events.push(Event { step: k, time: self.time(k), kind: EventKind::DualClamp { offset, value } });
            }
            self.last_clamp[offset] = Some(k);
        }
    }

    pub(crate) fn abort(mut self, k: u64, e: Error) -> SimulationTrace {
        self.trace.abort = Some(Abort { step: k, time: self.time(k), error: e.to_string() });
        self.trace
    }

    pub(crate) fn finish(mut self, cl: &ClosedLoop, steps: u64, x: &[f64]) -> SimulationTrace {
        let out = match cl.outputs(x, steps) {
            Ok(o) => o,
            Err(e) => return self.abort(steps, e),
        };
        if let Err(e) = self.record(steps, x, &out, true) {
            return self.abort(steps, e);
        }
        let point = cl.point_at(x, steps);
        let kkt = cl.problem_at(steps).and_then(|p| kkt_residual(&point, &p)).ok();
        let plant_residual = cl.plant_residual(x, steps).ok();
        self.trace.terminal = Some(Terminal { step: steps, point, kkt, plant_residual });
        self.trace
    }
}

pub fn csv_header(zones: usize) -> String {
    let mut cols = vec!["time_s".to_string()];
    for prefix in ["T", "Tf", "Tw", "q"] {
        cols.extend((1..=zones).map(|i| format!("{prefix}_{i}")));
    }
    cols.extend(["T_s".into(), "T_o".into()]);
    cols.extend((1..=zones).map(|i| format!("Q_{i}")));
    cols.extend(["s".into(), "power_kW".into(), "energy_kWh".into(), "flags".into()]);
    cols.join(",")
}

/// One line per recorded step; reals with 17 significant digits.
pub fn write_csv<W: Write>(trace: &SimulationTrace, mut w: W) -> io::Result<()> {
    let n = trace.zones();
    writeln!(w, "{}", csv_header(n))?;
    let mut line = String::new();
    for r in &trace.rows {
        line.clear();
        let mut push = |v: f64| {
            if !line.is_empty() {
                line.push(',');
            }
            line.push_str(&format!("{v:.16e}"));
        };
        push(r.time);
        r.state[..3 * n].iter().for_each(|&v| push(v));
        r.flows.iter().for_each(|&v| push(v));
        push(r.supply);
        push(r.outdoor);
        r.gains.iter().for_each(|&v| push(v));
        push(r.energy_weight);
        push(r.power);
        push(r.energy_kwh);
        writeln!(w, "{line},{}", r.flags)?;
    }
    Ok(())
}
