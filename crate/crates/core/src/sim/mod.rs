//! Closed-loop simulation of plant, zone controllers and compressor.

mod analysis;
mod profile;
pub mod rk4;
mod trace;

use serde::{Deserialize, Serialize};

use crate::control::{
    CompressorController, CompressorGains, NeighborMsg, ZoneController1, ZoneController2, ZoneCtrl1State,
    ZoneCtrl2State, ZoneGains, ZoneMeasurement, ZoneSchedule, ZoneToCompressorMsg, CompressorState,
};
use crate::error::{ensure_positive, Error, Result};
use crate::model::{plant_rhs, plant_rhs_into, BuildingGraph, DisturbanceSample, GhpParams, PlantInputs, PlantState};
use crate::oracle::{Coupling, PrimalDualPoint, ProblemKind, SteadyStateProblem};

pub use analysis::{
    compare_runs, detect_settling, segment_settling, ComparisonReport, SegmentSettling, SettlingCriteria, SettlingReport,
};
pub use profile::{Breakpoint, Profile};
pub use rk4::{integrate_step, Rk4Workspace, STAGE_OFFSETS};
pub use trace::{write_csv, csv_header, Abort, Event, EventKind, RunSummary, SimulationTrace, Terminal, TraceRow, FLAG_DUAL_CLAMP, FLAG_MODE_VIOLATION, FLAG_SUPPLY_EXCURSION};

pub(crate) use trace::Recorder;

/// How the supply temperature is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum Scheme {
    /// Fixed supply temperature profile, flow-rate control only.
    FlowOnly { supply: Profile },
    /// Supply temperature driven by the compressor controller.
    Joint { compressor: CompressorGains },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Distributed,
    /// No zone-to-zone messages. For the joint scheme this is the
    /// reduced-communication controller (compressor link kept).
    Decentralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbances {
    pub outdoor: Profile,
    pub gains: Vec<Profile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: BuildingGraph,
    pub ghp: GhpParams,
    pub disturbances: Disturbances,
    pub scheme: Scheme,
    pub gains: ZoneGains,
    pub variant: Variant,
    /// With `false`, `k_eu` and `k_ezf` are forced to zero.
    pub extra_dynamics: bool,
    pub energy_weight: Profile,
    /// Per-zone set point profiles; `None` keeps the graph's set points.
    pub setpoints: Option<Vec<Profile>>,
    /// Uniform initial plant temperature (°C).
    pub initial_temperature: f64,
    /// Full closed-loop initial state, overriding the default start.
    pub initial_state: Option<Vec<f64>>,
    /// Seconds.
    pub horizon: f64,
    /// Seconds.
    pub dt: f64,
    /// Keep every `record_every`-th step in the trace (the final step is always kept).
    pub record_every: usize,
}

impl Scenario {
    /// Constant disturbances and weight, default gains, 0.1 s step, start at 18 °C.
    pub fn constant(
        graph: BuildingGraph,
        ghp: GhpParams,
        scheme: Scheme,
        outdoor: f64,
        gains: &[f64],
        energy_weight: f64,
        horizon: f64,
    ) -> Self {
        Self {
            disturbances: Disturbances {
                outdoor: Profile::constant(outdoor),
                gains: gains.iter().map(|&q| Profile::constant(q)).collect(),
            },
            graph,
            ghp,
            scheme,
            gains: ZoneGains::default(),
            variant: Variant::Distributed,
            extra_dynamics: true,
            energy_weight: Profile::constant(energy_weight),
            setpoints: None,
            initial_temperature: 18.0,
            initial_state: None,
            horizon,
            dt: 0.1,
            record_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ghp.validate()?;
        let n = self.graph.len();
        if self.graph.has_walls() {
            return Err(Error::Structure("closed-loop runs use the first-order model (no wall states)".into()));
        }
        ensure_positive("simulation.dt", self.dt)?;
        ensure_positive("simulation.horizon", self.horizon)?;
        if self.horizon < self.dt {
            return Err(Error::InvalidParameter {
                field: "simulation.horizon".into(),
                reason: format!("horizon {} shorter than one step {}", self.horizon, self.dt),
            });
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter { field: "simulation.record_every".into(), reason: "must be >= 1".into() });
        }
        if !self.initial_temperature.is_finite() {
            return Err(Error::InvalidParameter {
                field: "simulation.initial_temperature".into(),
                reason: "must be finite".into(),
            });
        }
        self.disturbances.outdoor.validate("disturbances.outdoor")?;
        if self.disturbances.gains.len() != n {
            return Err(Error::Structure(format!("{} heat gain profiles for {n} zones", self.disturbances.gains.len())));
        }
        for (i, p) in self.disturbances.gains.iter().enumerate() {
            p.validate(&format!("disturbances.gains[{i}]"))?;
        }
        self.energy_weight.validate("controller.energy_weight")?;
        if let Some(sp) = &self.setpoints {
            if sp.len() != n {
                return Err(Error::Structure(format!("{} set point profiles for {n} zones", sp.len())));
            }
            for (i, p) in sp.iter().enumerate() {
                p.validate(&format!("controller.setpoints[{i}]"))?;
            }
        }
        match &self.scheme {
            Scheme::FlowOnly { supply } => supply.validate("controller.supply")?,
            Scheme::Joint { compressor } => compressor.validate("controller.compressor.")?,
        }
        self.effective_gains().validate("controller.gains.")
    }

    pub fn effective_gains(&self) -> ZoneGains {
        if self.extra_dynamics {
            self.gains
        } else {
            self.gains.without_extra_dynamics()
        }
    }

    /// Number of integration steps covering the horizon.
    pub fn steps(&self) -> u64 {
        (self.horizon / self.dt - 1e-9).ceil().max(1.0) as u64
    }

    /// First step starting at or after `hours`, capped at the horizon.
    pub fn step_at(&self, hours: f64) -> u64 {
        profile::snap(hours, self.dt).min(self.steps())
    }

    pub fn is_joint(&self) -> bool {
        matches!(self.scheme, Scheme::Joint { .. })
    }

    /// Step indices where any step profile changes.
    pub fn change_steps(&self) -> Vec<u64> {
        let mut v: Vec<u64> = Vec::new();
        let mut push = |p: &Profile| v.extend(p.change_steps(self.dt));
        push(&self.disturbances.outdoor);
        self.disturbances.gains.iter().for_each(&mut push);
        push(&self.energy_weight);
        if let Some(sp) = &self.setpoints {
            sp.iter().for_each(&mut push);
        }
        if let Scheme::FlowOnly { supply } = &self.scheme {
            push(supply);
        }
        v.sort_unstable();
        v.dedup();
        v.retain(|&k| k > 0 && k < self.steps());
        v
    }
}

/// Positions of the plant, zone controller and compressor blocks in the
/// flat closed-loop state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub zones: usize,
    pub zone_len: usize,
    pub compressor: bool,
}

impl StateLayout {
    pub fn plant(&self) -> std::ops::Range<usize> {
        0..3 * self.zones
    }

    pub fn zone(&self, i: usize) -> std::ops::Range<usize> {
        let s = 3 * self.zones + i * self.zone_len;
        s..s + self.zone_len
    }

    pub fn compressor(&self) -> Option<std::ops::Range<usize>> {
        let s = 3 * self.zones + self.zones * self.zone_len;
        self.compressor.then_some(s..s + CompressorState::LEN)
    }

    pub fn len(&self) -> usize {
        3 * self.zones + self.zones * self.zone_len + if self.compressor { CompressorState::LEN } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offsets of every multiplier kept nonnegative by projection.
    pub fn duals(&self) -> Vec<usize> {
        let local: [usize; 2] = if self.zone_len == ZoneCtrl1State::LEN { ZoneCtrl1State::DUALS } else { ZoneCtrl2State::DUALS };
        let mut v: Vec<usize> = (0..self.zones).flat_map(|i| local.map(|d| self.zone(i).start + d)).collect();
        if let Some(r) = self.compressor() {
            v.extend(CompressorState::DUALS.map(|d| r.start + d));
        }
        v
    }
}

/// Schedules and disturbances sampled for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageInputs {
    pub outdoor: f64,
    pub gains: Vec<f64>,
    pub energy_weight: f64,
    pub setpoints: Vec<f64>,
    /// Scheduled supply temperature; `None` under compressor control.
    pub supply: Option<f64>,
}

/// Plant-facing quantities at the start of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutputs {
    pub flows: Vec<f64>,
    pub supply: f64,
    pub outdoor: f64,
    pub gains: Vec<f64>,
    pub energy_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ZoneBank {
    One(Vec<ZoneController1>),
    Two(Vec<ZoneController2>),
}

/// The assembled closed loop for a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub(crate) scenario: Scenario,
    pub(crate) zones: ZoneBank,
    pub(crate) compressor: Option<CompressorController>,
    pub(crate) setpoints: Vec<Profile>,
    links: Vec<Vec<usize>>,
    duals: Vec<usize>,
    layout: StateLayout,
}

/// Reusable buffers for stage evaluation.
#[derive(Debug, Clone)]
pub struct Scratch {
    plant: PlantState,
    dplant: PlantState,
    meas: Vec<ZoneMeasurement>,
    msgs: Vec<NeighborMsg>,
    inbox: Vec<NeighborMsg>,
    comp_inbox: Vec<ZoneToCompressorMsg>,
    inputs: PlantInputs,
    dist: DisturbanceSample,
}

impl ClosedLoop {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let g = &scenario.graph;
        let n = g.len();
        let gains = scenario.effective_gains();
        let decentralized = scenario.variant == Variant::Decentralized;
        let (zones, compressor, zone_len) = match &scenario.scheme {
            Scheme::FlowOnly { .. } => {
                let v = (0..n)
                    .map(|i| {
                        let c = ZoneController1::new(g, i, &scenario.ghp, &gains)?;
                        Ok(if decentralized { c.decentralized() } else { c })
                    })
                    .collect::<Result<Vec<_>>>()?;
                (ZoneBank::One(v), None, ZoneCtrl1State::LEN)
            }
            Scheme::Joint { compressor } => {
                let v = (0..n)
                    .map(|i| {
                        let c = ZoneController2::new(g, i, &scenario.ghp, &gains)?;
                        Ok(if decentralized { c.reduced_comm() } else { c })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let comp = CompressorController::new(n, &scenario.ghp, compressor)?;
                (ZoneBank::Two(v), Some(comp), ZoneCtrl2State::LEN)
            }
        };
        let setpoints = match &scenario.setpoints {
            Some(p) => p.clone(),
            None => g.zones().iter().map(|z| Profile::constant(z.setpoint)).collect(),
        };
        let links = (0..n)
            .map(|i| match &zones {
                ZoneBank::One(v) => v[i].links().iter().map(|nb| nb.zone).collect(),
                ZoneBank::Two(v) => v[i].links().iter().map(|nb| nb.zone).collect(),
            })
            .collect();
        let layout = StateLayout { zones: n, zone_len, compressor: scenario.is_joint() };
        Ok(Self {
            scenario: scenario.clone(),
            duals: layout.duals(),
            links,
            zones,
            compressor,
            setpoints,
            layout,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn scratch(&self) -> Scratch {
        let n = self.layout.zones;
        let plant = PlantState::uniform(&self.scenario.graph, 0.0);
        Scratch {
            dplant: plant.clone(),
            plant,
            meas: vec![ZoneMeasurement { air: 0.0, floor: 0.0 }; n],
            msgs: Vec::with_capacity(n),
            inbox: Vec::with_capacity(n),
            comp_inbox: Vec::with_capacity(n),
            inputs: PlantInputs { flow: vec![0.0; n], supply: 0.0 },
            dist: DisturbanceSample { outdoor: 0.0, gains: vec![0.0; n] },
        }
    }

    /// Default start: uniform plant temperature, controllers initialized from
    /// the first measurement, compressor at mid-box.
    pub fn initial_state(&self) -> Result<Vec<f64>> {
        if let Some(x) = &self.scenario.initial_state {
            if x.len() != self.layout.len() {
                return Err(Error::Structure(format!(
                    "initial state has {} entries, layout needs {}",
                    x.len(),
                    self.layout.len()
                )));
            }
            return Ok(x.clone());
        }
        let plant = PlantState::uniform(&self.scenario.graph, self.scenario.initial_temperature);
        let mut x = plant.to_vec();
        match &self.zones {
            ZoneBank::One(v) => {
                for (i, c) in v.iter().enumerate() {
                    x.extend(c.init(&measure(&plant, i)).to_array());
                }
            }
            ZoneBank::Two(v) => {
                for (i, c) in v.iter().enumerate() {
                    x.extend(c.init(&measure(&plant, i)).to_array());
                }
            }
        }
        if let Some(c) = &self.compressor {
            x.extend(c.init().to_array());
        }
        Ok(x)
    }

    /// Closed-loop state with the plant at `plant` and controllers sitting at
    /// `point` (damping states at rest, compressor at `point.supply`).
    pub fn state_from_point(&self, point: &PrimalDualPoint, plant: &PlantState) -> Result<Vec<f64>> {
        point.check_shape(self.layout.zones)?;
        let mut x = plant.to_vec();
        if x.len() != 3 * self.layout.zones {
            return Err(Error::Structure("plant state does not match the building".into()));
        }
        match &self.zones {
            ZoneBank::One(v) => {
                for (i, c) in v.iter().enumerate() {
                    x.extend(c.state_from_point(point, &measure(plant, i)).to_array());
                }
            }
            ZoneBank::Two(v) => {
                for (i, c) in v.iter().enumerate() {
                    x.extend(c.state_from_point(point, &measure(plant, i)).to_array());
                }
            }
        }
        if self.compressor.is_some() {
            x.extend([point.supply, point.nu_plus, point.nu_minus]);
        }
        Ok(x)
    }

    pub fn sample(&self, k: u64, c: f64) -> StageInputs {
        let dt = self.scenario.dt;
        let d = &self.scenario.disturbances;
        StageInputs {
            outdoor: d.outdoor.sample(k, c, dt),
            gains: d.gains.iter().map(|p| p.sample(k, c, dt)).collect(),
            energy_weight: self.scenario.energy_weight.sample(k, c, dt),
            setpoints: self.setpoints.iter().map(|p| p.sample(k, c, dt)).collect(),
            supply: match &self.scenario.scheme {
                Scheme::FlowOnly { supply } => Some(supply.sample(k, c, dt)),
                Scheme::Joint { .. } => None,
            },
        }
    }

    fn supply(&self, x: &[f64], sched: &StageInputs) -> f64 {
        match (sched.supply, self.layout.compressor()) {
            (Some(s), _) => s,
            (None, Some(r)) => x[r.start],
            (None, None) => unreachable!("joint scheme always carries a compressor"),
        }
    }

    /// Applied flow for zone `i` at closed-loop state `x`.
    pub(crate) fn zone_flow(&self, i: usize, zx: &[f64], supply: f64) -> Result<f64> {
        match &self.zones {
            ZoneBank::One(v) => v[i].applied_flow(&ZoneCtrl1State::from_slice(zx), supply),
            ZoneBank::Two(v) => v[i].applied_flow(&ZoneCtrl2State::from_slice(zx), supply),
        }
    }

    pub(crate) fn zone_message(&self, i: usize, zx: &[f64], meas: &ZoneMeasurement) -> NeighborMsg {
        match &self.zones {
            ZoneBank::One(v) => v[i].message(&ZoneCtrl1State::from_slice(zx), meas),
            ZoneBank::Two(v) => v[i].message(&ZoneCtrl2State::from_slice(zx), meas),
        }
    }

    /// Zones whose messages zone `i` consumes, in the order its controller expects.
    pub(crate) fn zone_links(&self, i: usize) -> &[usize] {
        &self.links[i]
    }

    pub(crate) fn zone_rhs(
        &self,
        i: usize,
        zx: &[f64],
        meas: &ZoneMeasurement,
        msgs: &[NeighborMsg],
        sched: &ZoneSchedule,
        out: &mut [f64],
    ) -> Result<()> {
        match &self.zones {
            ZoneBank::One(v) => out.copy_from_slice(&v[i].rhs(&ZoneCtrl1State::from_slice(zx), meas, msgs, sched)?.to_array()),
            ZoneBank::Two(v) => out.copy_from_slice(&v[i].rhs(&ZoneCtrl2State::from_slice(zx), meas, msgs, sched)?.to_array()),
        }
        Ok(())
    }

    pub(crate) fn compressor_message(&self, i: usize, zx: &[f64]) -> Option<ZoneToCompressorMsg> {
        match &self.zones {
            ZoneBank::One(_) => None,
            ZoneBank::Two(v) => Some(v[i].compressor_message(&ZoneCtrl2State::from_slice(zx))),
        }
    }

    /// Closed-loop vector field at stage offset `c` of step `k`.
    pub fn derivative(&self, x: &[f64], k: u64, c: f64, out: &mut [f64], s: &mut Scratch) -> Result<()> {
        let n = self.layout.zones;
        let sched = self.sample(k, c);
        let supply = self.supply(x, &sched);
        fill_plant(&mut s.plant, &x[self.layout.plant()]);

        s.msgs.clear();
        for i in 0..n {
            s.meas[i] = measure(&s.plant, i);
            let zx = &x[self.layout.zone(i)];
            s.msgs.push(self.zone_message(i, zx, &s.meas[i]));
            s.inputs.flow[i] = self.zone_flow(i, zx, supply)?;
        }
        s.inputs.supply = supply;
        s.dist.outdoor = sched.outdoor;
        s.dist.gains.copy_from_slice(&sched.gains);
        plant_rhs_into(&s.plant, &s.inputs, &s.dist, &self.scenario.graph, &self.scenario.ghp, &mut s.dplant)?;
        let pr = self.layout.plant();
        out[pr.start..pr.start + n].copy_from_slice(&s.dplant.air);
        out[pr.start + n..pr.start + 2 * n].copy_from_slice(&s.dplant.floor);
        out[pr.start + 2 * n..pr.end].copy_from_slice(&s.dplant.water);

        s.comp_inbox.clear();
        for i in 0..n {
            s.inbox.clear();
            for &j in self.zone_links(i) {
                s.inbox.push(s.msgs[j]);
            }
            let r = self.layout.zone(i);
            let zs = ZoneSchedule { supply, setpoint: sched.setpoints[i], energy_weight: sched.energy_weight };
            self.zone_rhs(i, &x[r.clone()], &s.meas[i], &s.inbox, &zs, &mut out[r.clone()])?;
            if let Some(m) = self.compressor_message(i, &x[r]) {
                s.comp_inbox.push(m);
            }
        }
        if let (Some(comp), Some(r)) = (&self.compressor, self.layout.compressor()) {
            let d = comp.rhs(&CompressorState::from_slice(&x[r.clone()]), &s.comp_inbox, sched.energy_weight)?;
            out[r].copy_from_slice(&d.to_array());
        }
        Ok(())
    }

    /// Applied inputs and disturbances at the start of step `k`.
    pub fn outputs(&self, x: &[f64], k: u64) -> Result<StepOutputs> {
        let sched = self.sample(k, 0.0);
        let supply = self.supply(x, &sched);
        let flows = (0..self.layout.zones)
            .map(|i| self.zone_flow(i, &x[self.layout.zone(i)], supply))
            .collect::<Result<Vec<_>>>()?;
        Ok(StepOutputs { flows, supply, outdoor: sched.outdoor, gains: sched.gains, energy_weight: sched.energy_weight })
    }

    /// Primal-dual point held by the controllers, with `ζ` reconstructed from the measurement.
    pub fn primal_dual(&self, x: &[f64]) -> PrimalDualPoint {
        let n = self.layout.zones;
        let plant = &x[self.layout.plant()];
        let mut p = PrimalDualPoint {
            air: Vec::with_capacity(n),
            heat: Vec::with_capacity(n),
            floor: Vec::with_capacity(n),
            supply: 0.0,
            zeta: Vec::with_capacity(n),
            lambda: Vec::with_capacity(n),
            mu_plus: Vec::with_capacity(n),
            mu_minus: Vec::with_capacity(n),
            nu_plus: 0.0,
            nu_minus: 0.0,
        };
        for i in 0..n {
            let zx = &x[self.layout.zone(i)];
            let meas = ZoneMeasurement { air: plant[i], floor: plant[n + i] };
            let (z, u, zf, l, mp, mm, zeta) = match &self.zones {
                ZoneBank::One(v) => {
                    let s = ZoneCtrl1State::from_slice(zx);
                    (s.z, s.u, s.zf, s.lambda, s.mu_plus, s.mu_minus, v[i].zeta(s.zeta_tilde, &meas))
                }
                ZoneBank::Two(v) => {
                    let s = ZoneCtrl2State::from_slice(zx);
                    (s.z, s.u, s.zf, s.lambda, s.mu_plus, s.mu_minus, v[i].zeta(s.zeta_tilde, &meas))
                }
            };
            p.air.push(z);
            p.heat.push(u);
            p.floor.push(zf);
            p.zeta.push(zeta);
            p.lambda.push(l);
            p.mu_plus.push(mp);
            p.mu_minus.push(mm);
        }
        if let Some(r) = self.layout.compressor() {
            p.supply = x[r.start];
            p.nu_plus = x[r.start + 1];
            p.nu_minus = x[r.start + 2];
        }
        p
    }

    /// The steady-state problem whose optimum the closed loop should settle
    /// to under the schedules in force at step `k`.
    pub fn problem_at(&self, k: u64) -> Result<SteadyStateProblem> {
        let sched = self.sample(k, 0.0);
        let graph = self.scenario.graph.with_setpoints(&sched.setpoints)?;
        let kind = match sched.supply {
            Some(supply) => ProblemKind::FlowOnly { supply },
            None => ProblemKind::Joint,
        };
        let coupling = match self.scenario.variant {
            Variant::Distributed => Coupling::Distributed,
            Variant::Decentralized => Coupling::Local,
        };
        Ok(SteadyStateProblem::new(kind, graph, self.scenario.ghp.clone(), sched.energy_weight, sched.outdoor, sched.gains)?
            .with_coupling(coupling))
    }

    /// Primal-dual point from the controllers, with the supply filled in for the flow-only scheme.
    pub fn point_at(&self, x: &[f64], k: u64) -> PrimalDualPoint {
        let mut p = self.primal_dual(x);
        if let Some(s) = self.sample(k, 0.0).supply {
            p.supply = s;
        }
        p
    }

    /// Largest plant derivative at `x` under the inputs of step `k`.
    pub fn plant_residual(&self, x: &[f64], k: u64) -> Result<f64> {
        let out = self.outputs(x, k)?;
        let plant = PlantState::from_slice(&self.scenario.graph, &x[self.layout.plant()])?;
        let d = plant_rhs(
            &plant,
            &PlantInputs { flow: out.flows, supply: out.supply },
            &DisturbanceSample { outdoor: out.outdoor, gains: out.gains },
            &self.scenario.graph,
            &self.scenario.ghp,
        )?;
        Ok(d.to_vec().iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    /// Clamps negative multipliers to zero, returning `(offset, value)` for each clamp.
    pub fn clamp_duals(&self, x: &mut [f64], clamped: &mut Vec<(usize, f64)>) {
        clamped.clear();
        for &d in &self.duals {
            if x[d] < 0.0 {
                clamped.push((d, x[d]));
                x[d] = 0.0;
            }
        }
    }
}

pub(crate) fn measure(plant: &PlantState, i: usize) -> ZoneMeasurement {
    ZoneMeasurement { air: plant.air[i], floor: plant.floor[i] }
}

pub(crate) fn fill_plant(p: &mut PlantState, x: &[f64]) {
    let n = p.air.len();
    p.air.copy_from_slice(&x[..n]);
    p.floor.copy_from_slice(&x[n..2 * n]);
    p.water.copy_from_slice(&x[2 * n..3 * n]);
}

/// Integrates the closed loop over the scenario horizon.
///
/// Invalid scenarios are rejected up front. Failures during the run (for
/// example a non-finite state) stop the integration and return the trace so
/// far with [`SimulationTrace::abort`] set.
pub fn run_closed_loop(scenario: &Scenario) -> Result<SimulationTrace> {
    let cl = ClosedLoop::new(scenario)?;
    let mut x = cl.initial_state()?;
    let steps = scenario.steps();
    let dt = scenario.dt;
    let mut rec = Recorder::new(&cl);
    let mut scratch = cl.scratch();
    let mut ws = Rk4Workspace::new(x.len());
    let mut clamped = Vec::new();

    for k in 0..steps {
        let step = (|| -> Result<()> {
            let out = cl.outputs(&x, k)?;
            rec.record(k, &x, &out, false)?;
            integrate_step(|st, xs, o| cl.derivative(xs, k, STAGE_OFFSETS[st], o, &mut scratch), &mut x, dt, &mut ws)
        })();
        if let Err(e) = step {
            return Ok(rec.abort(k, e));
        }
        cl.clamp_duals(&mut x, &mut clamped);
        rec.clamps(k + 1, &clamped);
    }
    Ok(rec.finish(&cl, steps, &x))
}
