//! Message-passing realization of the closed loop.
//!
//! Every zone controller, the compressor and the plant are separate agents.
//! A zone agent owns its controller, its own state and an inbox; it cannot
//! reach another agent's state or the disturbances. Each Runge-Kutta stage is
//! one synchronous round with two delivery phases:
//!
//! 1. *sense*: the plant sends each zone its measured air and floor
//!    temperatures; the compressor broadcasts `T_s` to zones and plant.
//! 2. *exchange*: zones send `(ζ_i, T_i - Z_i)` to their neighbours,
//!    `(u_i, μ_i^+ q_i^max c_w)` to the compressor and the valve command to
//!    the plant.
//!
//! Then every agent evaluates its own vector field on its inbox and advances
//! its stage. All payloads are computed from the stage state before any
//! update, so the order in which agents run does not matter.

mod log;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::control::{
    CompressorBroadcast, CompressorController, CompressorState, NeighborMsg, ZoneController1, ZoneController2,
    ZoneCtrl1State, ZoneCtrl2State, ZoneMeasurement, ZoneSchedule, ZoneToCompressorMsg,
};
use crate::error::{Error, Result};
use crate::model::{plant_rhs_into, BuildingGraph, DisturbanceSample, PlantInputs, PlantState};
use crate::sim::rk4::{combine, stage_state};
use crate::sim::{fill_plant, ClosedLoop, Recorder, Scenario, SimulationTrace, StageInputs, Variant, ZoneBank, STAGE_OFFSETS};

pub use log::{replay_zone, RoundLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentId {
    Zone(usize),
    Compressor,
    Plant,
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Zone(i) => write!(f, "z{i}"),
            AgentId::Compressor => write!(f, "c"),
            AgentId::Plant => write!(f, "p"),
        }
    }
}

impl std::str::FromStr for AgentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c" => Ok(AgentId::Compressor),
            "p" => Ok(AgentId::Plant),
            _ => s
                .strip_prefix('z')
                .and_then(|i| i.parse().ok())
                .map(AgentId::Zone)
                .ok_or_else(|| Error::Routing(format!("unknown agent id `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Neighbor(NeighborMsg),
    ToCompressor(ZoneToCompressorMsg),
    Broadcast(CompressorBroadcast),
    Measurement(ZoneMeasurement),
    Actuation { flow: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub from: AgentId,
    pub to: AgentId,
    pub payload: Payload,
}

/// Directed links an agent system may use.
///
/// `comm` holds controller-to-controller links (zone-zone along building
/// edges, zone-compressor in the joint scheme). `physical` holds the sensor
/// and actuator channels to and from the plant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSet {
    pub comm: BTreeSet<(AgentId, AgentId)>,
    pub physical: BTreeSet<(AgentId, AgentId)>,
}

impl LinkSet {
    pub fn zone_links(&self) -> usize {
        self.comm.iter().filter(|(a, b)| matches!((a, b), (AgentId::Zone(_), AgentId::Zone(_)))).count()
    }

    pub fn compressor_links(&self) -> usize {
        self.comm.iter().filter(|(a, b)| *a == AgentId::Compressor || *b == AgentId::Compressor).count()
    }

    /// Controller messages per round: one per communication link.
    pub fn messages_per_round(&self) -> usize {
        self.comm.len()
    }

    fn allows(&self, from: AgentId, to: AgentId) -> bool {
        self.comm.contains(&(from, to)) || self.physical.contains(&(from, to))
    }
}

pub fn topology_check(graph: &BuildingGraph, joint: bool, variant: Variant) -> LinkSet {
    let n = graph.len();
    let mut comm = BTreeSet::new();
    let mut physical = BTreeSet::new();
    if variant == Variant::Distributed {
        for e in graph.edges() {
            comm.insert((AgentId::Zone(e.a), AgentId::Zone(e.b)));
            comm.insert((AgentId::Zone(e.b), AgentId::Zone(e.a)));
        }
    }
    for i in 0..n {
        let z = AgentId::Zone(i);
        if joint {
            comm.insert((z, AgentId::Compressor));
            comm.insert((AgentId::Compressor, z));
        }
        physical.insert((AgentId::Plant, z));
        physical.insert((z, AgentId::Plant));
    }
    if joint {
        physical.insert((AgentId::Compressor, AgentId::Plant));
    }
    LinkSet { comm, physical }
}

/// Messages posted in one round, grouped by recipient and sorted by sender.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundMailbox {
    inbox: BTreeMap<AgentId, Vec<(AgentId, Payload)>>,
    used: BTreeSet<(AgentId, AgentId)>,
}

impl RoundMailbox {
    /// Queues a message, enforcing the topology and one message per link per round.
    pub fn post(&mut self, links: &LinkSet, env: Envelope) -> Result<()> {
        if !links.allows(env.from, env.to) {
            return Err(Error::Routing(format!("no link {} -> {}", env.from, env.to)));
        }
        if !self.used.insert((env.from, env.to)) {
            return Err(Error::Routing(format!("second message on link {} -> {} in one round", env.from, env.to)));
        }
        let list = self.inbox.entry(env.to).or_default();
        let pos = list.partition_point(|(s, _)| *s < env.from);
        list.insert(pos, (env.from, env.payload));
        Ok(())
    }

    pub fn inbox(&self, id: AgentId) -> &[(AgentId, Payload)] {
        self.inbox.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used.is_empty()
    }
}

/// Runge-Kutta bookkeeping every agent carries for its own block of state.
#[derive(Debug, Clone)]
struct Stages {
    x0: Vec<f64>,
    x: Vec<f64>,
    k: [Vec<f64>; 4],
}

impl Stages {
    fn new(x: Vec<f64>) -> Self {
        let n = x.len();
        Self { x0: x.clone(), x, k: std::array::from_fn(|_| vec![0.0; n]) }
    }

    /// Takes the slope just written to `k[stage]` and moves to the next stage state.
    fn advance(&mut self, stage: usize, dt: f64) {
        if stage < 3 {
            stage_state(stage + 1, &self.x0, &self.k[stage], dt, &mut self.x);
        } else {
            let [k1, k2, k3, k4] = &self.k;
            combine(&self.x0, [k1, k2, k3, k4], dt, &mut self.x);
            self.x0.copy_from_slice(&self.x);
        }
    }

    fn clamp(&mut self, local: &[usize], base: usize, out: &mut Vec<(usize, f64)>) {
        for &d in local {
            if self.x[d] < 0.0 {
                out.push((base + d, self.x[d]));
                self.x[d] = 0.0;
            }
        }
        self.x0.copy_from_slice(&self.x);
    }
}

#[derive(Debug, Clone)]
pub(crate) enum ZoneLogic {
    One(ZoneController1),
    Two(ZoneController2),
}

impl ZoneLogic {
    fn links(&self) -> Vec<usize> {
        match self {
            ZoneLogic::One(c) => c.links().iter().map(|n| n.zone).collect(),
            ZoneLogic::Two(c) => c.links().iter().map(|n| n.zone).collect(),
        }
    }

    fn duals(&self) -> [usize; 2] {
        match self {
            ZoneLogic::One(_) => ZoneCtrl1State::DUALS,
            ZoneLogic::Two(_) => ZoneCtrl2State::DUALS,
        }
    }
}

/// What a zone agent is told by the clock: its set point, the energy weight
/// and, in the flow-only scheme, the fixed supply temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneClock {
    pub setpoint: f64,
    pub energy_weight: f64,
    pub supply: Option<f64>,
}

/// A zone controller agent. Its only inputs are its inbox and its clock.
#[derive(Debug, Clone)]
pub struct ZoneAgent {
    index: usize,
    logic: ZoneLogic,
    links: Vec<usize>,
    st: Stages,
}

impl ZoneAgent {
    pub(crate) fn new(index: usize, logic: ZoneLogic, x: Vec<f64>) -> Self {
        let links = logic.links();
        Self { index, logic, links, st: Stages::new(x) }
    }

    pub fn id(&self) -> AgentId {
        AgentId::Zone(self.index)
    }

    pub fn state(&self) -> &[f64] {
        &self.st.x
    }

    fn measurement(&self, inbox: &[(AgentId, Payload)]) -> Result<ZoneMeasurement> {
        inbox
            .iter()
            .find_map(|(from, p)| match (from, p) {
                (AgentId::Plant, Payload::Measurement(m)) => Some(*m),
                _ => None,
            })
            .ok_or_else(|| Error::Routing(format!("zone {} has no measurement this round", self.index)))
    }

    fn supply(&self, inbox: &[(AgentId, Payload)], clock: &ZoneClock) -> Result<f64> {
        if let Some(s) = clock.supply {
            return Ok(s);
        }
        inbox
            .iter()
            .find_map(|(from, p)| match (from, p) {
                (AgentId::Compressor, Payload::Broadcast(b)) => Some(b.supply),
                _ => None,
            })
            .ok_or_else(|| Error::Routing(format!("zone {} has no supply broadcast this round", self.index)))
    }

    /// Exchange-phase messages, given the sense-phase inbox.
    pub fn post(&self, sensed: &[(AgentId, Payload)], clock: &ZoneClock) -> Result<Vec<Envelope>> {
        let meas = self.measurement(sensed)?;
        let supply = self.supply(sensed, clock)?;
        let me = self.id();
        let (msg, flow, comp) = match &self.logic {
            ZoneLogic::One(c) => {
                let x = ZoneCtrl1State::from_slice(&self.st.x);
                (c.message(&x, &meas), c.applied_flow(&x, supply)?, None)
            }
            ZoneLogic::Two(c) => {
                let x = ZoneCtrl2State::from_slice(&self.st.x);
                (c.message(&x, &meas), c.applied_flow(&x, supply)?, Some(c.compressor_message(&x)))
            }
        };
        let mut out: Vec<Envelope> =
            self.links.iter().map(|&j| Envelope { from: me, to: AgentId::Zone(j), payload: Payload::Neighbor(msg) }).collect();
        if let Some(m) = comp {
            out.push(Envelope { from: me, to: AgentId::Compressor, payload: Payload::ToCompressor(m) });
        }
        out.push(Envelope { from: me, to: AgentId::Plant, payload: Payload::Actuation { flow } });
        Ok(out)
    }

    /// Evaluates the controller on the full round inbox and advances one stage.
    pub fn update(&mut self, inbox: &[(AgentId, Payload)], clock: &ZoneClock, stage: usize, dt: f64) -> Result<()> {
        let meas = self.measurement(inbox)?;
        let supply = self.supply(inbox, clock)?;
        let msgs: Vec<NeighborMsg> = inbox
            .iter()
            .filter_map(|(_, p)| match p {
                Payload::Neighbor(m) => Some(*m),
                _ => None,
            })
            .collect();
        let sched = ZoneSchedule { supply, setpoint: clock.setpoint, energy_weight: clock.energy_weight };
        let k = &mut self.st.k[stage];
        match &self.logic {
            ZoneLogic::One(c) => {
                k.copy_from_slice(&c.rhs(&ZoneCtrl1State::from_slice(&self.st.x), &meas, &msgs, &sched)?.to_array())
            }
            ZoneLogic::Two(c) => {
                k.copy_from_slice(&c.rhs(&ZoneCtrl2State::from_slice(&self.st.x), &meas, &msgs, &sched)?.to_array())
            }
        }
        self.st.advance(stage, dt);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CompressorAgent {
    ctrl: CompressorController,
    zones: usize,
    st: Stages,
}

impl CompressorAgent {
    pub fn post(&self) -> Vec<Envelope> {
        let b = Payload::Broadcast(self.ctrl.broadcast(&CompressorState::from_slice(&self.st.x)));
        (0..self.zones)
            .map(|i| Envelope { from: AgentId::Compressor, to: AgentId::Zone(i), payload: b })
            .chain(std::iter::once(Envelope { from: AgentId::Compressor, to: AgentId::Plant, payload: b }))
            .collect()
    }

    pub fn update(&mut self, inbox: &[(AgentId, Payload)], energy_weight: f64, stage: usize, dt: f64) -> Result<()> {
        let msgs: Vec<ZoneToCompressorMsg> = inbox
            .iter()
            .filter_map(|(_, p)| match p {
                Payload::ToCompressor(m) => Some(*m),
                _ => None,
            })
            .collect();
        let d = self.ctrl.rhs(&CompressorState::from_slice(&self.st.x), &msgs, energy_weight)?;
        self.st.k[stage].copy_from_slice(&d.to_array());
        self.st.advance(stage, dt);
        Ok(())
    }
}

/// The building itself: integrates the thermal network under the valve
/// commands and supply temperature it receives.
#[derive(Debug, Clone)]
struct PlantAgent {
    st: Stages,
    plant: PlantState,
    dplant: PlantState,
    inputs: PlantInputs,
    dist: DisturbanceSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentOptions {
    /// Rounds by which controller-to-controller messages are held back.
    pub delay: u32,
    /// Keep a replayable log of every delivered message.
    pub log: bool,
    /// Reverse the order in which agents are stepped (results must not change).
    pub reverse_order: bool,
}

impl Default for AgentOptions {
    fn default() -> Self {
        Self { delay: 0, log: false, reverse_order: false }
    }
}

#[derive(Debug, Clone)]
pub struct AgentRun {
    pub trace: SimulationTrace,
    pub links: LinkSet,
    /// Controller messages delivered per round (constant over the run).
    pub messages_per_round: usize,
    pub log: Option<RoundLog>,
}

struct System<'a> {
    cl: &'a ClosedLoop,
    links: LinkSet,
    zones: Vec<ZoneAgent>,
    compressor: Option<CompressorAgent>,
    plant: PlantAgent,
    delay: u32,
    pipes: BTreeMap<(AgentId, AgentId), VecDeque<Payload>>,
    reverse: bool,
    log: Option<RoundLog>,
    comm_delivered: usize,
}

impl<'a> System<'a> {
    fn new(cl: &'a ClosedLoop, opts: &AgentOptions) -> Result<Self> {
        let sc = cl.scenario();
        let layout = cl.layout();
        let x = cl.initial_state()?;
        let zones = (0..layout.zones)
            .map(|i| {
                let logic = match &cl.zones {
                    ZoneBank::One(v) => ZoneLogic::One(v[i].clone()),
                    ZoneBank::Two(v) => ZoneLogic::Two(v[i].clone()),
                };
                ZoneAgent::new(i, logic, x[layout.zone(i)].to_vec())
            })
            .collect();
        let compressor = match (&cl.compressor, layout.compressor()) {
            (Some(c), Some(r)) => Some(CompressorAgent { ctrl: c.clone(), zones: layout.zones, st: Stages::new(x[r].to_vec()) }),
            _ => None,
        };
        let plant0 = PlantState::uniform(&sc.graph, 0.0);
        let plant = PlantAgent {
            st: Stages::new(x[layout.plant()].to_vec()),
            dplant: plant0.clone(),
            plant: plant0,
            inputs: PlantInputs { flow: vec![0.0; layout.zones], supply: 0.0 },
            dist: DisturbanceSample { outdoor: 0.0, gains: vec![0.0; layout.zones] },
        };
        Ok(Self {
            cl,
            links: topology_check(&sc.graph, sc.is_joint(), sc.variant),
            zones,
            compressor,
            plant,
            delay: opts.delay,
            pipes: BTreeMap::new(),
            reverse: opts.reverse_order,
            log: opts.log.then(RoundLog::default),
            comm_delivered: 0,
        })
    }

    fn state(&self) -> Vec<f64> {
        let mut x = self.plant.st.x.clone();
        for z in &self.zones {
            x.extend_from_slice(&z.st.x);
        }
        if let Some(c) = &self.compressor {
            x.extend_from_slice(&c.st.x);
        }
        x
    }

    /// Applies the delay line to controller links; physical channels are immediate.
    fn route(&mut self, mb: &mut RoundMailbox, env: Envelope) -> Result<()> {
        let delivered = if self.delay > 0 && self.links.comm.contains(&(env.from, env.to)) {
            let q = self.pipes.entry((env.from, env.to)).or_default();
            q.push_back(env.payload);
            if q.len() > self.delay as usize + 1 {
                q.pop_front();
            }
            Envelope { payload: q[0], ..env }
        } else {
            env
        };
        if self.links.comm.contains(&(env.from, env.to)) {
            self.comm_delivered += 1;
        }
        if let Some(log) = &mut self.log {
            log.push(delivered);
        }
        mb.post(&self.links, delivered)
    }

    fn zone_order(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.zones.len()).collect();
        if self.reverse {
            v.reverse();
        }
        v
    }

    fn round(&mut self, k: u64, stage: usize) -> Result<()> {
        let dt = self.cl.scenario().dt;
        let sched: StageInputs = self.cl.sample(k, STAGE_OFFSETS[stage]);
        if let Some(log) = &mut self.log {
            log.begin_round(k, stage);
        }
        let mut mb = RoundMailbox::default();
        let n = self.zones.len();

        // sense
        fill_plant(&mut self.plant.plant, &self.plant.st.x);
        let mut sense = Vec::with_capacity(2 * n + 1);
        if let Some(c) = &self.compressor {
            sense.extend(c.post());
        }
        for i in 0..n {
            let m = ZoneMeasurement { air: self.plant.plant.air[i], floor: self.plant.plant.floor[i] };
            sense.push(Envelope { from: AgentId::Plant, to: AgentId::Zone(i), payload: Payload::Measurement(m) });
        }
        if self.reverse {
            sense.reverse();
        }
        for env in sense {
            self.route(&mut mb, env)?;
        }

        // exchange
        let clocks: Vec<ZoneClock> = (0..n)
            .map(|i| ZoneClock { setpoint: sched.setpoints[i], energy_weight: sched.energy_weight, supply: sched.supply })
            .collect();
        let mut exchange = Vec::new();
        for i in self.zone_order() {
            let z = &self.zones[i];
            exchange.extend(z.post(mb.inbox(z.id()), &clocks[i])?);
        }
        for env in exchange {
            self.route(&mut mb, env)?;
        }

        // update; the plant goes first so failures surface in the same order as the monolithic loop
        self.update_plant(mb.inbox(AgentId::Plant), &sched, stage, dt)?;
        for i in self.zone_order() {
            let id = self.zones[i].id();
            self.zones[i].update(mb.inbox(id), &clocks[i], stage, dt)?;
        }
        if let Some(c) = &mut self.compressor {
            c.update(mb.inbox(AgentId::Compressor), sched.energy_weight, stage, dt)?;
        }
        Ok(())
    }

    fn update_plant(&mut self, inbox: &[(AgentId, Payload)], sched: &StageInputs, stage: usize, dt: f64) -> Result<()> {
        let sc = self.cl.scenario();
        let p = &mut self.plant;
        let mut supply = sched.supply;
        for (from, payload) in inbox {
            match (from, payload) {
                (AgentId::Zone(i), Payload::Actuation { flow }) => p.inputs.flow[*i] = *flow,
                (AgentId::Compressor, Payload::Broadcast(b)) => supply = Some(b.supply),
                _ => return Err(Error::Routing(format!("plant cannot consume {payload:?} from {from}"))),
            }
        }
        p.inputs.supply = supply.ok_or_else(|| Error::Routing("plant received no supply temperature".into()))?;
        p.dist.outdoor = sched.outdoor;
        p.dist.gains.copy_from_slice(&sched.gains);
        plant_rhs_into(&p.plant, &p.inputs, &p.dist, &sc.graph, &sc.ghp, &mut p.dplant)?;
        let n = p.plant.air.len();
        let k = &mut p.st.k[stage];
        k[..n].copy_from_slice(&p.dplant.air);
        k[n..2 * n].copy_from_slice(&p.dplant.floor);
        k[2 * n..3 * n].copy_from_slice(&p.dplant.water);
        p.st.advance(stage, dt);
        Ok(())
    }

    fn clamp(&mut self, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let layout = self.cl.layout();
        for (i, z) in self.zones.iter_mut().enumerate() {
            let d = z.logic.duals();
            z.st.clamp(&d, layout.zone(i).start, out);
        }
        if let (Some(c), Some(r)) = (&mut self.compressor, layout.compressor()) {
            c.st.clamp(&CompressorState::DUALS, r.start, out);
        }
    }

    fn check_finite(&self) -> Result<()> {
        let x = self.state();
        match x.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!("state entry {i} became {} during the step", x[i]))),
            None => Ok(()),
        }
    }
}

/// Runs the scenario as communicating agents and records the same trace as
/// [`crate::sim::run_closed_loop`].
pub fn run_agents(scenario: &Scenario, opts: &AgentOptions) -> Result<AgentRun> {
    let cl = ClosedLoop::new(scenario)?;
    let mut sys = System::new(&cl, opts)?;
    let mut rec = Recorder::new(&cl);
    let steps = scenario.steps();
    let mut clamped = Vec::new();
    let mut per_round = None;

    let mut aborted = None;
    for k in 0..steps {
        let step = (|| -> Result<()> {
            let x = sys.state();
            rec.record(k, &x, &cl.outputs(&x, k)?, false)?;
            for stage in 0..4 {
                let before = sys.comm_delivered;
                sys.round(k, stage)?;
                let sent = sys.comm_delivered - before;
                if *per_round.get_or_insert(sent) != sent {
                    return Err(Error::Routing(format!("round carried {sent} controller messages, expected {per_round:?}")));
                }
            }
            sys.check_finite()
        })();
        if let Err(e) = step {
            aborted = Some((k, e));
            break;
        }
        sys.clamp(&mut clamped);
        rec.clamps(k + 1, &clamped);
    }
    let trace = match aborted {
        Some((k, e)) => rec.abort(k, e),
        None => rec.finish(&cl, steps, &sys.state()),
    };
    Ok(AgentRun { trace, messages_per_round: per_round.unwrap_or(0), links: sys.links.clone(), log: sys.log.take() })
}

#[cfg(test)]
mod tests;
