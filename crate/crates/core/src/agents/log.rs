//! Plain-text round log. Reals are stored as the hex of their IEEE bits so a
//! replay sees exactly the numbers the live run delivered.
//!
//! ```text
//! delay 0
//! round 0 0
//! p z0 me 4032000000000000 4032000000000000
//! z0 z1 nb 0 ...
//! ```

use std::fmt::Write as _;

use super::{topology_check, AgentId, Envelope, Payload, RoundMailbox, ZoneAgent, ZoneClock, ZoneLogic};
use crate::control::{CompressorBroadcast, NeighborMsg, ZoneMeasurement, ZoneToCompressorMsg};
use crate::error::{Error, Result};
use crate::sim::{ClosedLoop, Scenario, ZoneBank, STAGE_OFFSETS};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundLog {
    pub delay: u32,
    pub rounds: Vec<LoggedRound>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRound {
    pub step: u64,
    pub stage: usize,
    pub delivered: Vec<Envelope>,
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|e| Error::Routing(format!("bad real `{s}` in log: {e}")))
}

impl RoundLog {
    pub(super) fn begin_round(&mut self, step: u64, stage: usize) {
        self.rounds.push(LoggedRound { step, stage, delivered: Vec::new() });
    }

    pub(super) fn push(&mut self, env: Envelope) {
        if let Some(r) = self.rounds.last_mut() {
            r.delivered.push(env);
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("delay {}\n", self.delay);
        for r in &self.rounds {
            let _ = writeln!(s, "round {} {}", r.step, r.stage);
            for e in &r.delivered {
                let body = match e.payload {
                    Payload::Neighbor(m) => format!("nb {} {} {}", m.sender, hex(m.zeta), hex(m.tracking_error)),
                    Payload::ToCompressor(m) => format!("tc {} {} {}", m.sender, hex(m.heat), hex(m.mu_kappa)),
                    Payload::Broadcast(b) => format!("bc {}", hex(b.supply)),
                    Payload::Measurement(m) => format!("me {} {}", hex(m.air), hex(m.floor)),
                    Payload::Actuation { flow } => format!("ac {}", hex(flow)),
                };
                let _ = writeln!(s, "{} {} {body}", e.from, e.to);
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |n: usize, l: &str| Error::Routing(format!("log line {}: cannot parse `{l}`", n + 1));
        let mut log = RoundLog::default();
        for (n, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                ["delay", d] => log.delay = d.parse().map_err(|_| bad(n, line))?,
                ["round", k, s] => log.rounds.push(LoggedRound {
                    step: k.parse().map_err(|_| bad(n, line))?,
                    stage: s.parse().map_err(|_| bad(n, line))?,
                    delivered: Vec::new(),
                }),
                [from, to, kind, rest @ ..] => {
                    let payload = match (*kind, rest) {
                        ("nb", [i, a, b]) => Payload::Neighbor(NeighborMsg {
                            sender: i.parse().map_err(|_| bad(n, line))?,
                            zeta: unhex(a)?,
                            tracking_error: unhex(b)?,
                        }),
                        ("tc", [i, a, b]) => Payload::ToCompressor(ZoneToCompressorMsg {
                            sender: i.parse().map_err(|_| bad(n, line))?,
                            heat: unhex(a)?,
                            mu_kappa: unhex(b)?,
                        }),
                        ("bc", [a]) => Payload::Broadcast(CompressorBroadcast { supply: unhex(a)? }),
                        ("me", [a, b]) => Payload::Measurement(ZoneMeasurement { air: unhex(a)?, floor: unhex(b)? }),
                        ("ac", [a]) => Payload::Actuation { flow: unhex(a)? },
                        _ => return Err(bad(n, line)),
                    };
                    let round = log.rounds.last_mut().ok_or_else(|| bad(n, line))?;
                    round.delivered.push(Envelope { from: from.parse()?, to: to.parse()?, payload });
                }
                _ => return Err(bad(n, line)),
            }
        }
        Ok(log)
    }
}

/// Re-runs zone `zone` alone on the messages the log says it received and
/// returns its final controller state. For an undelayed log, every message the
/// zone sends is also checked against the log bit for bit.
pub fn replay_zone(scenario: &Scenario, log: &RoundLog, zone: usize) -> Result<Vec<f64>> {
    let cl = ClosedLoop::new(scenario)?;
    let layout = cl.layout();
    if zone >= layout.zones {
        return Err(Error::Structure(format!("zone {zone} out of range")));
    }
    let x = cl.initial_state()?;
    let logic = match &cl.zones {
        ZoneBank::One(v) => ZoneLogic::One(v[zone].clone()),
        ZoneBank::Two(v) => ZoneLogic::Two(v[zone].clone()),
    };
    let mut agent = ZoneAgent::new(zone, logic, x[layout.zone(zone)].to_vec());
    let links = topology_check(&scenario.graph, scenario.is_joint(), scenario.variant);
    let me = agent.id();
    let duals = agent.logic.duals();
    let mut scratch = Vec::new();

    for r in &log.rounds {
        let mut mb = RoundMailbox::default();
        let mut sensed = RoundMailbox::default();
        for e in r.delivered.iter().filter(|e| e.to == me) {
            mb.post(&links, *e)?;
            if matches!(e.from, AgentId::Plant | AgentId::Compressor) {
                sensed.post(&links, *e)?;
            }
        }
        let sched = cl.sample(r.step, STAGE_OFFSETS[r.stage]);
        let clock = ZoneClock { setpoint: sched.setpoints[zone], energy_weight: sched.energy_weight, supply: sched.supply };
        if log.delay == 0 {
            let sent = agent.post(sensed.inbox(me), &clock)?;
            let logged: Vec<Envelope> = r.delivered.iter().filter(|e| e.from == me).copied().collect();
            let same = sent.len() == logged.len()
                && sent.iter().all(|s| logged.iter().any(|l| l.to == s.to && bits_eq(&l.payload, &s.payload)));
            if !same {
                return Err(Error::Routing(format!("zone {zone} diverged from the log at step {} stage {}", r.step, r.stage)));
            }
        }
        agent.update(mb.inbox(me), &clock, r.stage, scenario.dt)?;
        if r.stage == 3 {
            agent.st.clamp(&duals, 0, &mut scratch);
        }
    }
    Ok(agent.st.x)
}

fn bits_eq(a: &Payload, b: &Payload) -> bool {
    let v = |p: &Payload| -> Vec<u64> {
        match *p {
            Payload::Neighbor(m) => vec![0, m.sender as u64, m.zeta.to_bits(), m.tracking_error.to_bits()],
            Payload::ToCompressor(m) => vec![1, m.sender as u64, m.heat.to_bits(), m.mu_kappa.to_bits()],
            Payload::Broadcast(m) => vec![2, m.supply.to_bits()],
            Payload::Measurement(m) => vec![3, m.air.to_bits(), m.floor.to_bits()],
            Payload::Actuation { flow } => vec![4, flow.to_bits()],
        }
    };
    v(a) == v(b)
}
