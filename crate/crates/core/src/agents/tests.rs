use super::*;
use crate::control::CompressorGains;
use crate::model::{reference_building, reference_ghp};
use crate::sim::{run_closed_loop, Profile, Scheme};

fn scenario(joint: bool, variant: Variant, horizon: f64) -> Scenario {
    let scheme = if joint {
        Scheme::Joint { compressor: CompressorGains::default() }
    } else {
        Scheme::FlowOnly { supply: Profile::constant(40.0) }
    };
    let mut sc = Scenario::constant(reference_building(), reference_ghp(), scheme, 0.0, &[0.1, 0.0, 0.2, 0.0], 1.0, horizon);
    sc.variant = variant;
    sc.record_every = 10;
    sc
}

#[test]
fn link_counts_on_the_reference_cycle() {
    let g = reference_building();
    let full = topology_check(&g, false, Variant::Distributed);
    assert_eq!(full.zone_links(), 8);
    assert_eq!(full.messages_per_round(), 8);
    assert_eq!(topology_check(&g, false, Variant::Decentralized).comm.len(), 0);
    let reduced = topology_check(&g, true, Variant::Decentralized);
    assert_eq!(reduced.zone_links(), 0);
    assert_eq!(reduced.compressor_links(), 8);
    let joint = topology_check(&g, true, Variant::Distributed);
    assert_eq!(joint.messages_per_round(), 2 * g.edges().len() + 2 * g.len());
}

#[test]
fn agents_match_the_monolithic_loop_bit_for_bit() {
    for joint in [false, true] {
        for variant in [Variant::Distributed, Variant::Decentralized] {
            let sc = scenario(joint, variant, 120.0);
            let mono = run_closed_loop(&sc).unwrap();
            let run = run_agents(&sc, &AgentOptions::default()).unwrap();
            assert_eq!(run.trace, mono, "joint={joint} variant={variant:?}");
            assert_eq!(run.messages_per_round, run.links.messages_per_round());
        }
    }
}

#[test]
fn agent_order_does_not_matter() {
    let sc = scenario(true, Variant::Distributed, 60.0);
    let a = run_agents(&sc, &AgentOptions::default()).unwrap();
    let b = run_agents(&sc, &AgentOptions { reverse_order: true, ..Default::default() }).unwrap();
    assert_eq!(a.trace, b.trace);
}

#[test]
fn delay_changes_the_trajectory_but_not_the_traffic() {
    let sc = scenario(false, Variant::Distributed, 60.0);
    let a = run_agents(&sc, &AgentOptions::default()).unwrap();
    let b = run_agents(&sc, &AgentOptions { delay: 4, ..Default::default() }).unwrap();
    assert!(b.trace.abort.is_none());
    assert_ne!(a.trace.rows.last().unwrap().state, b.trace.rows.last().unwrap().state);
    assert_eq!(a.messages_per_round, b.messages_per_round);
}

#[test]
fn log_round_trips_and_replays() {
    let sc = scenario(true, Variant::Distributed, 5.0);
    let run = run_agents(&sc, &AgentOptions { log: true, ..Default::default() }).unwrap();
    let log = run.log.unwrap();
    assert_eq!(log.rounds.len(), 4 * sc.steps() as usize);
    let parsed = RoundLog::parse(&log.to_text()).unwrap();
    assert_eq!(parsed, log);
    let layout = run.trace.layout;
    let fin = run.trace.final_state().unwrap();
    for i in 0..4 {
        let x = replay_zone(&sc, &parsed, i).unwrap();
        let want = &fin[layout.zone(i)];
        assert!(x.iter().zip(want).all(|(a, b)| a.to_bits() == b.to_bits()), "zone {i}");
    }
}

#[test]
fn tampered_log_is_detected() {
    let sc = scenario(false, Variant::Distributed, 1.0);
    let run = run_agents(&sc, &AgentOptions { log: true, ..Default::default() }).unwrap();
    let mut log = run.log.unwrap();
    let env = log.rounds[3].delivered.iter_mut().find(|e| e.from == AgentId::Zone(1)).unwrap();
    if let Payload::Neighbor(m) = &mut env.payload {
        m.zeta += 1e-12;
    } else if let Payload::Actuation { flow } = &mut env.payload {
        *flow += 1e-12;
    }
    assert!(matches!(replay_zone(&sc, &log, 1), Err(Error::Routing(_))));
}

#[test]
fn routing_rejects_messages_off_the_graph() {
    let links = topology_check(&reference_building(), false, Variant::Distributed);
    let msg = Payload::Neighbor(NeighborMsg { sender: 0, zeta: 0.0, tracking_error: 0.0 });
    let mut mb = RoundMailbox::default();
    // zones 0 and 3 are opposite corners of the cycle
    let r = mb.post(&links, Envelope { from: AgentId::Zone(0), to: AgentId::Zone(3), payload: msg });
    assert!(matches!(r, Err(Error::Routing(_))));
    mb.post(&links, Envelope { from: AgentId::Zone(0), to: AgentId::Zone(1), payload: msg }).unwrap();
    let again = mb.post(&links, Envelope { from: AgentId::Zone(0), to: AgentId::Zone(1), payload: msg });
    assert!(matches!(again, Err(Error::Routing(_))));
    let none = topology_check(&reference_building(), false, Variant::Decentralized);
    let r = RoundMailbox::default().post(&none, Envelope { from: AgentId::Zone(0), to: AgentId::Zone(1), payload: msg });
    assert!(matches!(r, Err(Error::Routing(_))));
    let r = RoundMailbox::default().post(&links, Envelope { from: AgentId::Zone(0), to: AgentId::Compressor, payload: msg });
    assert!(matches!(r, Err(Error::Routing(_))));
}

#[test]
fn abort_matches_the_monolithic_loop() {
    let mut sc = scenario(false, Variant::Distributed, 120.0);
    sc.scheme = Scheme::FlowOnly { supply: Profile::steps(&[(0.0, 40.0), (10.0 / 3600.0, 80.0)]) };
    let mono = run_closed_loop(&sc).unwrap();
    let run = run_agents(&sc, &AgentOptions::default()).unwrap();
    assert!(mono.abort.is_some());
    assert_eq!(run.trace, mono);
}
