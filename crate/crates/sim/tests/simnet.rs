use std::collections::BTreeSet;

use vns_core::protocol::{Directive, Message, MessageEnvelope};
use vns_core::body::StimulusReading;
use vns_core::{ChildLink, NodeId, Pose2, PortId, SimTime, SubtreeDescription};
use vns_sim::{Params, SimError, TraceKind, World};

fn pair(params: Params, seed: u64) -> World {
    let mut tree = SubtreeDescription::leaf(NodeId(0), Default::default());
    tree.insert_child(ChildLink::mated(PortId(0), PortId(4), SubtreeDescription::leaf(NodeId(1), Default::default())));
    let mut w = World::new(params, seed);
    w.spawn_body(tree, Pose2::new(0.0, 0.0, 0.0)).unwrap();
    w
}

fn report(w: &World) -> MessageEnvelope {
    let (port, _) = w.link_ports(NodeId(0), NodeId(1)).unwrap();
    MessageEnvelope {
        src: NodeId(1),
        dst: NodeId(0),
        port,
        payload: Message::SensorReport {
            origin: NodeId(1),
            reading: StimulusReading { distance: 1.0, bearing: 0.0, sensed_at: w.clock() },
        },
        send_time: w.clock(),
    }
}

fn with_drop(p: f64) -> Params {
    Params { drop_probability: p, ..Params::default() }
}

fn mids(w: &World, kind: TraceKind) -> Vec<u64> {
    w.trace()
        .of_kind(kind)
        .filter(|r| {
            let name = r.field("msg").or_else(|| r.field("payload")?.get("type"));
            name.is_some_and(|m| m == "SensorReport")
        })
        .filter_map(|r| r.field("mid")?.as_u64())
        .collect()
}

#[test]
fn lossless_link_delivers_after_latency() {
    let mut w = pair(with_drop(0.0), 1);
    w.run_until(SimTime::from_secs(0.25)).unwrap();
    let sent_at = w.clock();
    w.transmit(report(&w)).unwrap();
    w.run_until(SimTime::from_secs(1.0)).unwrap();
    let delivered: Vec<_> = w.trace().of_kind(TraceKind::MsgDeliver).filter(|r| r.field("msg").is_some_and(|m| m == "SensorReport")).collect();
    assert_eq!(delivered.len(), 1);
    assert_eq!(delivered[0].time(), sent_at + SimTime::from_secs(w.params().latency));
    assert!(w.node(NodeId(0)).unwrap().reports.contains_key(&NodeId(1)));
}

#[test]
fn certain_loss_never_delivers() {
    let mut w = pair(with_drop(1.0), 1);
    for _ in 0..20 {
        w.transmit(report(&w)).unwrap();
    }
    w.run_until(SimTime::from_secs(1.0)).unwrap();
    assert!(mids(&w, TraceKind::MsgDeliver).is_empty());
    assert_eq!(mids(&w, TraceKind::MsgDrop).len(), 20);
    assert!(w.trace().of_kind(TraceKind::MsgDrop).all(|r| r.field("reason").is_some_and(|x| x == "loss")));
}

#[test]
fn structural_traffic_is_never_lost() {
    let mut w = pair(with_drop(1.0), 1);
    w.directive(NodeId(0), Directive::Detach(NodeId(1))).unwrap();
    assert!(w.run_until_quiescent(SimTime::from_secs(2.0)));
    assert_eq!(w.node(NodeId(0)).unwrap().knowledge.len(), 1);
    w.directive(NodeId(1), Directive::Dock { port: PortId(4), peer: NodeId(0), peer_port: PortId(0) }).unwrap();
    assert!(w.run_until_quiescent(SimTime::from_secs(2.0)));
    assert_eq!(w.node(NodeId(0)).unwrap().knowledge.len(), 2);
}

fn drop_pattern(seed: u64) -> BTreeSet<u64> {
    let mut w = pair(with_drop(0.3), seed);
    for _ in 0..1000 {
        w.transmit(report(&w)).unwrap();
    }
    mids(&w, TraceKind::MsgDrop).into_iter().collect()
}

#[test]
fn drop_pattern_is_a_function_of_the_seed() {
    let a = drop_pattern(42);
    assert_eq!(a, drop_pattern(42));
    assert_ne!(a, drop_pattern(43));
    assert!((230..370).contains(&a.len()), "{} drops of 1000", a.len());
}

#[test]
fn unmated_transmit_is_rejected() {
    let mut w = World::new(Params::default(), 1);
    w.add_robot(NodeId(0), Default::default(), Pose2::new(0.0, 0.0, 0.0)).unwrap();
    w.add_robot(NodeId(1), Default::default(), Pose2::new(1.0, 0.0, 0.0)).unwrap();
    let env = MessageEnvelope {
        src: NodeId(1),
        dst: NodeId(0),
        port: PortId(0),
        payload: Message::Heartbeat { brain: NodeId(1) },
        send_time: w.clock(),
    };
    assert!(matches!(w.transmit(env), Err(SimError::LinkNotMated { .. })));
    assert_eq!(w.trace().of_kind(TraceKind::Violation).count(), 1);
}

#[test]
fn delivery_is_fifo_per_link() {
    let mut w = pair(with_drop(0.0), 1);
    for _ in 0..50 {
        w.transmit(report(&w)).unwrap();
    }
    w.run_until(SimTime::from_secs(0.5)).unwrap();
    let sent = mids(&w, TraceKind::MsgSend);
    let got = mids(&w, TraceKind::MsgDeliver);
    assert_eq!(sent.len(), 50);
    assert_eq!(got, sent);
}

#[test]
fn severed_link_drops_in_flight_messages() {
    let mut w = pair(with_drop(0.0), 1);
    w.directive(NodeId(0), Directive::Detach(NodeId(1))).unwrap();
    // The order lands after one latency; this report lands after the cut.
    w.run_until(SimTime::from_secs(w.params().latency / 2.0)).unwrap();
    w.transmit(report(&w)).unwrap();
    w.run_until(SimTime::from_secs(0.5)).unwrap();
    assert!(mids(&w, TraceKind::MsgDeliver).is_empty());
    let drops: Vec<_> = w.trace().of_kind(TraceKind::MsgDrop).collect();
    assert_eq!(drops.len(), 1);
    assert_eq!(drops[0].field("reason").and_then(|r| r.as_str()), Some("unmated"));
}

#[test]
fn dead_receiver_swallows_messages() {
    let mut w = pair(with_drop(0.0), 1);
    w.transmit(report(&w)).unwrap();
    w.inject_fault(NodeId(0)).unwrap();
    w.run_until(SimTime::from_secs(0.5)).unwrap();
    assert!(w.trace().of_kind(TraceKind::MsgDrop).any(|r| r.field("reason").is_some_and(|x| x == "dead")));
    assert!(matches!(w.inject_fault(NodeId(0)), Err(SimError::UnknownNode(_))));
}
