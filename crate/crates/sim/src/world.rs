//! Discrete-event world: event queue, link transport, ground-truth bodies
//! and the glue that feeds node state machines.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use vns_core::body::{sense_stimulus, ModuleCommand, PhysicsState, StimulusPath};
use vns_core::protocol::{Directive, LocalAction, Message, MessageEnvelope, NodeEvent, NodeState, ProtocolConfig};
use vns_core::topology::{BodyMap, Capabilities, NodeId, PortId, SubtreeDescription, TopologyError};
use vns_core::{Pose2, SimTime, Vec2};

use crate::director::Director;
use crate::params::Params;
use crate::scenario::Action;
use crate::trace::{Trace, TraceKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub latency: SimTime,
    pub drop_probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    Deliver { env: MessageEnvelope, mid: u64 },
    Timer(NodeId),
    PhysicsTick,
    SensorTick,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("event at {event} is before the clock ({clock})")]
    TimeTravel { event: SimTime, clock: SimTime },
    #[error("{src} and {dst} are not mated")]
    LinkNotMated { src: NodeId, dst: NodeId },
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("unknown or dead node {0}")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

pub struct World {
    clock: SimTime,
    queue: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    next_mid: u64,
    nodes: BTreeMap<NodeId, NodeState>,
    dead: BTreeSet<NodeId>,
    physics: PhysicsState,
    wheels: BTreeMap<NodeId, ModuleCommand>,
    leds: BTreeMap<NodeId, u32>,
    stimulus: Option<StimulusPath>,
    rng: ChaCha8Rng,
    trace: Trace,
    params: Params,
    cfg: ProtocolConfig,
    link: LinkModel,
    /// Same-instant node events (physical notifications, directives); all
    /// are handled before the queue advances.
    immediate: VecDeque<(NodeId, NodeEvent)>,
    structural_in_flight: usize,
    /// Subtrees the stepping node just sent a `SplitNotice` about.
    noticed: Vec<NodeId>,
    was_quiescent: bool,
    phys_ticks: u64,
    pub(crate) director: Director,
}

impl World {
    pub fn new(params: Params, seed: u64) -> Self {
        let cfg = params.protocol_config();
        let link = LinkModel { latency: SimTime::from_secs(params.latency), drop_probability: params.drop_probability };
        let mut w = World {
            clock: SimTime::ZERO,
            queue: BinaryHeap::new(),
            next_seq: 0,
            next_mid: 0,
            nodes: BTreeMap::new(),
            dead: BTreeSet::new(),
            physics: PhysicsState::default(),
            wheels: BTreeMap::new(),
            leds: BTreeMap::new(),
            stimulus: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Trace::default(),
            cfg,
            link,
            immediate: VecDeque::new(),
            structural_in_flight: 0,
            noticed: Vec::new(),
            was_quiescent: false,
            phys_ticks: 0,
            director: Director::default(),
            params,
        };
        let (p, s) = (SimTime::from_secs(w.params.dt_phys), SimTime::from_secs(w.params.dt_sense));
        w.push(p, EventKind::PhysicsTick);
        w.push(s, EventKind::SensorTick);
        w
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn link_model(&self) -> LinkModel {
        self.link
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeState> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeState> {
        &self.nodes
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id) && !self.dead.contains(&id)
    }

    pub fn dead(&self) -> &BTreeSet<NodeId> {
        &self.dead
    }

    pub fn physics(&self) -> &PhysicsState {
        &self.physics
    }

    pub fn world_pose(&self, id: NodeId) -> Option<Pose2> {
        self.physics.world_pose(id)
    }

    pub fn leds(&self) -> &BTreeMap<NodeId, u32> {
        &self.leds
    }

    pub fn wheel(&self, id: NodeId) -> ModuleCommand {
        self.wheels.get(&id).copied().unwrap_or(ModuleCommand::STOP)
    }

    pub fn director(&self) -> &Director {
        &self.director
    }

    pub fn stimulus_at(&self, t: SimTime) -> Option<Vec2> {
        self.stimulus.as_ref()?.position_at(t)
    }

    pub fn set_stimulus(&mut self, path: Option<StimulusPath>) {
        self.stimulus = path;
    }

    /// Ground-truth body holding `id`.
    pub fn body_map(&self, id: NodeId) -> Option<&BodyMap> {
        Some(&self.physics.bodies.get(&self.physics.body_of(id)?)?.map)
    }

    pub fn caps(&self, id: NodeId) -> Option<Capabilities> {
        self.nodes.get(&id).map(|n| n.caps)
    }

    pub(crate) fn trace_push(&mut self, node: Option<NodeId>, kind: TraceKind, data: Value) {
        self.trace.push(self.clock, node, kind, data);
    }

    fn push(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { time, seq, kind }));
    }

    pub fn schedule(&mut self, time: SimTime, kind: EventKind) -> Result<(), SimError> {
        if time < self.clock {
            return Err(SimError::TimeTravel { event: time, clock: self.clock });
        }
        if let EventKind::Deliver { env, .. } = &kind {
            if env.payload.is_structural() {
                self.structural_in_flight += 1;
            }
        }
        self.push(time, kind);
        Ok(())
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Adds a free robot: its own brain, standing still.
    pub fn add_robot(&mut self, id: NodeId, caps: Capabilities, pose: Pose2) -> Result<(), SimError> {
        self.spawn_body(SubtreeDescription::leaf(id, caps), pose)
    }

    /// Adds an already-docked body whose nodes start with settled state.
    pub fn spawn_body(&mut self, tree: SubtreeDescription, root_pose: Pose2) -> Result<(), SimError> {
        let map = BodyMap::from_tree(tree);
        if let Some(v) = map.validate().first() {
            return Err(SimError::Topology(match *v {
                vns_core::topology::Violation::DuplicateNodeId(n) => TopologyError::DuplicateNodeId(n),
                vns_core::topology::Violation::PortOccupied { node, port } => TopologyError::PortOccupied { node, port },
                vns_core::topology::Violation::PortOutOfRange { node, port } => TopologyError::PortOutOfRange { node, port },
            }));
        }
        let ids = map.tree.node_ids();
        if let Some(dup) = ids.iter().find(|id| self.nodes.contains_key(id)) {
            return Err(SimError::DuplicateNode(*dup));
        }
        for id in ids {
            let st = NodeState::from_body(&map, id, self.clock, &self.cfg).expect("node in body");
            self.nodes.insert(id, st);
            self.push(self.clock + self.cfg.heartbeat_period, EventKind::Timer(id));
        }
        self.physics.add_body(map, root_pose);
        self.was_quiescent = false;
        Ok(())
    }

    pub(crate) fn load_script(&mut self, script: Vec<(SimTime, Action)>, templates: BTreeMap<String, vns_core::behavior::MorphologyTemplate>) {
        self.director.load(script, templates);
    }

    /// Crash-stops a node: it never steps again and its wheels stop.
    pub fn inject_fault(&mut self, id: NodeId) -> Result<(), SimError> {
        if !self.is_alive(id) {
            return Err(SimError::UnknownNode(id));
        }
        self.dead.insert(id);
        self.wheels.insert(id, ModuleCommand::STOP);
        self.trace_push(Some(id), TraceKind::FaultInjected, json!({}));
        self.was_quiescent = self.was_quiescent && self.is_quiescent();
        Ok(())
    }

    /// Hands a directive to `node` and processes it at once.
    pub fn directive(&mut self, node: NodeId, d: Directive) -> Result<(), SimError> {
        if !self.is_alive(node) {
            return Err(SimError::UnknownNode(node));
        }
        self.immediate.push_back((node, NodeEvent::Directive(d)));
        self.drain_immediate();
        self.note_quiescence();
        Ok(())
    }

    pub(crate) fn queue_directive(&mut self, node: NodeId, d: Directive) {
        if self.is_alive(node) {
            self.immediate.push_back((node, NodeEvent::Directive(d)));
        }
    }

    /// Both sides' ports of the edge between `a` and `b`, if they are mated.
    pub fn link_ports(&self, a: NodeId, b: NodeId) -> Option<(PortId, PortId)> {
        let map = self.body_map(a)?;
        match (map.parent_of(a), map.parent_of(b)) {
            (Some((p, via, entry)), _) if p == b => Some((entry, via)),
            (_, Some((p, via, entry))) if p == a => Some((via, entry)),
            _ => None,
        }
    }

    /// No structural message in flight and no live module still docked to
    /// a dead one. Heartbeat timers never stop, so they do not count.
    pub fn is_quiescent(&self) -> bool {
        if self.structural_in_flight > 0 || !self.immediate.is_empty() {
            return false;
        }
        self.dead.iter().all(|d| {
            let Some(map) = self.body_map(*d) else { return true };
            let parent_live = map.parent_of(*d).is_some_and(|(p, _, _)| !self.dead.contains(&p));
            let child_live = map.subtree(*d).is_some_and(|s| s.children.iter().any(|c| !self.dead.contains(&c.sub.root)));
            !parent_live && !child_live
        })
    }

    /// Everything that disagrees with ground truth: knowledge, roles and
    /// brain placement, per live component.
    pub fn check_consistency(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (root, body) in &self.physics.bodies {
            let live: Vec<NodeId> = body.map.tree.node_ids().into_iter().filter(|n| !self.dead.contains(n)).collect();
            if live.is_empty() {
                continue;
            }
            if self.dead.contains(root) {
                problems.push(format!("body rooted at dead {root} still holds live modules"));
                continue;
            }
            for id in &live {
                let st = &self.nodes[id];
                let truth = body.map.subtree(*id).expect("live node in body");
                if &st.knowledge != truth {
                    problems.push(format!("knowledge of {id} differs from ground truth"));
                }
                if st.is_brain() != st.parent_link().is_none() {
                    problems.push(format!("{id} breaks role/parent duality"));
                }
                if st.is_brain() != (id == root) {
                    problems.push(format!("{id} brain={} but body root is {root}", st.is_brain()));
                }
            }
        }
        problems
    }

    fn components_summary(&self) -> Value {
        let comps: Vec<Value> = self
            .physics
            .bodies
            .iter()
            .filter_map(|(root, b)| {
                let live: Vec<NodeId> = b.map.tree.node_ids().into_iter().filter(|n| !self.dead.contains(n)).collect();
                if live.is_empty() {
                    return None;
                }
                let brains: Vec<u32> = live.iter().filter(|n| self.nodes[n].is_brain()).map(|n| n.0).collect();
                Some(json!({"root": root.0, "size": live.len(), "brains": brains}))
            })
            .collect();
        json!({ "components": comps })
    }

    fn note_quiescence(&mut self) {
        let q = self.is_quiescent();
        if q && !self.was_quiescent {
            let summary = self.components_summary();
            self.trace_push(None, TraceKind::Quiescent, summary);
            let problems = self.check_consistency();
            if problems.is_empty() {
                self.trace_push(None, TraceKind::CheckPass, json!({"check": "consistency"}));
            } else {
                self.trace_push(None, TraceKind::CheckFail, json!({"check": "consistency", "problems": problems}));
            }
        }
        self.was_quiescent = q;
    }

    /// Runs one event (or one due script action). Returns false when the
    /// queue is empty.
    pub fn step(&mut self) -> bool {
        self.step_bounded(None)
    }

    fn step_bounded(&mut self, t_end: Option<SimTime>) -> bool {
        let ev_t = self.queue.peek().map(|Reverse(e)| e.time);
        let act_t = self.director.next_action_time();
        let within = |t: SimTime| t_end.is_none_or(|end| t <= end);
        // A script action at time t runs after every event due at t.
        if let Some(at) = act_t.filter(|&at| within(at) && ev_t.is_none_or(|et| at < et)) {
            self.clock = self.clock.max(at);
            let mut d = std::mem::take(&mut self.director);
            d.run_next_action(self);
            self.director = d;
        } else if ev_t.is_some_and(within) {
            let Reverse(ev) = self.queue.pop().expect("peeked");
            self.clock = ev.time;
            self.dispatch(ev.kind);
        } else {
            return false;
        }
        self.drain_immediate();
        self.note_quiescence();
        true
    }

    pub fn run_until(&mut self, t_end: SimTime) -> Result<(), SimError> {
        if t_end < self.clock {
            return Err(SimError::TimeTravel { event: t_end, clock: self.clock });
        }
        while self.step_bounded(Some(t_end)) {}
        self.clock = t_end;
        Ok(())
    }

    /// Steps until quiescent or until `limit` of simulated time has passed.
    pub fn run_until_quiescent(&mut self, limit: SimTime) -> bool {
        let end = self.clock + limit;
        while !self.is_quiescent() {
            if !self.step_bounded(Some(end)) {
                break;
            }
        }
        self.is_quiescent()
    }

    /// Final bookkeeping of a scripted run: unfinished work, a last
    /// consistency check and a closing snapshot.
    pub fn finish(&mut self) {
        let pending = self.director.pending_work();
        if !pending.is_empty() {
            self.trace_push(None, TraceKind::CheckFail, json!({"check": "script", "pending": pending}));
        }
        if self.is_quiescent() {
            let problems = self.check_consistency();
            if problems.is_empty() {
                self.trace_push(None, TraceKind::CheckPass, json!({"check": "final"}));
            } else {
                self.trace_push(None, TraceKind::CheckFail, json!({"check": "final", "problems": problems}));
            }
        } else {
            self.trace_push(None, TraceKind::CheckFail, json!({"check": "final", "problems": ["not quiescent at end"]}));
        }
        self.snapshot();
    }

    /// Marks the end of the trace.
    pub fn close(&mut self) {
        self.trace_push(None, TraceKind::End, json!({}));
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::Deliver { env, mid } => self.deliver(env, mid),
            EventKind::Timer(id) => {
                if self.is_alive(id) {
                    self.step_node(id, NodeEvent::TimerFired);
                    self.push(self.clock + self.cfg.heartbeat_period, EventKind::Timer(id));
                }
            }
            EventKind::PhysicsTick => {
                for (root, body) in self.physics.bodies.iter_mut() {
                    body.command = if self.dead.contains(root) {
                        ModuleCommand::STOP
                    } else {
                        self.wheels.get(root).copied().unwrap_or(ModuleCommand::STOP)
                    };
                }
                self.physics.integrate(self.params.dt_phys);
                self.phys_ticks += 1;
                if self.phys_ticks.is_multiple_of(u64::from(self.params.snapshot_every)) {
                    self.snapshot();
                }
                self.push(self.clock + SimTime::from_secs(self.params.dt_phys), EventKind::PhysicsTick);
            }
            EventKind::SensorTick => {
                if let Some(s) = self.stimulus_at(self.clock) {
                    let ids: Vec<NodeId> = self.nodes.keys().copied().filter(|n| self.is_alive(*n)).collect();
                    for id in ids {
                        if !self.nodes[&id].caps.has_stimulus_sensor {
                            continue;
                        }
                        let pose = self.physics.world_pose(id).expect("live node has a pose");
                        if let Some(r) = sense_stimulus(&pose, s, self.params.r_sense, self.clock) {
                            self.step_node(id, NodeEvent::SensorSampled(Some(r)));
                        }
                    }
                }
                let mut d = std::mem::take(&mut self.director);
                d.tick(self);
                self.director = d;
                self.push(self.clock + SimTime::from_secs(self.params.dt_sense), EventKind::SensorTick);
            }
        }
    }

    fn traced(&self, msg: &Message) -> bool {
        self.params.trace_heartbeats || !matches!(msg, Message::Heartbeat { .. })
    }

    fn deliver(&mut self, env: MessageEnvelope, mid: u64) {
        if env.payload.is_structural() {
            self.structural_in_flight -= 1;
        }
        let reason = if self.dead.contains(&env.dst) {
            Some("dead")
        } else if self.link_ports(env.dst, env.src).map(|(p, _)| p) != Some(env.port) {
            Some("unmated")
        } else {
            None
        };
        if let Some(reason) = reason {
            if self.traced(&env.payload) {
                self.trace_push(
                    Some(env.dst),
                    TraceKind::MsgDrop,
                    json!({"mid": mid, "src": env.src.0, "dst": env.dst.0, "msg": env.payload.name(), "reason": reason}),
                );
            }
            return;
        }
        if self.traced(&env.payload) {
            self.trace_push(
                Some(env.dst),
                TraceKind::MsgDeliver,
                json!({"mid": mid, "src": env.src.0, "dst": env.dst.0, "msg": env.payload.name()}),
            );
        }
        self.step_node(env.dst, NodeEvent::MessageArrived(env));
    }

    /// Puts an envelope on the wire. Only datagram traffic can be lost.
    pub fn transmit(&mut self, env: MessageEnvelope) -> Result<(), SimError> {
        if self.link_ports(env.dst, env.src).map(|(p, _)| p) != Some(env.port) {
            self.trace_push(
                Some(env.src),
                TraceKind::Violation,
                json!({"error": "LinkNotMated", "src": env.src.0, "dst": env.dst.0, "msg": env.payload.name()}),
            );
            return Err(SimError::LinkNotMated { src: env.src, dst: env.dst });
        }
        let mid = self.next_mid;
        self.next_mid += 1;
        let traced = self.traced(&env.payload);
        if traced {
            let payload = serde_json::to_value(&env.payload).expect("message serializes");
            self.trace_push(
                Some(env.src),
                TraceKind::MsgSend,
                json!({"mid": mid, "src": env.src.0, "dst": env.dst.0, "port": env.port.0, "payload": payload}),
            );
        }
        if env.payload.is_datagram() && self.link.drop_probability > 0.0 && self.rng.random::<f64>() < self.link.drop_probability {
            if traced {
                self.trace_push(
                    Some(env.src),
                    TraceKind::MsgDrop,
                    json!({"mid": mid, "src": env.src.0, "dst": env.dst.0, "msg": env.payload.name(), "reason": "loss"}),
                );
            }
            return Ok(());
        }
        let at = self.clock + self.link.latency;
        self.schedule(at, EventKind::Deliver { env, mid })
    }

    fn drain_immediate(&mut self) {
        while let Some((id, ev)) = self.immediate.pop_front() {
            if self.is_alive(id) {
                self.step_node(id, ev);
            }
        }
    }

    fn step_node(&mut self, id: NodeId, ev: NodeEvent) {
        let st = self.nodes.remove(&id).expect("stepping a known node");
        let (st, out) = st.step(ev, self.clock, &self.cfg);
        self.nodes.insert(id, st);
        for v in out.violations {
            self.trace_push(Some(id), TraceKind::Violation, json!({"error": v.to_string()}));
        }
        for l in out.detected {
            self.trace_push(
                Some(id),
                TraceKind::FaultDetected,
                json!({"peer": l.peer.0, "port": l.port.0, "direction": format!("{:?}", l.direction)}),
            );
        }
        self.noticed = out
            .outbox
            .iter()
            .filter_map(|e| match e.payload {
                Message::SplitNotice { detached_root } => Some(detached_root),
                _ => None,
            })
            .collect();
        for env in out.outbox {
            let _ = self.transmit(env);
        }
        for a in out.actions {
            self.apply(id, a);
        }
    }

    fn apply(&mut self, id: NodeId, action: LocalAction) {
        match action {
            LocalAction::SetWheelCommand(c) => {
                if self.wheels.insert(id, c) != Some(c) {
                    self.trace_push(
                        Some(id),
                        TraceKind::Command,
                        json!({"vx": c.velocity.x, "vy": c.velocity.y, "omega": c.omega}),
                    );
                }
            }
            LocalAction::SetLeds(mask) => {
                if self.leds.get(&id).copied().unwrap_or(0) != mask {
                    self.leds.insert(id, mask);
                    self.trace_push(Some(id), TraceKind::LedSet, json!({"mask": mask}));
                }
            }
            LocalAction::ReleasePort(port) => self.release(id, port),
            LocalAction::GripPort { port, peer, peer_port } => self.grip(id, port, peer, peer_port),
            LocalAction::BecomeBrain => {
                if self.physics.body_of(id) != Some(id) {
                    let _ = self.physics.reroot(id);
                }
                self.wheels.insert(id, ModuleCommand::STOP);
                self.trace_push(Some(id), TraceKind::RoleChange, json!({"role": "Brain"}));
            }
            LocalAction::CedeBrain => {
                self.trace_push(Some(id), TraceKind::RoleChange, json!({"role": "Member"}));
            }
        }
    }

    fn release(&mut self, id: NodeId, port: PortId) {
        let Some(map) = self.body_map(id) else { return };
        let (parent, child) = match map.parent_of(id) {
            Some((p, _, entry)) if entry == port => (p, id),
            _ => match map.subtree(id).and_then(|s| s.child_at_port(port)) {
                Some(c) => (id, c.sub.root),
                None => {
                    self.trace_push(Some(id), TraceKind::Violation, json!({"error": "release of an empty port", "port": port.0}));
                    return;
                }
            },
        };
        let (_, via, entry) = map.parent_of(child).expect("child has a parent");
        let detached: Vec<u32> = map.subtree(child).expect("child").node_ids().iter().map(|n| n.0).collect();
        let root = map.root();
        // SplitNotice hops the parent side will send: one per live member
        // from the parent up to (not including) the brain.
        let known = self.is_alive(parent)
            && if parent == id {
                self.noticed.contains(&child)
            } else {
                self.nodes[&parent].knowledge.child_at_port(via).is_some_and(|c| c.sub.root == child)
            };
        let mut hops = 0u32;
        if known {
            let mut x = parent;
            while x != root && self.is_alive(x) {
                hops += 1;
                x = map.parent_of(x).expect("non-root has a parent").0;
            }
        }
        self.physics.detach(child).expect("edge exists");
        self.trace_push(
            Some(id),
            TraceKind::Detach,
            json!({"parent": parent.0, "port": via.0, "child": child.0, "entry": entry.0, "detached": detached, "notice_hops": hops}),
        );
        self.immediate.push_back((parent, NodeEvent::PhysicalDetached { port: via }));
        self.immediate.push_back((child, NodeEvent::PhysicalDetached { port: entry }));
    }

    fn grip(&mut self, id: NodeId, port: PortId, peer: NodeId, peer_port: PortId) {
        let fail = |w: &mut World, why: &str| {
            w.trace_push(Some(id), TraceKind::Violation, json!({"error": why, "peer": peer.0, "port": port.0}));
        };
        if self.physics.body_of(id) != Some(id) {
            return fail(self, "gripper is not the root of its body");
        }
        let Some(peer_pose) = self.physics.world_pose(peer) else { return fail(self, "unknown peer") };
        if self.dead.contains(&peer) {
            return fail(self, "peer is dead");
        }
        let snapped = peer_pose.compose(&vns_core::topology::mate_pose(peer_port, port));
        let before = self.physics.bodies[&id].pose;
        self.physics.bodies.get_mut(&id).expect("gripper body").pose = snapped;
        if let Err(e) = self.physics.attach(peer, peer_port, id, port) {
            self.physics.bodies.get_mut(&id).expect("gripper body").pose = before;
            return fail(self, &e.to_string());
        }
        let map = self.body_map(peer).expect("peer body");
        let depth = map.tree.depth_of(peer).expect("peer in body");
        let size = map.subtree(id).expect("attached").len();
        self.trace_push(
            Some(id),
            TraceKind::Attach,
            json!({"parent": peer.0, "port": peer_port.0, "child": id.0, "entry": port.0, "parent_depth": depth, "size": size}),
        );
        self.wheels.insert(id, ModuleCommand::STOP);
        self.immediate.push_back((
            peer,
            NodeEvent::PhysicalAttached { port: peer_port, peer: id, peer_port: port, direction: vns_core::protocol::Direction::ChildWard },
        ));
        self.immediate.push_back((
            id,
            NodeEvent::PhysicalAttached { port, peer, peer_port, direction: vns_core::protocol::Direction::ParentWard },
        ));
    }

    /// Pose snapshot of every module, the tree edges and the stimulus.
    pub(crate) fn snapshot(&mut self) {
        let poses: Vec<Value> = self
            .physics
            .world_poses()
            .into_iter()
            .map(|(id, p)| json!([id.0, round6(p.x), round6(p.y), round6(p.theta)]))
            .collect();
        let mut edges = Vec::new();
        for b in self.physics.bodies.values() {
            for (p, c) in b.map.tree.edges() {
                edges.push(json!([p.0, c.0]));
            }
        }
        let brains: Vec<u32> = self.nodes.iter().filter(|(id, s)| s.is_brain() && !self.dead.contains(id)).map(|(id, _)| id.0).collect();
        let dead: Vec<u32> = self.dead.iter().map(|d| d.0).collect();
        let stim = self.stimulus_at(self.clock).map(|s| json!([round6(s.x), round6(s.y)])).unwrap_or(Value::Null);
        self.trace_push(None, TraceKind::Snapshot, json!({"poses": poses, "edges": edges, "brains": brains, "dead": dead, "stimulus": stim}));
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::new(Params::default(), 7)
    }

    #[test]
    fn schedule_rejects_the_past() {
        let mut w = world();
        w.run_until(SimTime::from_secs(1.0)).unwrap();
        assert_eq!(
            w.schedule(SimTime::from_secs(0.5), EventKind::PhysicsTick),
            Err(SimError::TimeTravel { event: SimTime::from_secs(0.5), clock: SimTime::from_secs(1.0) })
        );
        assert!(w.schedule(w.clock(), EventKind::Timer(NodeId(0))).is_ok());
    }

    #[test]
    fn same_time_events_follow_seq() {
        let a = Event { time: SimTime::from_micros(5), seq: 2, kind: EventKind::PhysicsTick };
        let b = Event { time: SimTime::from_micros(5), seq: 1, kind: EventKind::SensorTick };
        let c = Event { time: SimTime::from_micros(4), seq: 9, kind: EventKind::SensorTick };
        let mut heap: BinaryHeap<Reverse<Event>> = [a.clone(), b.clone(), c.clone()].into_iter().map(Reverse).collect();
        let order: Vec<u64> = std::iter::from_fn(|| heap.pop().map(|Reverse(e)| e.seq)).collect();
        assert_eq!(order, vec![9, 1, 2]);
    }

    #[test]
    fn empty_world_advances_clock() {
        let mut w = world();
        w.run_until(SimTime::from_secs(2.0)).unwrap();
        assert_eq!(w.clock(), SimTime::from_secs(2.0));
        assert!(w.trace().of_kind(TraceKind::MsgSend).next().is_none());
    }
}
