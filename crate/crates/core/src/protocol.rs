//! Per-module protocol state machine.
//!
//! Messages only travel over physical links, so the logical topology is the
//! connection tree itself. Every module keeps a [`SubtreeDescription`] of
//! itself and its descendants:
//!
//! * a merge is announced by the ceding root with one `MergeAnnounce`; each
//!   ancestor grafts the announced subtree into its own knowledge, appends a
//!   hop record and relays it until it reaches the brain;
//! * a split needs nothing from the detached side: its root already holds
//!   its subtree and simply becomes a brain. The remaining side sends one
//!   `SplitNotice` per hop up to the brain;
//! * authority inside a body moves with `CedeOrder`, each hop flipping one
//!   edge and handing down the description of everything above it;
//! * heartbeats on every link detect crashed neighbours. A lost parent
//!   turns the node into the brain of its own subtree, a lost child is
//!   excised.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::body::{ModuleCommand, StimulusReading};
use crate::geometry::Pose2;
use crate::time::SimTime;
use crate::topology::{mate_pose, BodyMap, Capabilities, ChildLink, NodeId, PortId, SubtreeDescription};

pub const HEARTBEAT_PERIOD: SimTime = SimTime::from_micros(100_000);
pub const FAILURE_TIMEOUT: SimTime = SimTime::from_micros(500_000);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProtocolConfig {
    pub heartbeat_period: SimTime,
    pub failure_timeout: SimTime,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig { heartbeat_period: HEARTBEAT_PERIOD, failure_timeout: FAILURE_TIMEOUT }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Role {
    Brain,
    Member,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Direction {
    ParentWard,
    ChildWard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinkState {
    /// Our port.
    pub port: PortId,
    pub peer: NodeId,
    /// The peer's port on this link.
    pub peer_port: PortId,
    pub direction: Direction,
    pub last_heartbeat_rx: SimTime,
    pub alive: bool,
}

/// Local topology appended by each relay of a `MergeAnnounce`: the relaying
/// node, the port the announce came in on, and the edge below that port.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HopRecord {
    pub node: NodeId,
    pub via_port: PortId,
    pub entry_port: PortId,
    pub relative_pose: Pose2,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MergeAnnounce {
    pub sub: SubtreeDescription,
    /// Port of the attachment node the ceding root docked into.
    pub attach_port: PortId,
    /// Port of the ceding root used for docking.
    pub entry_port: PortId,
    /// Oldest record first.
    pub via_port_chain: Vec<HopRecord>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type"))]
pub enum Message {
    /// Carries the sender's brain belief so members learn who leads them.
    Heartbeat { brain: NodeId },
    MergeAnnounce(MergeAnnounce),
    SplitNotice { detached_root: NodeId },
    SensorReport { origin: NodeId, reading: StimulusReading },
    ActuatorCommand { target: NodeId, command: ModuleCommand },
    LedCommand { target: NodeId, led_mask: u32 },
    DetachOrder { split_at: NodeId },
    /// `upper` is the sender's knowledge once the edge is flipped; it becomes
    /// a child of the receiver at pose `upper_pose`.
    CedeOrder { new_local_root: NodeId, upper: SubtreeDescription, upper_pose: Pose2 },
}

impl Message {
    pub fn name(&self) -> &'static str {
        match self {
            Message::Heartbeat { .. } => "Heartbeat",
            Message::MergeAnnounce(_) => "MergeAnnounce",
            Message::SplitNotice { .. } => "SplitNotice",
            Message::SensorReport { .. } => "SensorReport",
            Message::ActuatorCommand { .. } => "ActuatorCommand",
            Message::LedCommand { .. } => "LedCommand",
            Message::DetachOrder { .. } => "DetachOrder",
            Message::CedeOrder { .. } => "CedeOrder",
        }
    }

    /// Messages that change who knows what about the tree.
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            Message::MergeAnnounce(_) | Message::SplitNotice { .. } | Message::DetachOrder { .. } | Message::CedeOrder { .. }
        )
    }

    /// Periodic traffic that tolerates loss; everything else is delivered
    /// reliably by the link layer.
    pub fn is_datagram(&self) -> bool {
        matches!(self, Message::Heartbeat { .. } | Message::SensorReport { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MessageEnvelope {
    pub src: NodeId,
    pub dst: NodeId,
    /// The receiver's port.
    pub port: PortId,
    pub payload: Message,
    pub send_time: SimTime,
}

/// Requests from the brain's controller (or, for `Dock`, from the ceding
/// root's docking routine) into its own state machine.
#[derive(Clone, Debug, PartialEq)]
pub enum Directive {
    Actuate(Vec<(NodeId, ModuleCommand)>),
    Leds(Vec<(NodeId, u32)>),
    Cede(NodeId),
    Detach(NodeId),
    Dock { port: PortId, peer: NodeId, peer_port: PortId },
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeEvent {
    MessageArrived(MessageEnvelope),
    PhysicalAttached { port: PortId, peer: NodeId, peer_port: PortId, direction: Direction },
    PhysicalDetached { port: PortId },
    TimerFired,
    SensorSampled(Option<StimulusReading>),
    Directive(Directive),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LocalAction {
    SetWheelCommand(ModuleCommand),
    SetLeds(u32),
    ReleasePort(PortId),
    GripPort { port: PortId, peer: NodeId, peer_port: PortId },
    BecomeBrain,
    CedeBrain,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolViolation {
    #[error("message from {src} on unknown link {port}")]
    UnknownLink { src: NodeId, port: PortId },
    #[error("{message} arrived on a {direction:?} link from {src}")]
    WrongDirection { src: NodeId, message: &'static str, direction: Direction },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node id {0} already known; merge refused")]
    DuplicateNodeId(NodeId),
    #[error("hop record for {0} does not match local knowledge")]
    ChainMismatch(NodeId),
    #[error("no route toward {0}")]
    NoRoute(NodeId),
    #[error("only a brain may do this")]
    NotBrain,
    #[error("port {0} is not free")]
    PortBusy(PortId),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutput {
    pub outbox: Vec<MessageEnvelope>,
    pub actions: Vec<LocalAction>,
    /// Links declared dead by the failure detector during this step.
    pub detected: Vec<LinkState>,
    pub violations: Vec<ProtocolViolation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub caps: Capabilities,
    pub role: Role,
    /// Sorted by port.
    pub links: Vec<LinkState>,
    pub knowledge: SubtreeDescription,
    pub brain_id_belief: NodeId,
    pub heartbeat_tx_due: SimTime,
    /// Latest stimulus reading per origin; only a brain keeps these.
    pub reports: BTreeMap<NodeId, StimulusReading>,
}

impl NodeState {
    /// An undocked module: its own brain with no links.
    pub fn new_free(id: NodeId, caps: Capabilities, now: SimTime, cfg: &ProtocolConfig) -> Self {
        NodeState {
            id,
            caps,
            role: Role::Brain,
            links: Vec::new(),
            knowledge: SubtreeDescription::leaf(id, caps),
            brain_id_belief: id,
            heartbeat_tx_due: now + cfg.heartbeat_period,
            reports: BTreeMap::new(),
        }
    }

    /// State of `id` inside an already-assembled, settled body.
    pub fn from_body(body: &BodyMap, id: NodeId, now: SimTime, cfg: &ProtocolConfig) -> Option<Self> {
        let knowledge = body.subtree(id)?.clone();
        let mut links: Vec<LinkState> = knowledge
            .children
            .iter()
            .map(|c| LinkState {
                port: c.via_port,
                peer: c.sub.root,
                peer_port: c.entry_port,
                direction: Direction::ChildWard,
                last_heartbeat_rx: now,
                alive: true,
            })
            .collect();
        if let Some((parent, via, entry)) = body.parent_of(id) {
            links.push(LinkState {
                port: entry,
                peer: parent,
                peer_port: via,
                direction: Direction::ParentWard,
                last_heartbeat_rx: now,
                alive: true,
            });
        }
        links.sort_by_key(|l| l.port);
        Some(NodeState {
            id,
            caps: knowledge.caps,
            role: if body.root() == id { Role::Brain } else { Role::Member },
            links,
            knowledge,
            brain_id_belief: body.root(),
            heartbeat_tx_due: now + cfg.heartbeat_period,
            reports: BTreeMap::new(),
        })
    }

    pub fn is_brain(&self) -> bool {
        self.role == Role::Brain
    }

    pub fn parent_link(&self) -> Option<&LinkState> {
        self.links.iter().find(|l| l.direction == Direction::ParentWard)
    }

    pub fn link_at(&self, port: PortId) -> Option<&LinkState> {
        self.links.iter().find(|l| l.port == port)
    }

    fn link_at_mut(&mut self, port: PortId) -> Option<&mut LinkState> {
        self.links.iter_mut().find(|l| l.port == port)
    }

    pub fn free_ports(&self) -> Vec<PortId> {
        PortId::all().filter(|p| self.link_at(*p).is_none()).collect()
    }

    fn add_link(&mut self, link: LinkState) {
        let at = self.links.partition_point(|l| l.port < link.port);
        self.links.insert(at, link);
    }

    fn envelope(&self, link: &LinkState, payload: Message, now: SimTime) -> MessageEnvelope {
        MessageEnvelope { src: self.id, dst: link.peer, port: link.peer_port, payload, send_time: now }
    }

    fn send_up(&self, payload: Message, now: SimTime, out: &mut StepOutput) {
        if let Some(link) = self.parent_link() {
            out.outbox.push(self.envelope(link, payload, now));
        }
    }

    /// Sends toward the child subtree that contains `target`.
    fn send_down(&self, target: NodeId, payload: Message, now: SimTime, out: &mut StepOutput) {
        let link = self
            .knowledge
            .child_toward(target)
            .map(|i| self.knowledge.children[i].via_port)
            .and_then(|port| self.link_at(port))
            .filter(|l| l.direction == Direction::ChildWard);
        match link {
            Some(l) => out.outbox.push(self.envelope(l, payload, now)),
            None => out.violations.push(ProtocolViolation::NoRoute(target)),
        }
    }

    /// Pure transition; see [`node_step`].
    pub fn step(mut self, event: NodeEvent, now: SimTime, cfg: &ProtocolConfig) -> (NodeState, StepOutput) {
        let mut out = StepOutput::default();
        match event {
            NodeEvent::MessageArrived(env) => self.on_message(env, now, &mut out),
            NodeEvent::PhysicalAttached { port, peer, peer_port, direction } => {
                self.on_attached(port, peer, peer_port, direction, now, &mut out)
            }
            NodeEvent::PhysicalDetached { port } => {
                if self.link_at(port).is_some() {
                    self.lose_link(port, false, now, &mut out);
                }
            }
            NodeEvent::TimerFired => self.on_timer(now, cfg, &mut out),
            NodeEvent::SensorSampled(Some(reading)) => {
                if self.is_brain() {
                    self.reports.insert(self.id, reading);
                } else {
                    self.send_up(Message::SensorReport { origin: self.id, reading }, now, &mut out);
                }
            }
            NodeEvent::SensorSampled(None) => {}
            NodeEvent::Directive(d) => self.on_directive(d, now, &mut out),
        }
        (self, out)
    }

    fn on_attached(&mut self, port: PortId, peer: NodeId, peer_port: PortId, direction: Direction, now: SimTime, out: &mut StepOutput) {
        if self.link_at(port).is_some() {
            out.violations.push(ProtocolViolation::PortBusy(port));
            return;
        }
        self.add_link(LinkState { port, peer, peer_port, direction, last_heartbeat_rx: now, alive: true });
        if direction == Direction::ParentWard {
            // We docked into another body: cede and announce ourselves once.
            let announce = build_merge_announce(&self.knowledge, port, peer_port);
            self.role = Role::Member;
            self.brain_id_belief = peer;
            self.reports.clear();
            out.actions.push(LocalAction::CedeBrain);
            self.send_up(announce, now, out);
        }
    }

    fn on_timer(&mut self, now: SimTime, cfg: &ProtocolConfig, out: &mut StepOutput) {
        if now >= self.heartbeat_tx_due {
            for link in self.links.iter().filter(|l| l.alive) {
                out.outbox.push(self.envelope(link, Message::Heartbeat { brain: self.brain_id_belief }, now));
            }
            while self.heartbeat_tx_due <= now {
                self.heartbeat_tx_due += cfg.heartbeat_period;
            }
        }
        let failed = detect_failures(self, now, cfg.failure_timeout);
        for link in &failed {
            self.lose_link(link.port, true, now, out);
        }
        out.detected.extend(failed);
    }

    /// Drops the link at `port`. A lost parent makes us a brain; a lost
    /// child is pruned and reported upward.
    fn lose_link(&mut self, port: PortId, release: bool, now: SimTime, out: &mut StepOutput) {
        let Some(idx) = self.links.iter().position(|l| l.port == port) else { return };
        let link = self.links.remove(idx);
        if release {
            out.actions.push(LocalAction::ReleasePort(port));
        }
        match link.direction {
            Direction::ParentWard => {
                self.role = Role::Brain;
                self.brain_id_belief = self.id;
                out.actions.push(LocalAction::BecomeBrain);
            }
            Direction::ChildWard => {
                let Some(ci) = self.knowledge.children.iter().position(|c| c.via_port == port) else {
                    // Docked but never announced; nothing to forget.
                    return;
                };
                let gone = self.knowledge.children.remove(ci);
                for id in gone.sub.node_ids() {
                    self.reports.remove(&id);
                }
                self.send_up(Message::SplitNotice { detached_root: gone.sub.root }, now, out);
            }
        }
    }

    fn on_message(&mut self, env: MessageEnvelope, now: SimTime, out: &mut StepOutput) {
        let Some(link) = self.link_at(env.port).copied().filter(|l| l.peer == env.src) else {
            out.violations.push(ProtocolViolation::UnknownLink { src: env.src, port: env.port });
            return;
        };
        if let Some(l) = self.link_at_mut(env.port) {
            l.last_heartbeat_rx = l.last_heartbeat_rx.max(now);
        }
        let from_parent = link.direction == Direction::ParentWard;
        let wrong = |message: &'static str| ProtocolViolation::WrongDirection { src: env.src, message, direction: link.direction };
        match env.payload {
            Message::Heartbeat { brain } => {
                if from_parent {
                    self.brain_id_belief = brain;
                }
            }
            Message::MergeAnnounce(announce) => {
                if from_parent {
                    out.violations.push(wrong("MergeAnnounce"));
                    return;
                }
                match absorb_merge(&self.knowledge, link.port, &announce) {
                    Ok(k) => {
                        self.knowledge = k;
                        if !self.is_brain() {
                            let child = self.knowledge.child_at_port(link.port).expect("just grafted");
                            let mut relayed = announce;
                            relayed.via_port_chain.push(HopRecord {
                                node: self.id,
                                via_port: link.port,
                                entry_port: child.entry_port,
                                relative_pose: child.relative_pose,
                            });
                            self.send_up(Message::MergeAnnounce(relayed), now, out);
                        }
                    }
                    Err(v) => {
                        if announce.via_port_chain.is_empty() {
                            // Refuse a merge that would close a cycle.
                            out.actions.push(LocalAction::ReleasePort(link.port));
                        }
                        out.violations.push(v);
                    }
                }
            }
            Message::SplitNotice { detached_root } => {
                if from_parent {
                    out.violations.push(wrong("SplitNotice"));
                    return;
                }
                match prune_split(&self.knowledge, detached_root) {
                    Ok(k) => {
                        let gone: Vec<NodeId> =
                            self.knowledge.find(detached_root).map(|s| s.node_ids()).unwrap_or_default();
                        for id in gone {
                            self.reports.remove(&id);
                        }
                        self.knowledge = k;
                        self.send_up(Message::SplitNotice { detached_root }, now, out);
                    }
                    Err(v) => out.violations.push(v),
                }
            }
            Message::SensorReport { origin, reading } => {
                if from_parent {
                    out.violations.push(wrong("SensorReport"));
                } else if self.is_brain() {
                    self.reports.insert(origin, reading);
                } else {
                    self.send_up(Message::SensorReport { origin, reading }, now, out);
                }
            }
            Message::ActuatorCommand { target, command } => {
                if !from_parent {
                    out.violations.push(wrong("ActuatorCommand"));
                } else if target == self.id {
                    out.actions.push(LocalAction::SetWheelCommand(command));
                } else {
                    self.send_down(target, Message::ActuatorCommand { target, command }, now, out);
                }
            }
            Message::LedCommand { target, led_mask } => {
                if !from_parent {
                    out.violations.push(wrong("LedCommand"));
                } else if target == self.id {
                    out.actions.push(LocalAction::SetLeds(led_mask));
                } else {
                    self.send_down(target, Message::LedCommand { target, led_mask }, now, out);
                }
            }
            Message::DetachOrder { split_at } => {
                if !from_parent {
                    out.violations.push(wrong("DetachOrder"));
                } else if split_at == self.id {
                    out.actions.push(LocalAction::ReleasePort(link.port));
                } else {
                    self.send_down(split_at, Message::DetachOrder { split_at }, now, out);
                }
            }
            Message::CedeOrder { new_local_root, upper, upper_pose } => {
                if !from_parent {
                    out.violations.push(wrong("CedeOrder"));
                    return;
                }
                if let Some(l) = self.link_at_mut(link.port) {
                    l.direction = Direction::ChildWard;
                }
                self.knowledge.insert_child(ChildLink {
                    via_port: link.port,
                    entry_port: link.peer_port,
                    relative_pose: upper_pose,
                    sub: upper,
                });
                if new_local_root == self.id {
                    self.role = Role::Brain;
                    self.brain_id_belief = self.id;
                    out.actions.push(LocalAction::BecomeBrain);
                } else if let Err(v) = self.cede_toward(new_local_root, now, out) {
                    out.violations.push(v);
                }
            }
        }
    }

    /// Hands rootship one hop toward `target`, which must be a strict
    /// descendant.
    fn cede_toward(&mut self, target: NodeId, now: SimTime, out: &mut StepOutput) -> Result<(), ProtocolViolation> {
        let i = self.knowledge.child_toward(target).ok_or(ProtocolViolation::UnknownNode(target))?;
        let port = self.knowledge.children[i].via_port;
        if self.link_at(port).map(|l| l.direction) != Some(Direction::ChildWard) {
            return Err(ProtocolViolation::NoRoute(target));
        }
        let down = self.knowledge.children.remove(i);
        let was_brain = self.is_brain();
        if let Some(l) = self.link_at_mut(port) {
            l.direction = Direction::ParentWard;
        }
        self.role = Role::Member;
        self.brain_id_belief = target;
        if was_brain {
            self.reports.clear();
            out.actions.push(LocalAction::CedeBrain);
        }
        let order = Message::CedeOrder {
            new_local_root: target,
            upper: self.knowledge.clone(),
            upper_pose: down.relative_pose.inverse(),
        };
        let link = *self.link_at(port).expect("link checked above");
        out.outbox.push(self.envelope(&link, order, now));
        Ok(())
    }

    fn on_directive(&mut self, d: Directive, now: SimTime, out: &mut StepOutput) {
        if !self.is_brain() {
            out.violations.push(ProtocolViolation::NotBrain);
            return;
        }
        match d {
            Directive::Actuate(cmds) => {
                for (target, command) in cmds {
                    if target == self.id {
                        out.actions.push(LocalAction::SetWheelCommand(command));
                    } else {
                        self.send_down(target, Message::ActuatorCommand { target, command }, now, out);
                    }
                }
            }
            Directive::Leds(masks) => {
                for (target, led_mask) in masks {
                    if target == self.id {
                        out.actions.push(LocalAction::SetLeds(led_mask));
                    } else {
                        self.send_down(target, Message::LedCommand { target, led_mask }, now, out);
                    }
                }
            }
            Directive::Cede(target) => {
                if target != self.id {
                    if let Err(v) = self.cede_toward(target, now, out) {
                        out.violations.push(v);
                    }
                }
            }
            Directive::Detach(split_at) => {
                if split_at == self.id || !self.knowledge.contains(split_at) {
                    out.violations.push(ProtocolViolation::UnknownNode(split_at));
                } else {
                    self.send_down(split_at, Message::DetachOrder { split_at }, now, out);
                }
            }
            Directive::Dock { port, peer, peer_port } => {
                if self.link_at(port).is_some() || self.knowledge.child_at_port(port).is_some() {
                    out.violations.push(ProtocolViolation::PortBusy(port));
                } else {
                    out.actions.push(LocalAction::GripPort { port, peer, peer_port });
                }
            }
        }
    }
}

/// One transition of a module: event in, new state plus messages and local
/// actions out. Violations are reported and the offending input dropped.
pub fn node_step(state: NodeState, event: NodeEvent, now: SimTime, cfg: &ProtocolConfig) -> (NodeState, StepOutput) {
    state.step(event, now, cfg)
}

/// The single message a ceding root sends into the body it docked with.
pub fn build_merge_announce(ceding_knowledge: &SubtreeDescription, entry_port: PortId, parent_port: PortId) -> Message {
    Message::MergeAnnounce(MergeAnnounce {
        sub: ceding_knowledge.clone(),
        attach_port: parent_port,
        entry_port,
        via_port_chain: Vec::new(),
    })
}

/// Grafts an announced subtree into `knowledge`. `via_child_port` is our
/// port the announce arrived on; the hop records, newest first, lead from
/// there down to the attachment node.
pub fn absorb_merge(
    knowledge: &SubtreeDescription,
    via_child_port: PortId,
    announce: &MergeAnnounce,
) -> Result<SubtreeDescription, ProtocolViolation> {
    let mut known = knowledge.node_ids();
    known.sort();
    if let Some(dup) = announce.sub.node_ids().into_iter().find(|id| known.binary_search(id).is_ok()) {
        return Err(ProtocolViolation::DuplicateNodeId(dup));
    }
    let mut out = knowledge.clone();
    let mut cur = &mut out;
    let mut port = via_child_port;
    for hop in announce.via_port_chain.iter().rev() {
        let link = cur
            .children
            .iter_mut()
            .find(|c| c.via_port == port)
            .ok_or(ProtocolViolation::ChainMismatch(hop.node))?;
        if link.sub.root != hop.node {
            return Err(ProtocolViolation::ChainMismatch(hop.node));
        }
        cur = &mut link.sub;
        port = hop.via_port;
    }
    if announce.via_port_chain.is_empty() && port != announce.attach_port {
        return Err(ProtocolViolation::ChainMismatch(knowledge.root));
    }
    if cur.children.iter().any(|c| c.via_port == port) {
        return Err(ProtocolViolation::PortBusy(port));
    }
    cur.insert_child(ChildLink {
        via_port: port,
        entry_port: announce.entry_port,
        relative_pose: mate_pose(port, announce.entry_port),
        sub: announce.sub.clone(),
    });
    Ok(out)
}

/// Forgets the departed subtree rooted at `detached_root`.
pub fn prune_split(knowledge: &SubtreeDescription, detached_root: NodeId) -> Result<SubtreeDescription, ProtocolViolation> {
    fn go(n: &mut SubtreeDescription, id: NodeId) -> bool {
        if let Some(i) = n.children.iter().position(|c| c.sub.root == id) {
            n.children.remove(i);
            return true;
        }
        n.children.iter_mut().any(|c| go(&mut c.sub, id))
    }
    let mut out = knowledge.clone();
    if detached_root != knowledge.root && go(&mut out, detached_root) {
        Ok(out)
    } else {
        Err(ProtocolViolation::UnknownNode(detached_root))
    }
}

/// Links silent for longer than `timeout`; they are marked not alive.
pub fn detect_failures(state: &mut NodeState, now: SimTime, timeout: SimTime) -> Vec<LinkState> {
    let mut failed = Vec::new();
    for l in state.links.iter_mut() {
        if l.alive && now.saturating_sub(l.last_heartbeat_rx) > timeout {
            l.alive = false;
            failed.push(*l);
        }
    }
    failed
}

/// Starts moving the brain role to `new_local_root`: the brain flips its
/// own edge and sends the first `CedeOrder`; each later hop does the same
/// until the order reaches its target.
pub fn initiate_cede(
    brain_state: &NodeState,
    new_local_root: NodeId,
    now: SimTime,
) -> Result<(NodeState, Vec<MessageEnvelope>), ProtocolViolation> {
    if !brain_state.is_brain() {
        return Err(ProtocolViolation::NotBrain);
    }
    if !brain_state.knowledge.contains(new_local_root) {
        return Err(ProtocolViolation::UnknownNode(new_local_root));
    }
    let mut next = brain_state.clone();
    if new_local_root == brain_state.id {
        return Ok((next, Vec::new()));
    }
    let mut out = StepOutput::default();
    next.cede_toward(new_local_root, now, &mut out)?;
    Ok((next, out.outbox))
}
