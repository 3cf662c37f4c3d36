//! Scripted choreography on top of the world: formation by template,
//! splits, merges, fault recovery, and the per-brain stimulus behavior.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::json;
use vns_core::behavior::{
    brain_decide, fuse_reports, recovery_target, recruitment_step, split_plan, BrainBehaviorState, FreeUnit, Mode,
    MorphologyTemplate,
};
use vns_core::body::{closest_leds, dock_feasible, led_masks, twist_to_module_commands, ModuleCommand, StimulusPath, Twist};
use vns_core::protocol::Directive;
use vns_core::topology::{mate_pose, MODULE_DIAMETER};
use vns_core::{normalize_angle, BodyMap, NodeId, Pose2, PortId, SimTime, SubtreeDescription, Vec2};

use crate::scenario::Action;
use crate::trace::TraceKind;
use crate::world::World;

/// Heading error above which a navigating body turns before it moves.
const TURN_FIRST: f64 = 0.3;

#[derive(Clone, Debug)]
struct BodyCtl {
    template: Option<MorphologyTemplate>,
    bstate: BrainBehaviorState,
    /// Units this controller may recruit; `None` means any unmanaged body.
    pool: Option<BTreeSet<NodeId>>,
    last_problems: usize,
    purpose: &'static str,
}

#[derive(Clone, Copy, Debug)]
struct Nav {
    goal: Pose2,
    /// `(peer, peer_port, own_port)` to grip once aligned.
    dock: Option<(NodeId, PortId, PortId)>,
}

#[derive(Clone, Debug)]
enum Seq {
    Merge { a: NodeId, b: NodeId, g: NodeId, goal: Pose2, dock: (NodeId, PortId, PortId), stage: u8 },
    Split { brain: NodeId, at: NodeId, template_a: MorphologyTemplate, template_b: MorphologyTemplate, stage: u8 },
}

#[derive(Clone, Debug)]
struct FaultGroup {
    failed: BTreeSet<NodeId>,
    members: BTreeSet<NodeId>,
    template: MorphologyTemplate,
}

#[derive(Clone, Debug, Default)]
pub struct Director {
    script: VecDeque<(SimTime, Action)>,
    templates: BTreeMap<String, MorphologyTemplate>,
    waiting: VecDeque<Action>,
    active: Option<Seq>,
    ctls: BTreeMap<NodeId, BodyCtl>,
    navs: BTreeMap<NodeId, Nav>,
    faults: Vec<FaultGroup>,
    sent_cmds: BTreeMap<NodeId, BTreeMap<NodeId, ModuleCommand>>,
    sent_leds: BTreeMap<NodeId, BTreeMap<NodeId, u32>>,
}

fn milestone(world: &mut World, node: Option<NodeId>, data: serde_json::Value) {
    world.trace_push(node, TraceKind::Milestone, data);
}

impl Director {
    pub(crate) fn load(&mut self, script: Vec<(SimTime, Action)>, templates: BTreeMap<String, MorphologyTemplate>) {
        self.script = script.into();
        self.templates = templates;
    }

    pub(crate) fn next_action_time(&self) -> Option<SimTime> {
        self.script.front().map(|(t, _)| *t)
    }

    /// Brain ids of the controlled bodies with their behavior modes.
    pub fn modes(&self) -> BTreeMap<NodeId, Mode> {
        self.ctls.iter().map(|(b, c)| (*b, c.bstate.mode)).collect()
    }

    /// Everything the script started that has not finished.
    pub fn pending_work(&self) -> Vec<String> {
        let mut out: Vec<String> = self.script.iter().map(|(t, a)| format!("action at {t} not run: {}", a.name())).collect();
        out.extend(self.waiting.iter().map(|a| format!("{} still waiting", a.name())));
        if let Some(s) = &self.active {
            out.push(match s {
                Seq::Merge { a, b, .. } => format!("merge of {a} into {b} unfinished"),
                Seq::Split { brain, .. } => format!("split of {brain} unfinished"),
            });
        }
        for (b, c) in &self.ctls {
            if c.bstate.is_assembling() {
                out.push(format!("{} led by {b} unfinished", c.purpose));
            }
        }
        out.extend(self.navs.keys().map(|n| format!("{n} still navigating")));
        out.extend(self.faults.iter().map(|f| format!("recovery after {:?} not started", f.failed)));
        out
    }

    pub(crate) fn run_next_action(&mut self, world: &mut World) {
        let Some((_, action)) = self.script.pop_front() else { return };
        match action {
            Action::StimulusPath { waypoints } => {
                let wp = waypoints.iter().map(|w| (SimTime::from_secs(w[0]), Vec2::new(w[1], w[2]))).collect();
                world.set_stimulus(Some(StimulusPath { waypoints: wp }));
                milestone(world, None, json!({"event": "stimulus_path", "waypoints": waypoints.len()}));
            }
            Action::InjectFault { node } => self.inject_fault(world, node),
            other => self.waiting.push_back(other),
        }
    }

    fn inject_fault(&mut self, world: &mut World, node: NodeId) {
        let Some(root) = world.physics().body_of(node) else { return };
        let tree = world.body_map(node).expect("body").tree.clone();
        if world.inject_fault(node).is_err() {
            return;
        }
        let members: BTreeSet<NodeId> = tree.node_ids().into_iter().collect();
        self.navs.retain(|m, _| !members.contains(m));
        if let Some(g) = self.faults.iter_mut().find(|g| g.members.contains(&node)) {
            g.failed.insert(node);
            return;
        }
        let template = self
            .ctls
            .remove(&root)
            .and_then(|c| c.template)
            .unwrap_or_else(|| MorphologyTemplate::from_tree("recovered", &tree));
        self.faults.push(FaultGroup { failed: [node].into(), members, template });
    }

    /// Sensor-tick hook: advances every controller by one step.
    pub(crate) fn tick(&mut self, world: &mut World) {
        let live_brains: BTreeSet<NodeId> =
            world.nodes().iter().filter(|(id, s)| s.is_brain() && world.is_alive(**id)).map(|(id, _)| *id).collect();
        self.sent_cmds.retain(|b, _| live_brains.contains(b));
        self.sent_leds.retain(|b, _| live_brains.contains(b));
        self.navs.retain(|m, _| live_brains.contains(m));
        self.recover(world);
        self.sequence(world);
        self.recruit(world);
        self.navigate(world);
        self.behave(world);
    }

    fn recover(&mut self, world: &mut World) {
        if self.faults.is_empty() || !world.is_quiescent() {
            return;
        }
        for g in std::mem::take(&mut self.faults) {
            let roots: BTreeSet<NodeId> = g
                .members
                .iter()
                .filter(|m| world.is_alive(**m))
                .filter_map(|m| world.physics().body_of(*m))
                .collect();
            let survivors: Vec<SubtreeDescription> = roots.iter().map(|r| world.node(*r).expect("live").knowledge.clone()).collect();
            let (target, recruiter) = recovery_target(&g.template, &g.failed, &survivors);
            let failed: Vec<u32> = g.failed.iter().map(|f| f.0).collect();
            milestone(
                world,
                recruiter,
                json!({"event": "recovery_start", "failed": failed, "fragments": roots.len(), "slots": target.len()}),
            );
            let Some(r) = recruiter else { continue };
            let pool: BTreeSet<NodeId> = roots.iter().copied().filter(|x| *x != r).collect();
            self.ctls.insert(
                r,
                BodyCtl {
                    template: Some(target.clone()),
                    bstate: BrainBehaviorState::recovering(target),
                    pool: Some(pool),
                    last_problems: 0,
                    purpose: "recovery",
                },
            );
        }
    }

    fn idle_world(&self, world: &World) -> bool {
        self.navs.is_empty()
            && self.faults.is_empty()
            && self.active.is_none()
            && self.ctls.values().all(|c| !c.bstate.is_assembling())
            && world.is_quiescent()
    }

    fn sequence(&mut self, world: &mut World) {
        self.advance_active(world);
        while let Some(next) = self.waiting.front() {
            match next {
                Action::Form { template, recruiter } => {
                    if self.active.is_some() {
                        return;
                    }
                    let (template, recruiter) = (template.clone(), *recruiter);
                    self.waiting.pop_front();
                    self.start_form(world, &template, recruiter);
                }
                _ => {
                    if !self.idle_world(world) {
                        return;
                    }
                    let action = self.waiting.pop_front().expect("peeked");
                    self.start(world, action);
                    if self.active.is_some() {
                        return;
                    }
                }
            }
        }
    }

    fn brain_of(world: &World, id: NodeId) -> Option<NodeId> {
        world.physics().body_of(id).filter(|r| world.is_alive(*r))
    }

    fn start_form(&mut self, world: &mut World, name: &str, recruiter: NodeId) {
        let Some(brain) = Self::brain_of(world, recruiter) else {
            milestone(world, Some(recruiter), json!({"event": "form_skipped", "template": name}));
            return;
        };
        let template = self.templates[name].clone();
        milestone(world, Some(brain), json!({"event": "form_start", "template": name}));
        self.ctls.insert(
            brain,
            BodyCtl {
                template: Some(template.clone()),
                bstate: BrainBehaviorState::forming(template),
                pool: None,
                last_problems: 0,
                purpose: "formation",
            },
        );
    }

    fn start(&mut self, world: &mut World, action: Action) {
        match action {
            Action::Split { template_a, template_b } => {
                let (ta, tb) = (self.templates[&template_a].clone(), self.templates[&template_b].clone());
                let brains: Vec<NodeId> = world.nodes().iter().filter(|(i, s)| s.is_brain() && world.is_alive(**i)).map(|(i, _)| *i).collect();
                for brain in brains {
                    let k = &world.node(brain).expect("brain").knowledge;
                    if let Ok(at) = split_plan(k, &ta, &tb) {
                        milestone(world, Some(brain), json!({"event": "split_start", "at": at.0, "a": template_a, "b": template_b}));
                        world.queue_directive(brain, Directive::Detach(at));
                        self.active = Some(Seq::Split { brain, at, template_a: ta, template_b: tb, stage: 0 });
                        return;
                    }
                }
                milestone(world, None, json!({"event": "split_skipped", "reason": "no body fits", "a": template_a, "b": template_b}));
            }
            Action::MergeBodies { a, b } => {
                let (Some(ra), Some(rb)) = (Self::brain_of(world, a), Self::brain_of(world, b)) else {
                    milestone(world, None, json!({"event": "merge_skipped", "a": a.0, "b": b.0}));
                    return;
                };
                if ra == rb {
                    milestone(world, None, json!({"event": "merge_skipped", "a": a.0, "b": b.0}));
                    return;
                }
                let Some((g, goal, dock)) = plan_merge(world, ra, rb) else {
                    milestone(world, None, json!({"event": "merge_skipped", "reason": "no free port pair", "a": a.0, "b": b.0}));
                    return;
                };
                milestone(
                    world,
                    Some(rb),
                    json!({"event": "merge_start", "a": ra.0, "b": rb.0, "via": g.0, "onto": dock.0 .0, "port": dock.1 .0}),
                );
                self.ctls.remove(&ra);
                if g != ra {
                    world.queue_directive(ra, Directive::Cede(g));
                }
                self.active = Some(Seq::Merge { a: ra, b: rb, g, goal, dock, stage: 0 });
            }
            Action::Form { .. } | Action::InjectFault { .. } | Action::StimulusPath { .. } => unreachable!("handled elsewhere"),
        }
    }

    fn advance_active(&mut self, world: &mut World) {
        let Some(seq) = self.active.clone() else { return };
        let q = world.is_quiescent();
        match seq {
            Seq::Merge { a, b, g, goal, dock, stage } => {
                if !world.is_alive(g) || !world.is_alive(b) {
                    milestone(world, None, json!({"event": "merge_aborted", "a": a.0, "b": b.0}));
                    self.active = None;
                    return;
                }
                let next = match stage {
                    0 if q && world.node(g).is_some_and(|s| s.is_brain()) => {
                        self.navs.insert(g, Nav { goal, dock: Some(dock) });
                        1
                    }
                    1 if !self.navs.contains_key(&g) => 2,
                    2 if q && world.node(b).is_some_and(|s| s.knowledge.contains(g)) => {
                        let size = world.node(b).expect("b").knowledge.len();
                        milestone(world, Some(b), json!({"event": "merge_complete", "a": a.0, "b": b.0, "size": size}));
                        if let Some(c) = self.ctls.get_mut(&b) {
                            c.template = Some(MorphologyTemplate::from_tree("merged", &world.node(b).expect("b").knowledge));
                        }
                        self.active = None;
                        return;
                    }
                    s => s,
                };
                if let Some(Seq::Merge { stage, .. }) = self.active.as_mut() {
                    *stage = next;
                }
            }
            Seq::Split { brain, at, template_a, template_b, stage } => {
                let next = match stage {
                    0 if q && world.node(at).is_some_and(|s| s.is_brain()) => {
                        let away = world.world_pose(at).expect("at").position() - centroid_world(world, brain);
                        let here = world.world_pose(at).expect("at");
                        let shift = away.normalized() * world.params().separation;
                        self.navs.insert(at, Nav { goal: Pose2::new(here.x + shift.x, here.y + shift.y, here.theta), dock: None });
                        if let Some(c) = self.ctls.get_mut(&brain) {
                            c.template = Some(template_a.clone());
                        }
                        self.ctls.insert(
                            at,
                            BodyCtl {
                                template: Some(template_b.clone()),
                                bstate: BrainBehaviorState::idle(),
                                pool: None,
                                last_problems: 0,
                                purpose: "split",
                            },
                        );
                        1
                    }
                    1 if !self.navs.contains_key(&at) => {
                        let sizes = (world.node(brain).map(|s| s.knowledge.len()), world.node(at).map(|s| s.knowledge.len()));
                        milestone(world, Some(brain), json!({"event": "split_complete", "a": brain.0, "b": at.0, "sizes": [sizes.0, sizes.1]}));
                        self.active = None;
                        return;
                    }
                    s => s,
                };
                if let Some(Seq::Split { stage, .. }) = self.active.as_mut() {
                    *stage = next;
                }
            }
        }
    }

    fn recruit(&mut self, world: &mut World) {
        let brains: Vec<NodeId> = self.ctls.keys().copied().collect();
        for brain in brains {
            if !self.ctls[&brain].bstate.is_assembling() {
                continue;
            }
            if !world.is_alive(brain) || !world.node(brain).is_some_and(|s| s.is_brain()) {
                continue;
            }
            let claimed: BTreeSet<NodeId> =
                self.ctls.iter().filter(|(b, _)| **b != brain).flat_map(|(_, c)| c.bstate.open_ports.iter().map(|r| r.recruit)).collect();
            let ctl = &self.ctls[&brain];
            let pool: Vec<FreeUnit> = world
                .nodes()
                .iter()
                .filter(|(id, s)| s.is_brain() && world.is_alive(**id) && **id != brain)
                .filter(|(id, _)| match &ctl.pool {
                    Some(p) => p.contains(id),
                    None => !self.ctls.contains_key(id),
                })
                .filter(|(id, _)| !claimed.contains(id) && !self.navs.contains_key(id))
                .filter(|(id, _)| world.physics().body_of(**id) == Some(**id))
                .map(|(id, s)| FreeUnit { tree: s.knowledge.clone(), pose: world.world_pose(*id).expect("live") })
                .collect();
            let knowledge = world.node(brain).expect("brain").knowledge.clone();
            let poses = world.physics().world_poses();
            let step = recruitment_step(ctl.bstate.clone(), &knowledge, &pool, &poses);
            for r in &step.assignments {
                milestone(
                    world,
                    Some(brain),
                    json!({"event": "recruit", "recruit": r.recruit.0, "parent": r.parent.0, "port": r.port.0, "slot": r.slot}),
                );
                self.navs.insert(r.recruit, Nav { goal: r.goal, dock: Some((r.parent, r.port, r.entry_port)) });
            }
            let ctl = self.ctls.get_mut(&brain).expect("ctl");
            let was = ctl.bstate.mode;
            if step.problems.len() != ctl.last_problems {
                ctl.last_problems = step.problems.len();
                let msgs: Vec<String> = step.problems.iter().map(|p| p.to_string()).collect();
                milestone(world, Some(brain), json!({"event": "recruit_problems", "problems": msgs}));
            }
            let ctl = self.ctls.get_mut(&brain).expect("ctl");
            ctl.bstate = step.state;
            if !ctl.bstate.is_assembling() {
                let event = if was == Mode::Recovering { "recovered" } else { "form_complete" };
                milestone(world, Some(brain), json!({"event": event, "size": knowledge.len()}));
            }
        }
    }

    fn navigate(&mut self, world: &mut World) {
        let movers: Vec<(NodeId, Nav)> = self.navs.iter().map(|(m, n)| (*m, *n)).collect();
        let p = world.params().clone();
        for (m, nav) in movers {
            let pose = world.world_pose(m).expect("live mover");
            if let Some((peer, peer_port, port)) = nav.dock {
                if !world.is_alive(peer) {
                    self.navs.remove(&m);
                    continue;
                }
                let target = world.world_pose(peer).expect("peer").compose(&mate_pose(peer_port, port));
                if dock_feasible(&pose, &target, p.eps_dock, p.eps_angle) {
                    self.navs.remove(&m);
                    self.sent_cmds.remove(&m);
                    world.queue_directive(m, Directive::Dock { port, peer, peer_port });
                    continue;
                }
                self.drive(world, m, pose, target, &p);
            } else if pose.position().distance(nav.goal.position()) <= p.eps_dock {
                self.navs.remove(&m);
                self.actuate(world, m, Twist::ZERO);
            } else {
                self.drive(world, m, pose, nav.goal, &p);
            }
        }
    }

    fn drive(&mut self, world: &mut World, m: NodeId, pose: Pose2, goal: Pose2, p: &crate::params::Params) {
        let dtheta = normalize_angle(goal.theta - pose.theta);
        let mut v = (goal.position() - pose.position()) * p.nav_gain;
        if v.norm() > p.v_max {
            v = v.normalized() * p.v_max;
        }
        if dtheta.abs() > TURN_FIRST {
            v = Vec2::ZERO;
        }
        let omega = (dtheta * p.nav_gain).clamp(-p.omega_max, p.omega_max);
        let local = v.rotate(-pose.theta);
        self.actuate(world, m, Twist { vx: local.x, vy: local.y, omega });
    }

    /// Sends per-module commands for a brain-frame twist, skipping modules
    /// whose command is unchanged.
    fn actuate(&mut self, world: &mut World, brain: NodeId, twist: Twist) {
        let Some(state) = world.node(brain) else { return };
        let body = BodyMap::from_tree(state.knowledge.clone());
        let poses = body.world_poses(Pose2::IDENTITY);
        let cmds = twist_to_module_commands(&body, &poses, twist, &world.params().limits());
        let sent = self.sent_cmds.entry(brain).or_default();
        let changed: Vec<(NodeId, ModuleCommand)> =
            cmds.into_iter().filter(|(id, c)| sent.get(id).copied().unwrap_or(ModuleCommand::STOP) != *c).collect();
        if changed.is_empty() {
            return;
        }
        sent.extend(changed.iter().copied());
        world.queue_directive(brain, Directive::Actuate(changed));
    }

    fn set_leds(&mut self, world: &mut World, brain: NodeId, masks: BTreeMap<NodeId, u32>) {
        let sent = self.sent_leds.entry(brain).or_default();
        let changed: Vec<(NodeId, u32)> =
            masks.into_iter().filter(|(id, m)| sent.get(id).copied().unwrap_or(0) != *m).collect();
        if changed.is_empty() {
            return;
        }
        sent.extend(changed.iter().copied());
        world.queue_directive(brain, Directive::Leds(changed));
    }

    fn behave(&mut self, world: &mut World) {
        let now = world.clock();
        let params = world.params().behavior();
        let ring = world.params().led_ring();
        let brains: Vec<NodeId> = self.ctls.keys().copied().collect();
        for brain in brains {
            let ctl = &self.ctls[&brain];
            if ctl.bstate.is_assembling() || self.navs.contains_key(&brain) || self.busy(brain) {
                continue;
            }
            let Some(state) = world.node(brain).filter(|s| s.is_brain() && world.is_alive(brain)) else { continue };
            let knowledge = state.knowledge.clone();
            let reports: Vec<_> = state
                .reports
                .iter()
                .filter(|(_, r)| now.saturating_sub(r.sensed_at) <= params.stale)
                .map(|(o, r)| (*o, *r))
                .collect();
            let (fused, _) = fuse_reports(&reports, &knowledge);
            let body = BodyMap::from_tree(knowledge);
            let poses = body.world_poses(Pose2::IDENTITY);
            let centroid = poses.values().fold(Vec2::ZERO, |a, p| a + p.position()) * (1.0 / poses.len() as f64);
            let before = ctl.bstate.mode;
            let d = brain_decide(ctl.bstate.clone(), fused, now, centroid, &params);
            if d.state.mode != before {
                world.trace_push(Some(brain), TraceKind::Mode, json!({"from": format!("{before:?}"), "to": format!("{:?}", d.state.mode)}));
            }
            let mut masks: BTreeMap<NodeId, u32> = poses.keys().map(|id| (*id, 0)).collect();
            if let (Some(k), Some(est)) = (d.leds, d.state.stimulus_estimate) {
                masks.extend(led_masks(&closest_leds(&body, &poses, &ring, est.position, k)));
            }
            let twist = d.twist;
            self.ctls.get_mut(&brain).expect("ctl").bstate = d.state;
            self.actuate(world, brain, twist);
            self.set_leds(world, brain, masks);
        }
    }

    fn busy(&self, brain: NodeId) -> bool {
        match &self.active {
            Some(Seq::Merge { a, b, g, .. }) => [*a, *b, *g].contains(&brain),
            Some(Seq::Split { brain: x, at, .. }) => [*x, *at].contains(&brain),
            None => false,
        }
    }
}

fn centroid_world(world: &World, brain: NodeId) -> Vec2 {
    let map = world.body_map(brain).expect("body");
    let ids = map.tree.node_ids();
    ids.iter().fold(Vec2::ZERO, |a, id| a + world.world_pose(*id).expect("pose").position()) * (1.0 / ids.len() as f64)
}

/// Chooses the module `g` of body `a` to dock, the goal pose of `g` and the
/// `(peer, peer_port, own_port)` triple: the closest pairing of free ports
/// whose final placement keeps every module of `a` clear of `b`.
/// Attachment node, its port, and the entry port of the mover.
type Mate = (NodeId, PortId, PortId);

fn plan_merge(world: &World, a: NodeId, b: NodeId) -> Option<(NodeId, Pose2, Mate)> {
    let map_a = world.body_map(a)?.clone();
    let map_b = world.body_map(b)?.clone();
    let poses_b: Vec<Vec2> = map_b.tree.node_ids().iter().map(|n| world.world_pose(*n).expect("b pose").position()).collect();
    let mut best: Option<(f64, NodeId, Pose2, Mate)> = None;
    let mut ga = map_a.tree.node_ids();
    ga.sort();
    let mut tb = map_b.tree.node_ids();
    tb.sort();
    for g in ga {
        let rerooted = map_a.reroot(g).ok()?;
        let local = rerooted.world_poses(Pose2::IDENTITY);
        let g_pose = world.world_pose(g)?;
        for q in map_a.free_ports(g)? {
            for &t in &tb {
                let t_pose = world.world_pose(t)?;
                for p in map_b.free_ports(t)? {
                    let goal = t_pose.compose(&mate_pose(p, q));
                    let clear = local.iter().all(|(_, lp)| {
                        let wp = goal.transform_point(lp.position());
                        poses_b.iter().all(|bp| wp.distance(*bp) >= MODULE_DIAMETER - 1e-6)
                    });
                    if !clear {
                        continue;
                    }
                    let cost = g_pose.position().distance(goal.position()) + 0.1 * normalize_angle(goal.theta - g_pose.theta).abs();
                    if best.as_ref().is_none_or(|(c, ..)| cost < *c) {
                        best = Some((cost, g, goal, (t, p, q)));
                    }
                }
            }
        }
    }
    best.map(|(_, g, goal, dock)| (g, goal, dock))
}
