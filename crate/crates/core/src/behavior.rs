//! Brain-side controllers: sensor fusion, the point-and-retreat state
//! machine, template-driven recruitment, split planning and recovery.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::body::{StimulusReading, Twist, V_MAX};
use crate::geometry::{Pose2, Vec2};
use crate::time::SimTime;
use crate::topology::{mate_pose, BodyMap, Capabilities, ChildLink, NodeId, PortId, SubtreeDescription};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BehaviorParams {
    pub r_point: f64,
    pub r_retreat: f64,
    /// Hysteresis band on both thresholds.
    pub h: f64,
    /// Distance over which retreat speed ramps up.
    pub h_ramp: f64,
    pub v_max: f64,
    pub k_leds: usize,
    pub stale: SimTime,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        BehaviorParams {
            r_point: 1.5,
            r_retreat: 0.8,
            h: 0.1,
            h_ramp: 0.1,
            v_max: V_MAX,
            k_leds: 3,
            stale: SimTime::from_micros(500_000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum BehaviorError {
    #[error("report from {0}, which is not part of the body")]
    UnknownOrigin(NodeId),
    #[error("slot {slot} cannot be filled by any free robot")]
    InsufficientRobots { slot: usize },
    #[error("body does not fit the template")]
    TemplateMismatch,
    #[error("no single cut realizes both templates")]
    NoValidSplit,
    #[error("invalid template: {0}")]
    InvalidTemplate(&'static str),
}

/// What a slot demands of the robot filling it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CapabilityReq {
    pub wheels: bool,
    pub min_leds: u32,
    pub sensor: bool,
    pub gripper: bool,
}

impl CapabilityReq {
    pub fn satisfied_by(&self, caps: &Capabilities) -> bool {
        (!self.wheels || caps.has_wheels)
            && caps.led_count >= self.min_leds
            && (!self.sensor || caps.has_stimulus_sensor)
            && (!self.gripper || caps.has_gripper)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TemplateSlot {
    /// Index of the parent slot, always lower than this slot's own index.
    /// `None` only for slot 0.
    pub parent: Option<usize>,
    pub via_port: PortId,
    pub entry_port: PortId,
    #[cfg_attr(feature = "serde", serde(default))]
    pub requires: CapabilityReq,
}

/// A body shape with capability requirements in place of node ids.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MorphologyTemplate {
    pub name: String,
    pub slots: Vec<TemplateSlot>,
}

impl MorphologyTemplate {
    fn root_slot() -> TemplateSlot {
        TemplateSlot { parent: None, via_port: PortId(0), entry_port: PortId(0), requires: CapabilityReq::default() }
    }

    /// Straight line, each slot docked at its parent's port 0 with port 4.
    pub fn chain(name: &str, len: usize) -> Self {
        let mut slots = Vec::with_capacity(len);
        if len > 0 {
            slots.push(Self::root_slot());
        }
        for i in 1..len {
            slots.push(TemplateSlot { parent: Some(i - 1), via_port: PortId(0), entry_port: PortId(4), requires: CapabilityReq::default() });
        }
        MorphologyTemplate { name: name.into(), slots }
    }

    /// A hub with up to eight leaves on successive ports.
    pub fn star(name: &str, leaves: usize) -> Self {
        let mut slots = alloc::vec![Self::root_slot()];
        for i in 0..leaves.min(8) {
            let step = if leaves <= 4 { 2 } else { 1 };
            slots.push(TemplateSlot {
                parent: Some(0),
                via_port: PortId((i * step) as u8),
                entry_port: PortId(4),
                requires: CapabilityReq::default(),
            });
        }
        MorphologyTemplate { name: name.into(), slots }
    }

    /// The shape of an existing tree, in pre-order, with no requirements.
    pub fn from_tree(name: &str, tree: &SubtreeDescription) -> Self {
        fn go(n: &SubtreeDescription, parent: Option<(usize, PortId, PortId)>, out: &mut Vec<TemplateSlot>) {
            let me = out.len();
            out.push(match parent {
                None => MorphologyTemplate::root_slot(),
                Some((p, via, entry)) => TemplateSlot { parent: Some(p), via_port: via, entry_port: entry, requires: CapabilityReq::default() },
            });
            for c in &n.children {
                go(&c.sub, Some((me, c.via_port, c.entry_port)), out);
            }
        }
        let mut slots = Vec::new();
        go(tree, None, &mut slots);
        MorphologyTemplate { name: name.into(), slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn children_of(&self, slot: usize) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| self.slots[i].parent == Some(slot)).collect()
    }

    pub fn depth(&self, slot: usize) -> usize {
        let mut d = 0;
        let mut cur = slot;
        while let Some(p) = self.slots[cur].parent {
            d += 1;
            cur = p;
        }
        d
    }

    pub fn subtree_size(&self, slot: usize) -> usize {
        1 + self.children_of(slot).into_iter().map(|c| self.subtree_size(c)).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), BehaviorError> {
        if self.slots.is_empty() {
            return Err(BehaviorError::InvalidTemplate("no slots"));
        }
        let mut used: Vec<BTreeSet<PortId>> = alloc::vec![BTreeSet::new(); self.slots.len()];
        for (i, s) in self.slots.iter().enumerate() {
            match (i, s.parent) {
                (0, None) => {}
                (0, Some(_)) | (_, None) => return Err(BehaviorError::InvalidTemplate("slot 0 and only slot 0 is the root")),
                (_, Some(p)) if p >= i => return Err(BehaviorError::InvalidTemplate("parent must precede child")),
                (_, Some(p)) => {
                    if !s.via_port.is_valid() || !s.entry_port.is_valid() {
                        return Err(BehaviorError::InvalidTemplate("port out of range"));
                    }
                    if !used[p].insert(s.via_port) || !used[i].insert(s.entry_port) {
                        return Err(BehaviorError::InvalidTemplate("port used twice"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Concrete tree for a full assignment `ids[slot]`.
    pub fn instantiate(&self, ids: &[NodeId], caps: impl Fn(NodeId) -> Capabilities) -> SubtreeDescription {
        fn go(t: &MorphologyTemplate, slot: usize, ids: &[NodeId], caps: &dyn Fn(NodeId) -> Capabilities) -> SubtreeDescription {
            let mut n = SubtreeDescription::leaf(ids[slot], caps(ids[slot]));
            for c in t.children_of(slot) {
                let s = &t.slots[c];
                n.insert_child(ChildLink::mated(s.via_port, s.entry_port, go(t, c, ids, caps)));
            }
            n
        }
        go(self, 0, ids, &caps)
    }

    /// Whether `tree` has exactly this shape, ignoring port numbers.
    pub fn matches(&self, tree: &SubtreeDescription) -> bool {
        let mut scratch = Vec::new();
        !self.is_empty() && map_into(tree, self, 0, true, &mut scratch)
    }

    /// Maps `tree` onto the slots under `slot` (ports ignored, capabilities
    /// respected), leaving slots unfilled if `tree` is smaller.
    pub fn embed(&self, tree: &SubtreeDescription, slot: usize) -> Option<BTreeMap<NodeId, usize>> {
        let mut out = Vec::new();
        map_into(tree, self, slot, false, &mut out).then(|| out.into_iter().collect())
    }
}

fn map_into(tree: &SubtreeDescription, t: &MorphologyTemplate, slot: usize, exact: bool, out: &mut Vec<(NodeId, usize)>) -> bool {
    if !t.slots[slot].requires.satisfied_by(&tree.caps) {
        return false;
    }
    let kids = t.children_of(slot);
    if tree.children.len() > kids.len() || (exact && tree.children.len() != kids.len()) {
        return false;
    }
    let mark = out.len();
    out.push((tree.root, slot));
    let mut taken = alloc::vec![false; kids.len()];
    if assign_children(&tree.children, 0, &kids, &mut taken, t, exact, out) {
        true
    } else {
        out.truncate(mark);
        false
    }
}

fn assign_children(
    children: &[ChildLink],
    i: usize,
    kids: &[usize],
    taken: &mut [bool],
    t: &MorphologyTemplate,
    exact: bool,
    out: &mut Vec<(NodeId, usize)>,
) -> bool {
    if i == children.len() {
        return true;
    }
    for k in 0..kids.len() {
        if taken[k] {
            continue;
        }
        let mark = out.len();
        if map_into(&children[i].sub, t, kids[k], exact, out) {
            taken[k] = true;
            if assign_children(children, i + 1, kids, taken, t, exact, out) {
                return true;
            }
            taken[k] = false;
        }
        out.truncate(mark);
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Mode {
    Forming,
    Idle,
    Pointing,
    Retreating,
    Recovering,
}

/// Fused stimulus position in the brain frame.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StimulusEstimate {
    pub position: Vec2,
    pub sensed_at: SimTime,
    pub origin: NodeId,
}

/// A docking assignment handed to a free robot or fragment root.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Recruitment {
    pub recruit: NodeId,
    pub parent: NodeId,
    pub port: PortId,
    pub entry_port: PortId,
    /// World pose the recruit's root must reach.
    pub goal: Pose2,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrainBehaviorState {
    pub mode: Mode,
    pub stimulus_estimate: Option<StimulusEstimate>,
    /// Ports with a recruit on its way.
    pub open_ports: Vec<Recruitment>,
    pub pending_template: Option<MorphologyTemplate>,
}

impl BrainBehaviorState {
    pub fn idle() -> Self {
        BrainBehaviorState { mode: Mode::Idle, stimulus_estimate: None, open_ports: Vec::new(), pending_template: None }
    }

    pub fn forming(template: MorphologyTemplate) -> Self {
        BrainBehaviorState { mode: Mode::Forming, pending_template: Some(template), ..Self::idle() }
    }

    pub fn recovering(template: MorphologyTemplate) -> Self {
        BrainBehaviorState { mode: Mode::Recovering, pending_template: Some(template), ..Self::idle() }
    }

    pub fn is_assembling(&self) -> bool {
        matches!(self.mode, Mode::Forming | Mode::Recovering)
    }
}

/// Brings every reading into the brain frame and keeps the nearest one.
/// Readings from modules outside `knowledge` are returned as errors and
/// otherwise ignored.
pub fn fuse_reports(
    reports: &[(NodeId, StimulusReading)],
    knowledge: &SubtreeDescription,
) -> (Option<StimulusEstimate>, Vec<BehaviorError>) {
    let poses = BodyMap::from_tree(knowledge.clone()).world_poses(Pose2::IDENTITY);
    let mut errors = Vec::new();
    let mut best: Option<(f64, StimulusEstimate)> = None;
    for (origin, r) in reports {
        let Some(pose) = poses.get(origin) else {
            errors.push(BehaviorError::UnknownOrigin(*origin));
            continue;
        };
        let est = StimulusEstimate { position: pose.transform_point(r.local_position()), sensed_at: r.sensed_at, origin: *origin };
        let better = match &best {
            None => true,
            Some((d, e)) => r.distance < *d || (r.distance == *d && *origin < e.origin),
        };
        if better {
            best = Some((r.distance, est));
        }
    }
    (best.map(|(_, e)| e), errors)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub state: BrainBehaviorState,
    pub twist: Twist,
    /// Number of closest LEDs to light, if any.
    pub leds: Option<usize>,
}

/// One tick of the point-and-retreat controller. Distances are taken from
/// `centroid`, the body centroid in the brain frame.
pub fn brain_decide(
    mut bstate: BrainBehaviorState,
    fused: Option<StimulusEstimate>,
    now: SimTime,
    centroid: Vec2,
    p: &BehaviorParams,
) -> Decision {
    if let Some(f) = fused {
        bstate.stimulus_estimate = Some(f);
    }
    if bstate.is_assembling() {
        return Decision { state: bstate, twist: Twist::ZERO, leds: None };
    }
    let fresh = bstate.stimulus_estimate.filter(|e| now.saturating_sub(e.sensed_at) <= p.stale);
    let Some(est) = fresh else {
        bstate.mode = Mode::Idle;
        return Decision { state: bstate, twist: Twist::ZERO, leds: None };
    };
    let offset = est.position - centroid;
    let d = offset.norm();
    let mut mode = bstate.mode;
    if mode == Mode::Idle && d <= p.r_point {
        mode = Mode::Pointing;
    }
    if mode == Mode::Retreating && d >= p.r_retreat + p.h {
        mode = Mode::Pointing;
    }
    if mode == Mode::Pointing {
        if d <= p.r_retreat {
            mode = Mode::Retreating;
        } else if d > p.r_point + p.h {
            mode = Mode::Idle;
        }
    }
    bstate.mode = mode;
    match mode {
        Mode::Retreating => {
            let speed = p.v_max * ((p.r_retreat + p.h - d) / p.h_ramp).clamp(0.0, 1.0);
            let v = -offset.normalized() * speed;
            Decision { state: bstate, twist: Twist { vx: v.x, vy: v.y, omega: 0.0 }, leds: Some(p.k_leds) }
        }
        Mode::Pointing => Decision { state: bstate, twist: Twist::ZERO, leds: Some(p.k_leds) },
        _ => Decision { state: bstate, twist: Twist::ZERO, leds: None },
    }
}

/// A free robot or detached fragment that may be recruited, with its
/// root's world pose.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeUnit {
    pub tree: SubtreeDescription,
    pub pose: Pose2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecruitmentStep {
    pub state: BrainBehaviorState,
    /// New assignments only; earlier ones stay in `state.open_ports`.
    pub assignments: Vec<Recruitment>,
    pub problems: Vec<BehaviorError>,
}

/// Advertises every open template slot whose parent is already in the body
/// and assigns it the nearest unit that fits, ties to the lower id. A slot
/// with a recruit already on its way is left alone. Once the body fills
/// the template the mode drops to `Idle`.
pub fn recruitment_step(
    mut bstate: BrainBehaviorState,
    knowledge: &SubtreeDescription,
    free_pool: &[FreeUnit],
    poses: &BTreeMap<NodeId, Pose2>,
) -> RecruitmentStep {
    let mut problems = Vec::new();
    let Some(template) = bstate.pending_template.clone().filter(|_| bstate.is_assembling()) else {
        return RecruitmentStep { state: bstate, assignments: Vec::new(), problems };
    };
    let Some(filled) = template.embed(knowledge, 0) else {
        problems.push(BehaviorError::TemplateMismatch);
        return RecruitmentStep { state: bstate, assignments: Vec::new(), problems };
    };
    bstate.open_ports.retain(|r| !knowledge.contains(r.recruit));
    if filled.len() == template.len() {
        bstate.mode = Mode::Idle;
        bstate.pending_template = None;
        bstate.open_ports.clear();
        return RecruitmentStep { state: bstate, assignments: Vec::new(), problems };
    }
    let body = BodyMap::from_tree(knowledge.clone());
    let slot_owner: BTreeMap<usize, NodeId> = filled.iter().map(|(&id, &s)| (s, id)).collect();
    let mut assignments = Vec::new();
    for slot in 1..template.len() {
        if slot_owner.contains_key(&slot) || bstate.open_ports.iter().any(|r| r.slot == slot) {
            continue;
        }
        let ps = template.slots[slot].parent.expect("non-root slot");
        let Some(&parent) = slot_owner.get(&ps) else { continue };
        let Some(parent_pose) = poses.get(&parent) else { continue };
        let mut busy: BTreeSet<PortId> = body.used_ports(parent).unwrap_or_default();
        busy.extend(bstate.open_ports.iter().filter(|r| r.parent == parent).map(|r| r.port));
        let want = template.slots[slot].via_port;
        let Some(port) = Some(want).filter(|p| !busy.contains(p)).or_else(|| PortId::all().find(|p| !busy.contains(p))) else {
            problems.push(BehaviorError::InsufficientRobots { slot });
            continue;
        };
        let taken: BTreeSet<NodeId> = bstate.open_ports.iter().map(|r| r.recruit).collect();
        let mut best: Option<(f64, NodeId, Recruitment)> = None;
        for unit in free_pool {
            let id = unit.tree.root;
            if taken.contains(&id) || knowledge.contains(id) || template.embed(&unit.tree, slot).is_none() {
                continue;
            }
            let own: BTreeSet<PortId> = unit.tree.child_ports().collect();
            let entry_want = template.slots[slot].entry_port;
            let Some(entry_port) = Some(entry_want).filter(|p| !own.contains(p)).or_else(|| PortId::all().find(|p| !own.contains(p))) else {
                continue;
            };
            let goal = parent_pose.compose(&mate_pose(port, entry_port));
            let d = unit.pose.position().distance(goal.position());
            if best.as_ref().is_none_or(|(bd, bid, _)| d < *bd || (d == *bd && id < *bid)) {
                best = Some((d, id, Recruitment { recruit: id, parent, port, entry_port, goal, slot }));
            }
        }
        match best {
            Some((_, _, r)) => {
                bstate.open_ports.push(r);
                assignments.push(r);
            }
            None => problems.push(BehaviorError::InsufficientRobots { slot }),
        }
    }
    RecruitmentStep { state: bstate, assignments, problems }
}

/// The module whose detachment leaves `template_a` behind and carries
/// `template_b` away; lowest id wins among several. Either part may fit
/// its template from any of its modules.
pub fn split_plan(
    knowledge: &SubtreeDescription,
    template_a: &MorphologyTemplate,
    template_b: &MorphologyTemplate,
) -> Result<NodeId, BehaviorError> {
    let mut ids = knowledge.node_ids();
    ids.sort();
    for id in ids {
        if id == knowledge.root {
            continue;
        }
        let Ok((rest, sub)) = BodyMap::from_tree(knowledge.clone()).detach_subtree(id) else { continue };
        if matches_unrooted(template_b, &sub) && matches_unrooted(template_a, &rest.tree) {
            return Ok(id);
        }
    }
    Err(BehaviorError::NoValidSplit)
}

/// Whether some choice of root makes `tree` fit `t`.
fn matches_unrooted(t: &MorphologyTemplate, tree: &SubtreeDescription) -> bool {
    if t.len() != tree.len() {
        return false;
    }
    let body = BodyMap::from_tree(tree.clone());
    tree.node_ids().into_iter().any(|id| body.reroot(id).is_ok_and(|b| t.matches(&b.tree)))
}

/// The template to rebuild after `failed` modules are lost: the original
/// with as many slots removed, deepest leaves first and the highest index
/// among equals. Also returns the recruiter: the lowest surviving fragment
/// root.
pub fn recovery_target(
    original: &MorphologyTemplate,
    failed: &BTreeSet<NodeId>,
    survivors: &[SubtreeDescription],
) -> (MorphologyTemplate, Option<NodeId>) {
    let mut t = original.clone();
    for _ in 0..failed.len() {
        if t.len() <= 1 {
            break;
        }
        let victim = (1..t.len())
            .filter(|&i| t.children_of(i).is_empty())
            .max_by_key(|&i| (t.depth(i), i))
            .expect("a tree with two or more slots has a leaf");
        t.slots.remove(victim);
        for s in t.slots.iter_mut() {
            if let Some(p) = s.parent.as_mut() {
                if *p > victim {
                    *p -= 1;
                }
            }
        }
    }
    let recruiter = survivors.iter().map(|s| s.root).min();
    (t, recruiter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }
    fn caps() -> Capabilities {
        Capabilities::default()
    }
    fn leaf(i: u32) -> SubtreeDescription {
        SubtreeDescription::leaf(n(i), caps())
    }
    fn t(s: f64) -> SimTime {
        SimTime::from_secs(s)
    }
    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| n(i)).collect()
    }
    fn est(x: f64, y: f64, at: f64) -> StimulusEstimate {
        StimulusEstimate { position: Vec2::new(x, y), sensed_at: t(at), origin: n(0) }
    }

    #[test]
    fn fuse_nothing() {
        assert_eq!(fuse_reports(&[], &leaf(0)), (None, vec![]));
    }

    #[test]
    fn fuse_brain_only_is_identity() {
        let r = StimulusReading { distance: 1.2, bearing: 0.7, sensed_at: t(3.0) };
        let (e, errs) = fuse_reports(&[(n(0), r)], &leaf(0));
        assert!(errs.is_empty());
        assert!(e.unwrap().position.distance(r.local_position()) < 1e-15);
    }

    #[test]
    fn fuse_picks_nearer_module_and_recovers_truth() {
        // Oracle: build world poses by hand for a two-module body.
        let tree = MorphologyTemplate::chain("c", 2).instantiate(&ids(&[0, 1]), |_| caps());
        let brain_world = Pose2::new(0.4, -0.2, 0.9);
        let rel = mate_pose(PortId(0), PortId(4));
        let m1_world = brain_world.compose(&rel);
        let stim = Vec2::new(1.5, 0.8);
        let reading = |pose: Pose2| {
            let local = pose.inverse_transform_point(stim);
            StimulusReading { distance: local.norm(), bearing: local.angle(), sensed_at: t(1.0) }
        };
        let reports = [(n(0), reading(brain_world)), (n(1), reading(m1_world))];
        let (e, _) = fuse_reports(&reports, &tree);
        let e = e.unwrap();
        let near = if reports[0].1.distance < reports[1].1.distance { n(0) } else { n(1) };
        assert_eq!(e.origin, near);
        let truth_in_brain = brain_world.inverse_transform_point(stim);
        assert!(e.position.distance(truth_in_brain) < 1e-9);
    }

    #[test]
    fn fuse_reports_unknown_origin() {
        let r = StimulusReading { distance: 1.0, bearing: 0.0, sensed_at: t(0.0) };
        let (e, errs) = fuse_reports(&[(n(9), r)], &leaf(0));
        assert_eq!(e, None);
        assert_eq!(errs, vec![BehaviorError::UnknownOrigin(n(9))]);
    }

    #[test]
    fn far_stimulus_keeps_idle() {
        let d = brain_decide(BrainBehaviorState::idle(), Some(est(2.0, 0.0, 1.0)), t(1.0), Vec2::ZERO, &BehaviorParams::default());
        assert_eq!(d.state.mode, Mode::Idle);
        assert!(d.twist.is_zero());
        assert_eq!(d.leds, None);
    }

    #[test]
    fn mid_range_points() {
        let d = brain_decide(BrainBehaviorState::idle(), Some(est(1.0, 0.0, 1.0)), t(1.0), Vec2::ZERO, &BehaviorParams::default());
        assert_eq!(d.state.mode, Mode::Pointing);
        assert!(d.twist.is_zero());
        assert_eq!(d.leds, Some(3));
    }

    #[test]
    fn close_stimulus_retreats_straight_away() {
        let d = brain_decide(BrainBehaviorState::idle(), Some(est(0.5, 0.0, 1.0)), t(1.0), Vec2::ZERO, &BehaviorParams::default());
        assert_eq!(d.state.mode, Mode::Retreating);
        assert!((d.twist.vx + V_MAX).abs() < 1e-12);
        assert_eq!(d.twist.vy, 0.0);
        assert_eq!(d.twist.omega, 0.0);
        assert_eq!(d.leds, Some(3));
    }

    #[test]
    fn hysteresis_band() {
        let p = BehaviorParams::default();
        let mut s = BrainBehaviorState::idle();
        s.mode = Mode::Retreating;
        let d = brain_decide(s.clone(), Some(est(0.85, 0.0, 1.0)), t(1.0), Vec2::ZERO, &p);
        assert_eq!(d.state.mode, Mode::Retreating);
        assert!(d.twist.vx < 0.0);
        let d = brain_decide(s, Some(est(0.9, 0.0, 1.0)), t(1.0), Vec2::ZERO, &p);
        assert_eq!(d.state.mode, Mode::Pointing);
        let mut s = BrainBehaviorState::idle();
        s.mode = Mode::Pointing;
        let d = brain_decide(s.clone(), Some(est(1.55, 0.0, 1.0)), t(1.0), Vec2::ZERO, &p);
        assert_eq!(d.state.mode, Mode::Pointing);
        let d = brain_decide(s, Some(est(1.65, 0.0, 1.0)), t(1.0), Vec2::ZERO, &p);
        assert_eq!(d.state.mode, Mode::Idle);
    }

    #[test]
    fn stale_estimate_drops_to_idle() {
        let mut s = BrainBehaviorState::idle();
        s.mode = Mode::Retreating;
        s.stimulus_estimate = Some(est(0.5, 0.0, 1.0));
        let d = brain_decide(s, None, t(1.6), Vec2::ZERO, &BehaviorParams::default());
        assert_eq!(d.state.mode, Mode::Idle);
        assert!(d.twist.is_zero());
    }

    #[test]
    fn retreat_measured_from_centroid() {
        let d = brain_decide(BrainBehaviorState::idle(), Some(est(0.0, 0.6, 1.0)), t(1.0), Vec2::new(0.0, 0.2), &BehaviorParams::default());
        assert_eq!(d.state.mode, Mode::Retreating);
        assert!(d.twist.vx.abs() < 1e-12 && d.twist.vy < 0.0);
        let _ = PI;
    }

    fn pool(units: &[(u32, f64, f64)]) -> Vec<FreeUnit> {
        units.iter().map(|&(i, x, y)| FreeUnit { tree: leaf(i), pose: Pose2::new(x, y, 0.0) }).collect()
    }

    #[test]
    fn complete_template_goes_idle() {
        let tpl = MorphologyTemplate::chain("c", 2);
        let tree = tpl.instantiate(&ids(&[0, 1]), |_| caps());
        let poses = BodyMap::from_tree(tree.clone()).world_poses(Pose2::IDENTITY);
        let s = recruitment_step(BrainBehaviorState::forming(tpl), &tree, &pool(&[(5, 1.0, 0.0)]), &poses);
        assert!(s.assignments.is_empty());
        assert_eq!(s.state.mode, Mode::Idle);
    }

    #[test]
    fn nearest_robot_recruited() {
        let tpl = MorphologyTemplate::chain("c", 2);
        let poses: BTreeMap<_, _> = [(n(0), Pose2::IDENTITY)].into();
        let s = recruitment_step(BrainBehaviorState::forming(tpl), &leaf(0), &pool(&[(1, 2.0, 0.0), (2, 1.0, 0.0)]), &poses);
        assert_eq!(s.assignments.len(), 1);
        let r = s.assignments[0];
        assert_eq!(r.recruit, n(2));
        assert_eq!((r.parent, r.port, r.entry_port), (n(0), PortId(0), PortId(4)));
        assert!(r.goal.approx_eq(&mate_pose(PortId(0), PortId(4)), 1e-12));
        assert_eq!(s.state.mode, Mode::Forming);
        // The port is now taken until the recruit arrives.
        let again = recruitment_step(s.state, &leaf(0), &pool(&[(1, 2.0, 0.0)]), &poses);
        assert!(again.assignments.is_empty());
        assert!(again.problems.is_empty());
    }

    #[test]
    fn equidistant_tie_goes_to_lower_id() {
        let tpl = MorphologyTemplate::chain("c", 2);
        let poses: BTreeMap<_, _> = [(n(0), Pose2::IDENTITY)].into();
        let goal = mate_pose(PortId(0), PortId(4)).position();
        let s = recruitment_step(
            BrainBehaviorState::forming(tpl),
            &leaf(0),
            &pool(&[(7, goal.x, goal.y + 1.0), (4, goal.x, goal.y - 1.0)]),
            &poses,
        );
        assert_eq!(s.assignments[0].recruit, n(4));
    }

    #[test]
    fn missing_capability_reported() {
        let mut tpl = MorphologyTemplate::chain("c", 2);
        tpl.slots[1].requires.min_leds = 24;
        let poses: BTreeMap<_, _> = [(n(0), Pose2::IDENTITY)].into();
        let s = recruitment_step(BrainBehaviorState::forming(tpl), &leaf(0), &pool(&[(1, 1.0, 0.0)]), &poses);
        assert!(s.assignments.is_empty());
        assert_eq!(s.problems, vec![BehaviorError::InsufficientRobots { slot: 1 }]);
        assert_eq!(s.state.mode, Mode::Forming);
    }

    #[test]
    fn star_recruits_all_leaves_at_once() {
        let tpl = MorphologyTemplate::star("s", 3);
        let poses: BTreeMap<_, _> = [(n(0), Pose2::IDENTITY)].into();
        let s = recruitment_step(BrainBehaviorState::forming(tpl), &leaf(0), &pool(&[(1, 1.0, 0.0), (2, 0.0, 1.0), (3, -1.0, 0.0)]), &poses);
        assert_eq!(s.assignments.len(), 3);
        let ports: BTreeSet<PortId> = s.assignments.iter().map(|r| r.port).collect();
        assert_eq!(ports.len(), 3);
        let recruits: BTreeSet<NodeId> = s.assignments.iter().map(|r| r.recruit).collect();
        assert_eq!(recruits.len(), 3);
    }

    #[test]
    fn split_chain_in_the_middle() {
        let tree = MorphologyTemplate::chain("c", 4).instantiate(&ids(&[0, 1, 2, 3]), |_| caps());
        let two = MorphologyTemplate::chain("c2", 2);
        assert_eq!(split_plan(&tree, &two, &two), Ok(n(2)));
    }

    #[test]
    fn split_star_lowest_leaf_matches_enumeration() {
        let tree = MorphologyTemplate::star("s", 3).instantiate(&ids(&[5, 3, 8, 1]), |_| caps());
        let a = MorphologyTemplate::star("a", 2);
        let b = MorphologyTemplate::chain("b", 1);
        // Exhaustive oracle: every edge, compare node counts and degrees.
        let mut valid: Vec<NodeId> = Vec::new();
        for (_, child) in tree.edges() {
            let (rest, sub) = BodyMap::from_tree(tree.clone()).detach_subtree(child).unwrap();
            let rest_degrees: Vec<usize> = {
                let mut v: Vec<usize> = rest.tree.node_ids().iter().map(|i| rest.subtree(*i).unwrap().children.len()).collect();
                v.sort();
                v
            };
            if sub.len() == 1 && rest.len() == 3 && rest_degrees == vec![0, 0, 2] && rest.tree.children.len() == 2 {
                valid.push(child);
            }
        }
        valid.sort();
        assert_eq!(split_plan(&tree, &a, &b), Ok(valid[0]));
        assert_eq!(valid[0], n(1));
    }

    #[test]
    fn split_keeps_a_part_rooted_mid_chain() {
        let chain = MorphologyTemplate::chain("c", 5).instantiate(&ids(&[0, 1, 2, 3, 4]), |_| caps());
        let tree = BodyMap::from_tree(chain).reroot(n(1)).unwrap().tree;
        let three = MorphologyTemplate::chain("c3", 3);
        let two = MorphologyTemplate::chain("c2", 2);
        assert_eq!(split_plan(&tree, &three, &two), Ok(n(3)));
    }

    #[test]
    fn split_impossible() {
        let tree = MorphologyTemplate::star("s", 3).instantiate(&ids(&[0, 1, 2, 3]), |_| caps());
        let two = MorphologyTemplate::chain("c2", 2);
        assert_eq!(split_plan(&tree, &two, &two), Err(BehaviorError::NoValidSplit));
    }

    #[test]
    fn recovery_of_star_brain() {
        let tpl = MorphologyTemplate::star("s", 3);
        let failed: BTreeSet<NodeId> = [n(0)].into();
        let (rt, rec) = recovery_target(&tpl, &failed, &[leaf(3), leaf(1), leaf(2)]);
        assert_eq!(rt.len(), 3);
        assert!(rt.validate().is_ok());
        assert_eq!(rec, Some(n(1)));
    }

    #[test]
    fn recovery_without_failures_is_identity() {
        let tpl = MorphologyTemplate::star("s", 4);
        let (rt, _) = recovery_target(&tpl, &BTreeSet::new(), &[]);
        assert_eq!(rt, tpl);
    }

    #[test]
    fn recovery_trims_chain_leaves() {
        let tpl = MorphologyTemplate::chain("c", 5);
        let failed: BTreeSet<NodeId> = [n(1), n(3)].into();
        let (rt, _) = recovery_target(&tpl, &failed, &[leaf(0), leaf(2), leaf(4)]);
        assert_eq!(rt.len(), 3);
        assert!(rt.validate().is_ok());
        assert_eq!(rt, MorphologyTemplate::chain("c", 3));
    }

    #[test]
    fn template_validation() {
        assert!(MorphologyTemplate::chain("c", 6).validate().is_ok());
        assert!(MorphologyTemplate::star("s", 8).validate().is_ok());
        let mut bad = MorphologyTemplate::star("s", 2);
        bad.slots[2].via_port = bad.slots[1].via_port;
        assert!(bad.validate().is_err());
        let mut bad = MorphologyTemplate::chain("c", 3);
        bad.slots[1].parent = Some(2);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn template_round_trips_through_tree() {
        let tpl = MorphologyTemplate::star("s", 3);
        let tree = tpl.instantiate(&ids(&[0, 1, 2, 3]), |_| caps());
        assert_eq!(MorphologyTemplate::from_tree("s", &tree), tpl);
        assert!(tpl.matches(&tree));
        assert!(!MorphologyTemplate::chain("c", 4).matches(&tree));
    }
}
