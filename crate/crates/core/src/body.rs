//! Planar kinematics of modules and composite bodies: twist decomposition,
//! rigid integration, stimulus sensing, LED geometry and docking tolerance.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::geometry::{normalize_angle, Pose2, Vec2};
use crate::time::SimTime;
use crate::topology::{BodyMap, NodeId, PortId, TopologyError};

pub const V_MAX: f64 = 0.3;
pub const OMEGA_MAX: f64 = 1.5;
pub const LED_COUNT: u32 = 12;
pub const LED_RING_RADIUS: f64 = 0.085;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Limits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { v_max: V_MAX, omega_max: OMEGA_MAX }
    }
}

/// Velocity command for one module, in that module's frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModuleCommand {
    pub velocity: Vec2,
    pub omega: f64,
}

impl ModuleCommand {
    pub const STOP: ModuleCommand = ModuleCommand { velocity: Vec2::ZERO, omega: 0.0 };

    pub fn within(&self, limits: &Limits) -> bool {
        self.velocity.norm() <= limits.v_max * (1.0 + 1e-12) && libm::fabs(self.omega) <= limits.omega_max * (1.0 + 1e-12)
    }
}

/// Planar rigid-body velocity expressed in the brain frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist { vx: 0.0, vy: 0.0, omega: 0.0 };

    pub fn linear(&self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }

    pub fn scaled(&self, s: f64) -> Twist {
        Twist { vx: self.vx * s, vy: self.vy * s, omega: self.omega * s }
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.omega == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StimulusReading {
    pub distance: f64,
    /// Bearing in the sensing module's frame.
    pub bearing: f64,
    pub sensed_at: SimTime,
}

impl StimulusReading {
    /// Stimulus position in the sensing module's frame.
    pub fn local_position(&self) -> Vec2 {
        Vec2::from_polar(self.distance, self.bearing)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LedRing {
    pub count: u32,
    pub radius: f64,
}

impl Default for LedRing {
    fn default() -> Self {
        LedRing { count: LED_COUNT, radius: LED_RING_RADIUS }
    }
}

impl LedRing {
    pub fn with_count(self, count: u32) -> LedRing {
        LedRing { count, ..self }
    }

    pub fn angle(&self, index: u32) -> f64 {
        2.0 * PI * f64::from(index) / f64::from(self.count)
    }

    pub fn world_position(&self, module: &Pose2, index: u32) -> Vec2 {
        module.transform_point(Vec2::from_polar(self.radius, self.angle(index)))
    }
}

/// Piecewise-linear stimulus trajectory; holds the end positions outside
/// the waypoint time range.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StimulusPath {
    pub waypoints: Vec<(SimTime, Vec2)>,
}

impl StimulusPath {
    pub fn position_at(&self, t: SimTime) -> Option<Vec2> {
        let first = self.waypoints.first()?;
        if t <= first.0 {
            return Some(first.1);
        }
        for w in self.waypoints.windows(2) {
            let (t0, p0) = w[0];
            let (t1, p1) = w[1];
            if t <= t1 {
                if t1 == t0 {
                    return Some(p1);
                }
                let f = (t - t0).as_secs() / (t1 - t0).as_secs();
                return Some(p0 + (p1 - p0) * f);
            }
        }
        self.waypoints.last().map(|w| w.1)
    }
}

/// Splits a brain-frame twist into per-module commands.
///
/// `poses` may be in any common frame; the brain frame is recovered from
/// the root's pose. If a command exceeds `limits`, the whole twist is
/// scaled by one factor so the body stays rigid.
pub fn twist_to_module_commands(
    body: &BodyMap,
    poses: &BTreeMap<NodeId, Pose2>,
    twist: Twist,
    limits: &Limits,
) -> BTreeMap<NodeId, ModuleCommand> {
    let brain = poses.get(&body.root()).copied().unwrap_or(Pose2::IDENTITY);
    let raw: Vec<(NodeId, Vec2, f64)> = body
        .tree
        .node_ids()
        .into_iter()
        .filter_map(|id| {
            let p = poses.get(&id)?;
            let r = brain.inverse_transform_point(p.position());
            let u = twist.linear() + r.perp() * twist.omega;
            Some((id, u, brain.theta - p.theta))
        })
        .collect();
    let mut scale: f64 = 1.0;
    for (_, u, _) in &raw {
        let speed = u.norm();
        if speed > limits.v_max {
            scale = scale.min(limits.v_max / speed);
        }
    }
    if libm::fabs(twist.omega) > limits.omega_max {
        scale = scale.min(limits.omega_max / libm::fabs(twist.omega));
    }
    raw.into_iter()
        .map(|(id, u, rel)| {
            (id, ModuleCommand { velocity: (u * scale).rotate(rel), omega: twist.omega * scale })
        })
        .collect()
}

/// First-order Euler step of a pose under a command in its own frame.
pub fn euler_step(pose: &Pose2, cmd: &ModuleCommand, dt: f64) -> Pose2 {
    let v = pose.transform_vector(cmd.velocity) * dt;
    Pose2::new(pose.x + v.x, pose.y + v.y, pose.theta + cmd.omega * dt)
}

/// One connected component: its tree, the root's world pose and the
/// command currently driving the root.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidBody {
    pub map: BodyMap,
    pub pose: Pose2,
    pub command: ModuleCommand,
}

/// Ground-truth bodies keyed by root id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhysicsState {
    pub bodies: BTreeMap<NodeId, RigidBody>,
}

impl PhysicsState {
    pub fn add_body(&mut self, map: BodyMap, pose: Pose2) {
        self.bodies.insert(map.root(), RigidBody { map, pose, command: ModuleCommand::STOP });
    }

    /// Root of the body containing `id`.
    pub fn body_of(&self, id: NodeId) -> Option<NodeId> {
        self.bodies.iter().find(|(_, b)| b.map.contains(id)).map(|(r, _)| *r)
    }

    pub fn world_pose(&self, id: NodeId) -> Option<Pose2> {
        let body = &self.bodies[&self.body_of(id)?];
        let path = body.map.tree.path_to(id)?;
        let mut pose = body.pose;
        let mut cur = &body.map.tree;
        for i in path {
            pose = pose.compose(&cur.children[i].relative_pose);
            cur = &cur.children[i].sub;
        }
        Some(pose)
    }

    pub fn world_poses(&self) -> BTreeMap<NodeId, Pose2> {
        let mut out = BTreeMap::new();
        for b in self.bodies.values() {
            out.extend(b.map.world_poses(b.pose));
        }
        out
    }

    /// Advances every body rigidly: the root pose is integrated, members
    /// follow through the tree, so no pairwise distance can drift.
    pub fn integrate(&mut self, dt: f64) {
        for b in self.bodies.values_mut() {
            if b.command != ModuleCommand::STOP {
                b.pose = euler_step(&b.pose, &b.command, dt);
            }
        }
    }

    /// True when `a` and `b` share a tree edge.
    pub fn mated(&self, a: NodeId, b: NodeId) -> bool {
        let Some(root) = self.body_of(a) else { return false };
        let map = &self.bodies[&root].map;
        matches!(map.parent_of(a), Some((p, _, _)) if p == b) || matches!(map.parent_of(b), Some((p, _, _)) if p == a)
    }

    /// Docks the body rooted at `child_root` onto `parent`. The child body
    /// keeps its current pose; callers snap it first.
    pub fn attach(&mut self, parent: NodeId, parent_port: PortId, child_root: NodeId, child_port: PortId) -> Result<(), TopologyError> {
        let proot = self.body_of(parent).ok_or(TopologyError::UnknownParent(parent))?;
        if !self.bodies.contains_key(&child_root) {
            return Err(TopologyError::UnknownNode(child_root));
        }
        if proot == child_root {
            return Err(TopologyError::DuplicateNodeId(parent));
        }
        let merged = self.bodies[&proot].map.attach_subtree(parent, parent_port, child_port, self.bodies[&child_root].map.tree.clone())?;
        self.bodies.remove(&child_root);
        self.bodies.get_mut(&proot).expect("parent body").map = merged;
        Ok(())
    }

    /// Cuts `node` from its parent; the cut part becomes its own body at
    /// its current world pose, standing still.
    pub fn detach(&mut self, node: NodeId) -> Result<NodeId, TopologyError> {
        let root = self.body_of(node).ok_or(TopologyError::UnknownNode(node))?;
        let pose = self.world_pose(node).ok_or(TopologyError::UnknownNode(node))?;
        let (rest, sub) = self.bodies[&root].map.detach_subtree(node)?;
        self.bodies.get_mut(&root).expect("body").map = rest;
        self.bodies.insert(node, RigidBody { map: BodyMap::from_tree(sub), pose, command: ModuleCommand::STOP });
        Ok(root)
    }

    /// Re-roots the body containing `new_root` without moving anything.
    pub fn reroot(&mut self, new_root: NodeId) -> Result<(), TopologyError> {
        let root = self.body_of(new_root).ok_or(TopologyError::UnknownNode(new_root))?;
        if root == new_root {
            return Ok(());
        }
        let pose = self.world_pose(new_root).ok_or(TopologyError::UnknownNode(new_root))?;
        let body = self.bodies.remove(&root).expect("body");
        let map = body.map.reroot(new_root)?;
        self.bodies.insert(new_root, RigidBody { map, pose, command: ModuleCommand::STOP });
        Ok(())
    }
}

/// Ideal range/bearing sensor: a reading iff the stimulus is within range.
pub fn sense_stimulus(module_pose: &Pose2, stimulus: Vec2, r_sense: f64, now: SimTime) -> Option<StimulusReading> {
    let local = module_pose.inverse_transform_point(stimulus);
    let distance = local.norm();
    (distance <= r_sense).then(|| StimulusReading { distance, bearing: local.angle(), sensed_at: now })
}

/// The `k` LEDs over the whole body nearest to `stimulus`, ties broken by
/// `(NodeId, led index)`. Each module's LED count comes from its
/// capabilities; `ring` supplies the radius.
pub fn closest_leds(
    body: &BodyMap,
    poses: &BTreeMap<NodeId, Pose2>,
    ring: &LedRing,
    stimulus: Vec2,
    k: usize,
) -> Vec<(NodeId, u32)> {
    let mut all: Vec<(f64, NodeId, u32)> = Vec::new();
    let mut stack = alloc::vec![&body.tree];
    while let Some(n) = stack.pop() {
        if let Some(pose) = poses.get(&n.root) {
            let r = ring.with_count(n.caps.led_count);
            for i in 0..r.count {
                all.push((r.world_position(pose, i).distance(stimulus), n.root, i));
            }
        }
        stack.extend(n.children.iter().map(|c| &c.sub));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out: Vec<(NodeId, u32)> = all.into_iter().take(k).map(|(_, id, i)| (id, i)).collect();
    out.sort();
    out
}

/// Groups an LED selection into per-module bit masks.
pub fn led_masks(selection: &[(NodeId, u32)]) -> BTreeMap<NodeId, u32> {
    let mut out = BTreeMap::new();
    for &(id, i) in selection {
        *out.entry(id).or_insert(0) |= 1u32 << i;
    }
    out
}

/// Closed tolerance on both position and heading error.
pub fn dock_feasible(gripper_pose: &Pose2, target_port_world_pose: &Pose2, eps_dist: f64, eps_angle: f64) -> bool {
    gripper_pose.position().distance(target_port_world_pose.position()) <= eps_dist
        && libm::fabs(normalize_angle(gripper_pose.theta - target_port_world_pose.theta)) <= eps_angle
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{mate_pose, Capabilities, ChildLink, SubtreeDescription};
    use alloc::vec;
    use proptest::prelude::*;

    fn chain(n: u32) -> BodyMap {
        let mut tree = SubtreeDescription::leaf(NodeId(n - 1), Capabilities::default());
        for i in (0..n - 1).rev() {
            let mut parent = SubtreeDescription::leaf(NodeId(i), Capabilities::default());
            parent.insert_child(ChildLink::mated(PortId(0), PortId(3), tree));
            tree = parent;
        }
        BodyMap::from_tree(tree)
    }

    /// Small deterministic generator for test fixtures.
    struct Lcg(u64);
    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (self.0 >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    fn random_body(rng: &mut Lcg, n: u32) -> BodyMap {
        let mut body = BodyMap::single(NodeId(0), Capabilities::default());
        for id in 1..n {
            loop {
                let parent = NodeId((rng.next() * id as f64) as u32);
                let free = body.free_ports(parent).unwrap();
                if free.is_empty() {
                    continue;
                }
                let pp = free[(rng.next() * free.len() as f64) as usize];
                let cp = PortId((rng.next() * 8.0) as u8);
                body = body.attach_subtree(parent, pp, cp, SubtreeDescription::leaf(NodeId(id), Capabilities::default())).unwrap();
                break;
            }
        }
        body
    }

    #[test]
    fn pure_translation_is_uniform_in_world() {
        let body = chain(3);
        let poses = body.world_poses(Pose2::new(0.3, 0.1, 0.7));
        let cmds = twist_to_module_commands(&body, &poses, Twist { vx: 0.2, vy: 0.0, omega: 0.0 }, &Limits::default());
        let expected = poses[&NodeId(0)].transform_vector(Vec2::new(0.2, 0.0));
        for (id, c) in &cmds {
            let world = poses[id].transform_vector(c.velocity);
            assert!(world.distance(expected) < 1e-12);
            assert_eq!(c.omega, 0.0);
        }
    }

    #[test]
    fn pure_rotation_about_brain() {
        let mut tree = SubtreeDescription::leaf(NodeId(0), Capabilities::default());
        tree.insert_child(ChildLink {
            via_port: PortId(0),
            entry_port: PortId(4),
            relative_pose: Pose2::new(1.0, 0.0, 0.0),
            sub: SubtreeDescription::leaf(NodeId(1), Capabilities::default()),
        });
        let body = BodyMap::from_tree(tree);
        let poses = body.world_poses(Pose2::IDENTITY);
        let limits = Limits { v_max: 10.0, omega_max: 10.0 };
        let cmds = twist_to_module_commands(&body, &poses, Twist { vx: 0.0, vy: 0.0, omega: 0.25 }, &limits);
        assert!(cmds[&NodeId(1)].velocity.distance(Vec2::new(0.0, 0.25)) < 1e-12);
        assert!((cmds[&NodeId(1)].velocity.norm() - 0.25).abs() < 1e-12);
        assert_eq!(cmds[&NodeId(0)].velocity, Vec2::ZERO);
    }

    #[test]
    fn twist_field_is_rigid() {
        let mut rng = Lcg(7);
        for _ in 0..50 {
            let body = random_body(&mut rng, 5);
            let root = Pose2::new(rng.next() * 4.0 - 2.0, rng.next() * 4.0 - 2.0, rng.next() * 6.0);
            let poses = body.world_poses(root);
            let twist = Twist { vx: rng.next() - 0.5, vy: rng.next() - 0.5, omega: rng.next() * 2.0 - 1.0 };
            let cmds = twist_to_module_commands(&body, &poses, twist, &Limits::default());
            let vel: BTreeMap<_, _> = cmds.iter().map(|(id, c)| (*id, poses[id].transform_vector(c.velocity))).collect();
            for (a, pa) in &poses {
                for (b, pb) in &poses {
                    // d/dt |pa - pb|^2 = 2 (pa - pb) . (va - vb)
                    let rate = 2.0 * (pa.position() - pb.position()).dot(vel[a] - vel[b]);
                    assert!(rate.abs() < 1e-12, "rate {rate}");
                }
            }
            for c in cmds.values() {
                assert!(c.within(&Limits::default()));
            }
        }
    }

    #[test]
    fn limit_scaling_is_one_common_factor() {
        let body = chain(4);
        let poses = body.world_poses(Pose2::IDENTITY);
        let big = Twist { vx: 0.5, vy: -0.2, omega: 2.0 };
        let free = Limits { v_max: 1e9, omega_max: 1e9 };
        let raw = twist_to_module_commands(&body, &poses, big, &free);
        let scaled = twist_to_module_commands(&body, &poses, big, &Limits::default());
        let s = scaled[&NodeId(0)].omega / raw[&NodeId(0)].omega;
        assert!(s > 0.0 && s < 1.0);
        for id in raw.keys() {
            assert!(scaled[id].velocity.distance(raw[id].velocity * s) < 1e-12);
            assert!(scaled[id].within(&Limits::default()));
        }
    }

    #[test]
    fn integrate_examples() {
        let mut phys = PhysicsState::default();
        phys.add_body(chain(3), Pose2::new(1.0, 2.0, 0.5));
        let before = phys.clone();
        phys.integrate(0.05);
        assert_eq!(phys, before);

        // A free robot at full speed along its heading.
        let mut free = PhysicsState::default();
        free.add_body(BodyMap::single(NodeId(9), Capabilities::default()), Pose2::new(0.0, 0.0, 0.6));
        free.bodies.get_mut(&NodeId(9)).unwrap().command = ModuleCommand { velocity: Vec2::new(0.3, 0.0), omega: 0.0 };
        for _ in 0..40 {
            free.integrate(0.05);
        }
        let p = free.world_pose(NodeId(9)).unwrap();
        assert!(p.position().distance(Vec2::from_polar(0.6, 0.6)) < 1e-12);
    }

    #[test]
    fn composite_stays_rigid_under_constant_twist() {
        let mut rng = Lcg(3);
        let body = random_body(&mut rng, 6);
        let mut phys = PhysicsState::default();
        phys.add_body(body, Pose2::new(0.0, 0.0, 0.2));
        phys.bodies.get_mut(&NodeId(0)).unwrap().command = ModuleCommand { velocity: Vec2::new(0.1, 0.05), omega: 0.4 };
        let dist = |p: &BTreeMap<NodeId, Pose2>| {
            let mut v = Vec::new();
            for a in p.values() {
                for b in p.values() {
                    v.push(a.position().distance(b.position()));
                }
            }
            v
        };
        let d0 = dist(&phys.world_poses());
        for _ in 0..20 {
            phys.integrate(0.05);
        }
        for (a, b) in d0.iter().zip(dist(&phys.world_poses())) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sensing_examples() {
        let r = sense_stimulus(&Pose2::IDENTITY, Vec2::new(1.0, 0.0), 2.0, SimTime::ZERO).unwrap();
        assert_eq!((r.distance, r.bearing), (1.0, 0.0));
        assert!(sense_stimulus(&Pose2::IDENTITY, Vec2::new(3.0, 0.0), 2.0, SimTime::ZERO).is_none());
        // Boundary is inclusive.
        assert!(sense_stimulus(&Pose2::IDENTITY, Vec2::new(2.0, 0.0), 2.0, SimTime::ZERO).is_some());
    }

    #[test]
    fn sensing_matches_frame_oracle() {
        let mut rng = Lcg(11);
        for _ in 0..500 {
            let pose = Pose2::new(rng.next() * 4.0 - 2.0, rng.next() * 4.0 - 2.0, rng.next() * 7.0 - 3.5);
            let s = Vec2::new(rng.next() * 4.0 - 2.0, rng.next() * 4.0 - 2.0);
            // Oracle: explicit rotation matrix transpose.
            let (c, sn) = (pose.theta.cos(), pose.theta.sin());
            let (dx, dy) = (s.x - pose.x, s.y - pose.y);
            let (lx, ly) = (c * dx + sn * dy, -sn * dx + c * dy);
            let dist = (lx * lx + ly * ly).sqrt();
            match sense_stimulus(&pose, s, 2.0, SimTime::ZERO) {
                Some(r) => {
                    assert!((r.distance - dist).abs() < 1e-9);
                    assert!(normalize_angle(r.bearing - ly.atan2(lx)).abs() < 1e-9);
                }
                None => assert!(dist > 2.0),
            }
        }
    }

    proptest! {
        #[test]
        fn sensing_rotation_equivariant(x in -1.0..1.0f64, y in -1.0..1.0f64, t in -3.0..3.0f64,
                                        sx in -1.5..1.5f64, sy in -1.5..1.5f64, rot in -3.0..3.0f64) {
            let pose = Pose2::new(x, y, t);
            let s = Vec2::new(sx, sy);
            let spin = Pose2::new(0.0, 0.0, rot);
            let a = sense_stimulus(&pose, s, 10.0, SimTime::ZERO).unwrap();
            let b = sense_stimulus(&spin.compose(&pose), spin.transform_point(s), 10.0, SimTime::ZERO).unwrap();
            prop_assert!((a.distance - b.distance).abs() < 1e-9);
            prop_assert!(normalize_angle(a.bearing - b.bearing).abs() < 1e-9);
        }
    }

    #[test]
    fn single_module_led_toward_stimulus() {
        let body = BodyMap::single(NodeId(0), Capabilities::default());
        let poses = body.world_poses(Pose2::IDENTITY);
        let sel = closest_leds(&body, &poses, &LedRing::default(), Vec2::new(1.0, 0.0), 1);
        assert_eq!(sel, vec![(NodeId(0), 0)]);
    }

    #[test]
    fn leds_pick_non_brain_module_when_nearer() {
        let mut tree = SubtreeDescription::leaf(NodeId(0), Capabilities::default());
        tree.insert_child(ChildLink::mated(PortId(0), PortId(4), SubtreeDescription::leaf(NodeId(1), Capabilities::default())));
        let body = BodyMap::from_tree(tree);
        let poses = body.world_poses(Pose2::IDENTITY);
        let sel = closest_leds(&body, &poses, &LedRing::default(), Vec2::new(0.6, 0.05), 3);
        assert_eq!(sel.len(), 3);
        assert!(sel.iter().all(|(id, _)| *id == NodeId(1)));
    }

    #[test]
    fn leds_match_exhaustive_sort() {
        let mut rng = Lcg(5);
        for _ in 0..100 {
            let body = random_body(&mut rng, 6);
            let poses = body.world_poses(Pose2::new(rng.next(), rng.next(), rng.next() * 6.0));
            let s = Vec2::new(rng.next() * 3.0 - 1.5, rng.next() * 3.0 - 1.5);
            let sel = closest_leds(&body, &poses, &LedRing::default(), s, 5);
            // Brute force over all 72 LED positions computed with explicit trig.
            let mut all = Vec::new();
            for (id, p) in &poses {
                for i in 0..12u32 {
                    let a = p.theta + 2.0 * PI * i as f64 / 12.0;
                    let (lx, ly) = (p.x + 0.085 * a.cos(), p.y + 0.085 * a.sin());
                    all.push((((lx - s.x).powi(2) + (ly - s.y).powi(2)).sqrt(), *id, i));
                }
            }
            assert_eq!(all.len(), 72);
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut oracle: Vec<_> = all[..5].iter().map(|e| (e.1, e.2)).collect();
            oracle.sort();
            assert_eq!(sel, oracle);
        }
    }

    #[test]
    fn led_selection_size_capped_by_total() {
        let body = BodyMap::single(NodeId(0), Capabilities::default());
        let poses = body.world_poses(Pose2::IDENTITY);
        assert_eq!(closest_leds(&body, &poses, &LedRing::default(), Vec2::ZERO, 40).len(), 12);
    }

    #[test]
    fn dock_tolerance() {
        let target = Pose2::new(1.0, 1.0, 0.3);
        assert!(dock_feasible(&target, &target, 0.02, 0.1));
        assert!(!dock_feasible(&Pose2::new(1.04, 1.0, 0.3), &target, 0.02, 0.1));
        assert!(dock_feasible(&Pose2::new(1.0, 1.0, 0.3), &Pose2::new(1.0, 1.0, 0.3), 0.0, 0.0));
        // Closed boundary: exactly eps away.
        assert!(dock_feasible(&Pose2::new(0.5, 0.0, 0.0), &Pose2::new(0.0, 0.0, 0.0), 0.5, 0.1));
        assert!(!dock_feasible(&target, &Pose2::new(1.0, 1.0, 0.5), 0.02, 0.1));
    }

    #[test]
    fn physics_attach_detach_reroot() {
        let mut phys = PhysicsState::default();
        phys.add_body(BodyMap::single(NodeId(0), Capabilities::default()), Pose2::IDENTITY);
        phys.add_body(BodyMap::single(NodeId(1), Capabilities::default()), mate_pose(PortId(0), PortId(4)));
        phys.attach(NodeId(0), PortId(0), NodeId(1), PortId(4)).unwrap();
        assert!(phys.mated(NodeId(0), NodeId(1)));
        assert_eq!(phys.bodies.len(), 1);
        let before = phys.world_poses();
        phys.reroot(NodeId(1)).unwrap();
        for (id, p) in phys.world_poses() {
            assert!(p.approx_eq(&before[&id], 1e-12));
        }
        assert_eq!(phys.detach(NodeId(0)).unwrap(), NodeId(1));
        assert!(!phys.mated(NodeId(0), NodeId(1)));
        assert_eq!(phys.bodies.len(), 2);
    }

    #[test]
    fn stimulus_path_interpolates() {
        let path = StimulusPath {
            waypoints: vec![(SimTime::from_secs(1.0), Vec2::new(0.0, 0.0)), (SimTime::from_secs(3.0), Vec2::new(2.0, 0.0))],
        };
        assert_eq!(path.position_at(SimTime::ZERO), Some(Vec2::new(0.0, 0.0)));
        assert_eq!(path.position_at(SimTime::from_secs(2.0)), Some(Vec2::new(1.0, 0.0)));
        assert_eq!(path.position_at(SimTime::from_secs(9.0)), Some(Vec2::new(2.0, 0.0)));
        assert_eq!(StimulusPath::default().position_at(SimTime::ZERO), None);
    }
}
