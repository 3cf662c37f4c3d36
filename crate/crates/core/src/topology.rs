//! Connection trees of composite bodies.
//!
//! A body is a rooted tree of modules. Every edge records which port of the
//! parent is mated with which port of the child, plus the child's frame in
//! the parent frame. The root is the brain.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::geometry::{Pose2, Vec2};

/// Module disk diameter in meters.
pub const MODULE_DIAMETER: f64 = 0.17;
/// Module disk radius in meters.
pub const MODULE_RADIUS: f64 = MODULE_DIAMETER / 2.0;
/// Docking ports per module, equally spaced around the rim.
pub const PORT_COUNT: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct PortId(pub u8);

impl PortId {
    pub fn is_valid(self) -> bool {
        self.0 < PORT_COUNT
    }

    /// Outward direction of the port in the module frame.
    pub fn angle(self) -> f64 {
        2.0 * PI * f64::from(self.0) / f64::from(PORT_COUNT)
    }

    /// Port frame in the module frame: on the rim, x axis facing outward.
    pub fn offset(self) -> Pose2 {
        let a = self.angle();
        let p = Vec2::from_polar(MODULE_RADIUS, a);
        Pose2::new(p.x, p.y, a)
    }

    pub fn all() -> impl Iterator<Item = PortId> {
        (0..PORT_COUNT).map(PortId)
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Child frame in the parent frame when `parent_port` is mated with
/// `child_port`: the disks touch and the two ports face each other.
pub fn mate_pose(parent_port: PortId, child_port: PortId) -> Pose2 {
    let a = parent_port.angle();
    let c = Vec2::from_polar(MODULE_DIAMETER, a);
    Pose2::new(c.x, c.y, a + PI - child_port.angle())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Capabilities {
    pub has_wheels: bool,
    pub led_count: u32,
    pub has_stimulus_sensor: bool,
    pub has_gripper: bool,
}

impl Default for Capabilities {
    fn default() -> Self {
        Capabilities { has_wheels: true, led_count: 12, has_stimulus_sensor: true, has_gripper: true }
    }
}

/// A node's description of itself and everything below it.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubtreeDescription {
    pub root: NodeId,
    pub caps: Capabilities,
    /// Kept sorted by `via_port`.
    pub children: Vec<ChildLink>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChildLink {
    /// Port on the parent.
    pub via_port: PortId,
    /// Port on the child.
    pub entry_port: PortId,
    /// Child frame in the parent frame.
    pub relative_pose: Pose2,
    pub sub: SubtreeDescription,
}

impl ChildLink {
    pub fn mated(via_port: PortId, entry_port: PortId, sub: SubtreeDescription) -> Self {
        ChildLink { via_port, entry_port, relative_pose: mate_pose(via_port, entry_port), sub }
    }
}

impl SubtreeDescription {
    pub fn leaf(root: NodeId, caps: Capabilities) -> Self {
        SubtreeDescription { root, caps, children: Vec::new() }
    }

    pub fn len(&self) -> usize {
        1 + self.children.iter().map(|c| c.sub.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node ids in pre-order.
    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.collect_ids(&mut out);
        out
    }

    fn collect_ids(&self, out: &mut Vec<NodeId>) {
        out.push(self.root);
        for c in &self.children {
            c.sub.collect_ids(out);
        }
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.find(id).is_some()
    }

    pub fn find(&self, id: NodeId) -> Option<&SubtreeDescription> {
        if self.root == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.sub.find(id))
    }

    pub fn find_mut(&mut self, id: NodeId) -> Option<&mut SubtreeDescription> {
        if self.root == id {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.sub.find_mut(id))
    }

    /// Child-index path from this node down to `id`.
    pub fn path_to(&self, id: NodeId) -> Option<Vec<usize>> {
        if self.root == id {
            return Some(Vec::new());
        }
        for (i, c) in self.children.iter().enumerate() {
            if let Some(mut rest) = c.sub.path_to(id) {
                rest.insert(0, i);
                return Some(rest);
            }
        }
        None
    }

    /// Edges from this node down to `id`, or `None` if absent.
    pub fn depth_of(&self, id: NodeId) -> Option<usize> {
        self.path_to(id).map(|p| p.len())
    }

    /// Index of the child whose subtree contains `id` (not this node itself).
    pub fn child_toward(&self, id: NodeId) -> Option<usize> {
        self.children.iter().position(|c| c.sub.contains(id))
    }

    pub fn child_at_port(&self, port: PortId) -> Option<&ChildLink> {
        self.children.iter().find(|c| c.via_port == port)
    }

    /// Inserts keeping the children sorted by `via_port`.
    pub fn insert_child(&mut self, link: ChildLink) {
        let at = self.children.partition_point(|c| c.via_port < link.via_port);
        self.children.insert(at, link);
    }

    /// Ports used by children of this node.
    pub fn child_ports(&self) -> impl Iterator<Item = PortId> + '_ {
        self.children.iter().map(|c| c.via_port)
    }

    /// `(parent, child)` pairs in pre-order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        self.collect_edges(&mut out);
        out
    }

    fn collect_edges(&self, out: &mut Vec<(NodeId, NodeId)>) {
        for c in &self.children {
            out.push((self.root, c.sub.root));
            c.sub.collect_edges(out);
        }
    }

    /// Undirected edge set, each edge stored as `(min, max)`.
    pub fn undirected_edges(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.edges().into_iter().map(|(a, b)| if a < b { (a, b) } else { (b, a) }).collect()
    }

    /// Structural equality with poses compared to within `tol`.
    pub fn approx_eq(&self, other: &SubtreeDescription, tol: f64) -> bool {
        self.root == other.root
            && self.caps == other.caps
            && self.children.len() == other.children.len()
            && self.children.iter().zip(&other.children).all(|(a, b)| {
                a.via_port == b.via_port
                    && a.entry_port == b.entry_port
                    && a.relative_pose.approx_eq(&b.relative_pose, tol)
                    && a.sub.approx_eq(&b.sub, tol)
            })
    }
}

/// The ground-truth tree of one composite body. The tree root is the brain.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BodyMap {
    pub tree: SubtreeDescription,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("unknown parent {0}")]
    UnknownParent(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("port {port} of node {node} is occupied")]
    PortOccupied { node: NodeId, port: PortId },
    #[error("port {port} of node {node} does not exist")]
    PortOutOfRange { node: NodeId, port: PortId },
    #[error("node id {0} appears twice")]
    DuplicateNodeId(NodeId),
    #[error("cannot detach the root {0}")]
    CannotDetachRoot(NodeId),
}

/// A structural problem reported by [`BodyMap::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    DuplicateNodeId(NodeId),
    PortOccupied { node: NodeId, port: PortId },
    PortOutOfRange { node: NodeId, port: PortId },
}

impl BodyMap {
    pub fn single(id: NodeId, caps: Capabilities) -> Self {
        BodyMap { tree: SubtreeDescription::leaf(id, caps) }
    }

    pub fn from_tree(tree: SubtreeDescription) -> Self {
        BodyMap { tree }
    }

    pub fn root(&self) -> NodeId {
        self.tree.root
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.tree.contains(id)
    }

    pub fn subtree(&self, id: NodeId) -> Option<&SubtreeDescription> {
        self.tree.find(id)
    }

    /// Parent of `id` with the parent's port and the child's entry port.
    pub fn parent_of(&self, id: NodeId) -> Option<(NodeId, PortId, PortId)> {
        fn go(n: &SubtreeDescription, id: NodeId) -> Option<(NodeId, PortId, PortId)> {
            for c in &n.children {
                if c.sub.root == id {
                    return Some((n.root, c.via_port, c.entry_port));
                }
                if let Some(hit) = go(&c.sub, id) {
                    return Some(hit);
                }
            }
            None
        }
        go(&self.tree, id)
    }

    /// All ports of `id` that hold a connection, including the one leading
    /// to its parent.
    pub fn used_ports(&self, id: NodeId) -> Option<BTreeSet<PortId>> {
        let node = self.tree.find(id)?;
        let mut used: BTreeSet<PortId> = node.child_ports().collect();
        if let Some((_, _, entry)) = self.parent_of(id) {
            used.insert(entry);
        }
        Some(used)
    }

    pub fn free_ports(&self, id: NodeId) -> Option<Vec<PortId>> {
        let used = self.used_ports(id)?;
        Some(PortId::all().filter(|p| !used.contains(p)).collect())
    }

    /// Empty iff ids are distinct, every port index exists and no port
    /// carries two connections. Single root, acyclicity and connectivity
    /// hold structurally for an owned tree; duplicate ids are how a cycle
    /// would show up.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        validate_node(&self.tree, None, &mut seen, &mut out);
        out
    }

    /// Grafts `sub` under `parent`, mating `parent_port` with `child_entry_port`.
    pub fn attach_subtree(
        &self,
        parent: NodeId,
        parent_port: PortId,
        child_entry_port: PortId,
        sub: SubtreeDescription,
    ) -> Result<BodyMap, TopologyError> {
        if !self.contains(parent) {
            return Err(TopologyError::UnknownParent(parent));
        }
        if !parent_port.is_valid() {
            return Err(TopologyError::PortOutOfRange { node: parent, port: parent_port });
        }
        if !child_entry_port.is_valid() {
            return Err(TopologyError::PortOutOfRange { node: sub.root, port: child_entry_port });
        }
        let existing: BTreeSet<NodeId> = self.tree.node_ids().into_iter().collect();
        if let Some(dup) = sub.node_ids().into_iter().find(|id| existing.contains(id)) {
            return Err(TopologyError::DuplicateNodeId(dup));
        }
        let used = self.used_ports(parent).unwrap_or_default();
        if used.contains(&parent_port) {
            return Err(TopologyError::PortOccupied { node: parent, port: parent_port });
        }
        if sub.child_ports().any(|p| p == child_entry_port) {
            return Err(TopologyError::PortOccupied { node: sub.root, port: child_entry_port });
        }
        let mut out = self.clone();
        let node = out.tree.find_mut(parent).ok_or(TopologyError::UnknownParent(parent))?;
        node.insert_child(ChildLink::mated(parent_port, child_entry_port, sub));
        Ok(out)
    }

    /// Splits off the subtree rooted at `node`.
    pub fn detach_subtree(&self, node: NodeId) -> Result<(BodyMap, SubtreeDescription), TopologyError> {
        if node == self.root() {
            return Err(TopologyError::CannotDetachRoot(node));
        }
        let (parent, _, _) = self.parent_of(node).ok_or(TopologyError::UnknownNode(node))?;
        let mut rest = self.clone();
        let p = rest.tree.find_mut(parent).ok_or(TopologyError::UnknownNode(parent))?;
        let idx = p.children.iter().position(|c| c.sub.root == node).ok_or(TopologyError::UnknownNode(node))?;
        let link = p.children.remove(idx);
        Ok((rest, link.sub))
    }

    /// Same tree with `new_root` as root. Edges on the old-root to new-root
    /// path flip direction; their ports swap and their poses invert.
    pub fn reroot(&self, new_root: NodeId) -> Result<BodyMap, TopologyError> {
        if !self.contains(new_root) {
            return Err(TopologyError::UnknownNode(new_root));
        }
        Ok(BodyMap { tree: reroot_tree(self.tree.clone(), new_root, None) })
    }

    /// World pose of every module given the root's world pose.
    pub fn world_poses(&self, root_world_pose: Pose2) -> BTreeMap<NodeId, Pose2> {
        let mut out = BTreeMap::new();
        fill_poses(&self.tree, root_world_pose, &mut out);
        out
    }
}

fn validate_node(
    n: &SubtreeDescription,
    entry: Option<PortId>,
    seen: &mut BTreeSet<NodeId>,
    out: &mut Vec<Violation>,
) {
    if !seen.insert(n.root) {
        out.push(Violation::DuplicateNodeId(n.root));
    }
    let mut used = BTreeSet::new();
    if let Some(e) = entry {
        used.insert(e);
    }
    for c in &n.children {
        if !c.via_port.is_valid() {
            out.push(Violation::PortOutOfRange { node: n.root, port: c.via_port });
        } else if !used.insert(c.via_port) {
            out.push(Violation::PortOccupied { node: n.root, port: c.via_port });
        }
        if !c.entry_port.is_valid() {
            out.push(Violation::PortOutOfRange { node: c.sub.root, port: c.entry_port });
        }
        validate_node(&c.sub, Some(c.entry_port), seen, out);
    }
}

/// `hanging` is the already re-rooted upper part that must become a child
/// of `sub.root`.
fn reroot_tree(mut sub: SubtreeDescription, target: NodeId, hanging: Option<ChildLink>) -> SubtreeDescription {
    if let Some(h) = hanging {
        sub.insert_child(h);
    }
    if sub.root == target {
        return sub;
    }
    let i = sub.child_toward(target).expect("target below the current path node");
    let down = sub.children.remove(i);
    let up = ChildLink {
        via_port: down.entry_port,
        entry_port: down.via_port,
        relative_pose: down.relative_pose.inverse(),
        sub,
    };
    reroot_tree(down.sub, target, Some(up))
}

fn fill_poses(n: &SubtreeDescription, pose: Pose2, out: &mut BTreeMap<NodeId, Pose2>) {
    out.insert(n.root, pose);
    for c in &n.children {
        fill_poses(&c.sub, pose.compose(&c.relative_pose), out);
    }
}
