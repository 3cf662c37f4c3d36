#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use vns_core::topology::PORT_COUNT;
use vns_core::{BodyMap, Capabilities, NodeId, Pose2, PortId, SubtreeDescription};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

pub const SHIPPED: [&str; 5] = ["fig1e", "fig2", "fig3", "excise", "lossy"];

/// Random tree over `ids`, each new module docked at a random free port of
/// a random earlier module with a random port of its own.
pub fn random_body<R: Rng>(rng: &mut R, ids: &[NodeId]) -> BodyMap {
    let mut body = BodyMap::single(ids[0], Capabilities::default());
    for &id in &ids[1..] {
        loop {
            let existing = body.tree.node_ids();
            let parent = existing[rng.random_range(0..existing.len())];
            let free = body.free_ports(parent).unwrap();
            if free.is_empty() {
                continue;
            }
            let port = free[rng.random_range(0..free.len())];
            let entry = PortId(rng.random_range(0..PORT_COUNT));
            body = body.attach_subtree(parent, port, entry, SubtreeDescription::leaf(id, Capabilities::default())).unwrap();
            break;
        }
    }
    body
}

/// World poses by walking the tree, written independently of the library.
pub fn oracle_poses(tree: &SubtreeDescription, root: Pose2) -> BTreeMap<NodeId, Pose2> {
    fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
        let (s, c) = a.theta.sin_cos();
        Pose2 { x: a.x + c * b.x - s * b.y, y: a.y + s * b.x + c * b.y, theta: a.theta + b.theta }
    }
    let mut out = BTreeMap::new();
    let mut stack = vec![(tree, root)];
    while let Some((n, p)) = stack.pop() {
        out.insert(n.root, p);
        for c in &n.children {
            // Child sits one diameter out along the parent's port and faces back
            // through its own entry port.
            let a = c.via_port.0 as f64 * std::f64::consts::FRAC_PI_4;
            let rel = Pose2 {
                x: 0.17 * a.cos(),
                y: 0.17 * a.sin(),
                theta: a + std::f64::consts::PI - c.entry_port.0 as f64 * std::f64::consts::FRAC_PI_4,
            };
            stack.push((&c.sub, compose(&p, &rel)));
        }
    }
    out
}

/// Depth of every node below the root, from the tree itself.
pub fn depths(tree: &SubtreeDescription) -> BTreeMap<NodeId, usize> {
    let mut out = BTreeMap::new();
    let mut stack = vec![(tree, 0usize)];
    while let Some((n, d)) = stack.pop() {
        out.insert(n.root, d);
        stack.extend(n.children.iter().map(|c| (&c.sub, d + 1)));
    }
    out
}
