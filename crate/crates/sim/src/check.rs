//! Offline re-verification of a recorded trace.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use crate::trace::{TraceKind, TraceRecord};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
    pub merges: usize,
    pub splits: usize,
    pub quiescent_points: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn payload(r: &TraceRecord) -> Option<&Value> {
    r.field("payload")
}

fn payload_type(r: &TraceRecord) -> Option<&str> {
    payload(r)?.get("type")?.as_str()
}

fn is_structural(ty: &str) -> bool {
    matches!(ty, "MergeAnnounce" | "SplitNotice" | "DetachOrder" | "CedeOrder")
}

/// `(ceding root, hop count)` of a `MergeAnnounce` send.
fn announce(r: &TraceRecord) -> Option<(u32, usize)> {
    if r.kind != TraceKind::MsgSend || payload_type(r) != Some("MergeAnnounce") {
        return None;
    }
    let p = payload(r)?;
    let root = p.get("sub")?.get("root")?.as_u64()? as u32;
    let hops = p.get("via_port_chain")?.as_array()?.len();
    Some((root, hops))
}

fn id_list(v: Option<&Value>) -> BTreeSet<u32> {
    v.and_then(Value::as_array).map(|a| a.iter().filter_map(|x| x.as_u64()).map(|x| x as u32).collect()).unwrap_or_default()
}

/// Single-message merges, silent detached sides, one brain per component
/// at quiescence, per-link FIFO delivery, and no failed in-run checks.
pub fn check_records(records: &[TraceRecord]) -> CheckReport {
    let mut rep = CheckReport::default();
    if records.is_empty() {
        rep.warnings.push("empty trace: nothing to check".into());
        return rep;
    }
    for w in records.windows(2) {
        if w[1].t < w[0].t {
            rep.failures.push(format!("time goes back from {} to {}", w[0].t, w[1].t));
        }
    }
    let next_quiescent = |from: usize| {
        records[from..].iter().position(|r| r.kind == TraceKind::Quiescent).map_or(records.len(), |p| from + p)
    };

    let mut matched_origins = BTreeSet::new();
    for (i, r) in records.iter().enumerate().filter(|(_, r)| r.kind == TraceKind::Attach) {
        rep.merges += 1;
        let (Some(child), Some(depth)) = (r.u32_field("child"), r.u32_field("parent_depth")) else {
            rep.failures.push(format!("Attach at t={} lacks child or parent_depth", r.t));
            continue;
        };
        let end = records[i + 1..]
            .iter()
            .position(|x| x.kind == TraceKind::Attach && x.u32_field("child") == Some(child))
            .map_or(records.len(), |p| i + 1 + p);
        let mut origins = 0;
        let mut relays = 0;
        for (j, x) in records.iter().enumerate().take(end).skip(i + 1) {
            match announce(x) {
                Some((root, 0)) if root == child => {
                    origins += 1;
                    matched_origins.insert(j);
                }
                Some((root, _)) if root == child => relays += 1,
                _ => {}
            }
        }
        if origins != 1 {
            rep.failures.push(format!("merge of {child} at t={}: {origins} MergeAnnounce originations", r.t));
        }
        if relays > depth as usize {
            rep.failures.push(format!("merge of {child} at t={}: {relays} relays for attachment depth {depth}", r.t));
        }
    }
    for (j, x) in records.iter().enumerate() {
        if matches!(announce(x), Some((_, 0))) && !matched_origins.contains(&j) {
            rep.failures.push(format!("MergeAnnounce at t={} from {:?} has no matching attach", x.t, x.node));
        }
    }

    for (i, r) in records.iter().enumerate().filter(|(_, r)| r.kind == TraceKind::Detach) {
        rep.splits += 1;
        let detached = id_list(r.field("detached"));
        let child = r.u32_field("child");
        let end = next_quiescent(i);
        let start = records[..i].iter().rposition(|x| x.t < r.t).map_or(0, |p| p + 1);
        for x in &records[i + 1..end] {
            if matches!(x.kind, TraceKind::Attach | TraceKind::Detach)
                && [x.u32_field("child"), x.u32_field("parent")].iter().flatten().any(|n| detached.contains(n))
            {
                break;
            }
            let from_detached = x.node.is_some_and(|n| detached.contains(&n));
            if x.kind == TraceKind::MsgSend && from_detached && payload_type(x).is_some_and(is_structural) {
                rep.failures.push(format!(
                    "split of {child:?} at t={}: detached side sent {} at t={}",
                    r.t,
                    payload_type(x).unwrap_or("?"),
                    x.t
                ));
            }
        }
        if let Some(expected) = r.u32_field("notice_hops") {
            let notices = records[start..end]
                .iter()
                .filter(|x| {
                    x.kind == TraceKind::MsgSend
                        && payload_type(x) == Some("SplitNotice")
                        && payload(x).and_then(|p| p.get("detached_root")).and_then(Value::as_u64).map(|v| v as u32) == child
                })
                .count();
            if notices != expected as usize {
                rep.failures.push(format!("split of {child:?} at t={}: {notices} SplitNotice sends, expected {expected}", r.t));
            }
        }
    }

    for r in records.iter().filter(|r| r.kind == TraceKind::Quiescent) {
        rep.quiescent_points += 1;
        let comps = r.field("components").and_then(Value::as_array).cloned().unwrap_or_default();
        for c in comps {
            let root = c.get("root").and_then(Value::as_u64);
            let brains = id_list(c.get("brains"));
            if brains.len() != 1 || root.map(|x| x as u32) != brains.first().copied() {
                rep.failures.push(format!("quiescence at t={}: component rooted at {root:?} has brains {brains:?}", r.t));
            }
        }
    }

    let mut last_mid: BTreeMap<(u64, u64), u64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.kind == TraceKind::MsgDeliver) {
        let get = |k: &str| r.field(k).and_then(Value::as_u64);
        let (Some(src), Some(dst), Some(mid)) = (get("src"), get("dst"), get("mid")) else {
            rep.failures.push(format!("MsgDeliver at t={} lacks src, dst or mid", r.t));
            continue;
        };
        if let Some(prev) = last_mid.insert((src, dst), mid) {
            if mid <= prev {
                rep.failures.push(format!("link {src}->{dst}: message {mid} delivered after {prev}"));
            }
        }
    }

    for r in records.iter().filter(|r| r.kind == TraceKind::CheckFail) {
        rep.failures.push(format!("in-run check failed at t={}: {}", r.t, r.data));
    }
    rep
}
