//! Line-delimited JSON trace: one record per line, keys in a fixed order.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vns_core::{NodeId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceKind {
    MsgSend,
    MsgDeliver,
    MsgDrop,
    RoleChange,
    Attach,
    Detach,
    FaultInjected,
    FaultDetected,
    LedSet,
    Command,
    CheckPass,
    CheckFail,
    /// Poses, edges and brains of every body.
    Snapshot,
    /// Behavior mode change of a brain.
    Mode,
    Violation,
    /// Progress of scripted actions.
    Milestone,
    /// Protocol quiescence reached; carries the component summary.
    Quiescent,
    End,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub node: Option<u32>,
    pub kind: TraceKind,
    #[serde(default)]
    pub data: Value,
}

impl TraceRecord {
    pub fn time(&self) -> SimTime {
        SimTime::from_secs(self.t)
    }

    pub fn field(&self, key: &str) -> Option<&Value> {
        self.data.get(key)
    }

    pub fn u32_field(&self, key: &str) -> Option<u32> {
        self.data.get(key)?.as_u64().map(|v| v as u32)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, Default)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, t: SimTime, node: Option<NodeId>, kind: TraceKind, data: Value) {
        self.records.push(TraceRecord { t: t.as_secs(), node: node.map(|n| n.0), kind, data });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

/// Parses a JSONL trace; blank lines are skipped.
pub fn parse_jsonl(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: TraceRecord =
            serde_json::from_str(line).map_err(|e| TraceError::Malformed { line: i + 1, msg: e.to_string() })?;
        out.push(r);
    }
    Ok(out)
}
