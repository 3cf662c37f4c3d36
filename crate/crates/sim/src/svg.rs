//! SVG frame export from the pose snapshots in a trace.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde_json::Value;
use vns_core::body::LedRing;
use vns_core::topology::MODULE_RADIUS;
use vns_core::Pose2;

use crate::trace::{TraceError, TraceKind, TraceRecord};

#[derive(Debug, thiserror::Error)]
pub enum SvgError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<TraceError> for SvgError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Io(e) => SvgError::Io(e),
            other => SvgError::MalformedTrace(other.to_string()),
        }
    }
}

/// Everything drawn in one frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub poses: BTreeMap<u32, Pose2>,
    pub edges: Vec<(u32, u32)>,
    pub brains: Vec<u32>,
    pub dead: Vec<u32>,
    pub leds: BTreeMap<u32, u32>,
    pub stimulus: Option<(f64, f64)>,
}

impl Frame {
    /// Number of lit LED markers drawn.
    pub fn lit_count(&self) -> usize {
        self.leds.iter().filter(|(id, _)| self.poses.contains_key(id)).map(|(_, m)| m.count_ones() as usize).sum()
    }
}

fn ids(v: Option<&Value>) -> Vec<u32> {
    v.and_then(Value::as_array).map(|a| a.iter().filter_map(Value::as_u64).map(|x| x as u32).collect()).unwrap_or_default()
}

fn parse_snapshot(r: &TraceRecord) -> Result<Frame, SvgError> {
    let bad = || SvgError::MalformedTrace(format!("bad snapshot at t={}", r.t));
    let mut f = Frame { t: r.t, ..Frame::default() };
    for p in r.field("poses").and_then(Value::as_array).ok_or_else(bad)? {
        let a = p.as_array().filter(|a| a.len() == 4).ok_or_else(bad)?;
        let n = |i: usize| a[i].as_f64().ok_or_else(bad);
        f.poses.insert(n(0)? as u32, Pose2::new(n(1)?, n(2)?, n(3)?));
    }
    for e in r.field("edges").and_then(Value::as_array).ok_or_else(bad)? {
        let e = ids(Some(e));
        if e.len() != 2 {
            return Err(bad());
        }
        f.edges.push((e[0], e[1]));
    }
    f.brains = ids(r.field("brains"));
    f.dead = ids(r.field("dead"));
    f.stimulus = r
        .field("stimulus")
        .and_then(Value::as_array)
        .and_then(|s| Some((s.first()?.as_f64()?, s.get(1)?.as_f64()?)));
    Ok(f)
}

/// Frames at `0, every, 2*every, ...` up to the last record's time, each
/// showing the latest snapshot and LED state at or before its time.
pub fn frames(records: &[TraceRecord], every: f64) -> Result<Vec<Frame>, SvgError> {
    if every.is_nan() || every <= 0.0 {
        return Err(SvgError::MalformedTrace("frame interval must be positive".into()));
    }
    let snaps: Vec<&TraceRecord> = records.iter().filter(|r| r.kind == TraceKind::Snapshot).collect();
    if snaps.is_empty() {
        return Err(SvgError::MalformedTrace("trace has no pose snapshots".into()));
    }
    let end = records.last().map_or(0.0, |r| r.t);
    let count = (end / every + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(count);
    let mut leds: BTreeMap<u32, u32> = BTreeMap::new();
    let mut li = 0;
    let led_records: Vec<&TraceRecord> = records.iter().filter(|r| r.kind == TraceKind::LedSet).collect();
    let mut si = 0;
    for k in 0..count {
        let t = k as f64 * every;
        while si + 1 < snaps.len() && snaps[si + 1].t <= t + 1e-9 {
            si += 1;
        }
        while li < led_records.len() && led_records[li].t <= t + 1e-9 {
            let r = led_records[li];
            if let (Some(n), Some(m)) = (r.node, r.u32_field("mask")) {
                leds.insert(n, m);
            }
            li += 1;
        }
        let mut f = parse_snapshot(snaps[si])?;
        f.t = t;
        f.leds = leds.iter().filter(|(_, m)| **m != 0).map(|(k, v)| (*k, *v)).collect();
        out.push(f);
    }
    Ok(out)
}

pub fn render(frame: &Frame, view: (f64, f64, f64, f64)) -> String {
    let (x0, y0, w, h) = view;
    let ring = LedRing::default();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0:.3} {:.3} {w:.3} {h:.3}" width="800" height="{:.0}">"#,
        -(y0 + h),
        800.0 * h / w
    );
    let _ = writeln!(s, r#"<rect x="{x0:.3}" y="{:.3}" width="{w:.3}" height="{h:.3}" fill="white"/>"#, -(y0 + h));
    let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" font-size="0.15">t = {:.2} s</text>"#, x0 + 0.05, -(y0 + h) + 0.2, frame.t);
    let _ = writeln!(s, r#"<g transform="scale(1,-1)">"#);
    for (a, b) in &frame.edges {
        if let (Some(p), Some(q)) = (frame.poses.get(a), frame.poses.get(b)) {
            let _ = writeln!(s, r##"<line x1="{:.4}" y1="{:.4}" x2="{:.4}" y2="{:.4}" stroke="#555" stroke-width="0.02"/>"##, p.x, p.y, q.x, q.y);
        }
    }
    for (id, p) in &frame.poses {
        let fill = if frame.dead.contains(id) {
            "#999"
        } else if frame.brains.contains(id) {
            "#f4a259"
        } else {
            "#8ecae6"
        };
        let _ = writeln!(
            s,
            r##"<circle cx="{:.4}" cy="{:.4}" r="{MODULE_RADIUS:.4}" fill="{fill}" stroke="#222" stroke-width="0.006" data-id="{id}"/>"##,
            p.x,
            p.y
        );
        let nose = p.transform_point(vns_core::Vec2::new(MODULE_RADIUS * 0.7, 0.0));
        let _ = writeln!(s, r##"<line x1="{:.4}" y1="{:.4}" x2="{:.4}" y2="{:.4}" stroke="#222" stroke-width="0.008"/>"##, p.x, p.y, nose.x, nose.y);
        let mask = frame.leds.get(id).copied().unwrap_or(0);
        for i in 0..ring.count {
            if mask & (1 << i) != 0 {
                let q = ring.world_position(p, i);
                let _ = writeln!(s, r##"<circle class="led" cx="{:.4}" cy="{:.4}" r="0.015" fill="#e63946"/>"##, q.x, q.y);
            }
        }
    }
    if let Some((x, y)) = frame.stimulus {
        let _ = writeln!(s, r##"<circle class="stimulus" cx="{x:.4}" cy="{y:.4}" r="0.05" fill="#2a9d8f"/>"##);
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn view_box(frames: &[Frame]) -> (f64, f64, f64, f64) {
    let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
    let mut grow = |x: f64, y: f64| {
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    };
    for f in frames {
        f.poses.values().for_each(|p| grow(p.x, p.y));
        if let Some((x, y)) = f.stimulus {
            grow(x, y);
        }
    }
    let m = 0.4;
    (lo.0 - m, lo.1 - m, (hi.0 - lo.0 + 2.0 * m).max(1.0), (hi.1 - lo.1 + 2.0 * m).max(1.0))
}

/// Writes `frame_0000.svg`, ... into `out_dir`; returns the frame count.
pub fn replay_svg(records: &[TraceRecord], out_dir: &Path, every: f64) -> Result<usize, SvgError> {
    let fs = frames(records, every)?;
    let view = view_box(&fs);
    std::fs::create_dir_all(out_dir)?;
    for (i, f) in fs.iter().enumerate() {
        std::fs::write(out_dir.join(format!("frame_{i:04}.svg")), render(f, view))?;
    }
    Ok(fs.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn snap(t: f64) -> TraceRecord {
        TraceRecord {
            t,
            node: None,
            kind: TraceKind::Snapshot,
            data: json!({"poses": [[0, 0.0, 0.0, 0.0], [1, 0.17, 0.0, 0.0]], "edges": [[0, 1]], "brains": [0], "dead": [], "stimulus": [1.0, 0.0]}),
        }
    }

    #[test]
    fn ten_seconds_at_half_second_is_21_frames() {
        let mut recs = vec![snap(0.0)];
        recs.push(TraceRecord { t: 10.0, node: None, kind: TraceKind::End, data: json!({}) });
        assert_eq!(frames(&recs, 0.5).unwrap().len(), 21);
    }

    #[test]
    fn no_snapshots_is_malformed() {
        let recs = vec![TraceRecord { t: 1.0, node: None, kind: TraceKind::End, data: json!({}) }];
        assert!(matches!(frames(&recs, 0.5), Err(SvgError::MalformedTrace(_))));
    }

    #[test]
    fn lit_leds_are_drawn() {
        let led = TraceRecord { t: 0.5, node: Some(1), kind: TraceKind::LedSet, data: json!({"mask": 0b111}) };
        let recs = vec![snap(0.0), led, snap(1.0)];
        let fs = frames(&recs, 0.5).unwrap();
        assert_eq!(fs[0].lit_count(), 0);
        assert_eq!(fs[1].lit_count(), 3);
        let svg = render(&fs[1], view_box(&fs));
        assert_eq!(svg.matches(r#"class="led""#).count(), 3);
        assert!(svg.contains(r#"class="stimulus""#));
    }
}
