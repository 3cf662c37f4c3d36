//! Scenario files: robots, named templates, parameters and a timed script.
//!
//! ```toml
//! name = "pair"
//! seed = 1
//! until = 20.0
//!
//! [params]
//! latency = 0.01
//!
//! [[robots]]
//! id = 0
//! pose = [0.0, 0.0, 0.0]
//!
//! [[robots]]
//! id = 1
//! pose = [0.5, 0.0, 0.0]
//!
//! [templates.pair]
//! shape = "chain"
//! size = 2
//!
//! [[script]]
//! at = 0.0
//! action = "form"
//! template = "pair"
//! recruiter = 0
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use vns_core::behavior::{MorphologyTemplate, TemplateSlot};
use vns_core::{Capabilities, NodeId, Pose2, SimTime};

use crate::params::{ParamError, Params};
use crate::world::World;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Form { template: String, recruiter: NodeId },
    Split { template_a: String, template_b: String },
    /// Body of `a` docks onto body of `b`; `b`'s brain leads the result.
    MergeBodies { a: NodeId, b: NodeId },
    InjectFault { node: NodeId },
    /// `[t, x, y]` triples, absolute times.
    StimulusPath { waypoints: Vec<[f64; 3]> },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Form { .. } => "form",
            Action::Split { .. } => "split",
            Action::MergeBodies { .. } => "merge_bodies",
            Action::InjectFault { .. } => "inject_fault",
            Action::StimulusPath { .. } => "stimulus_path",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptItem {
    pub at: f64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: NodeId,
    /// `[x, y, theta]`.
    pub pose: [f64; 3],
    #[serde(default)]
    pub caps: Option<Capabilities>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Chain,
    Star,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum TemplateSpec {
    Shape { shape: Shape, size: usize },
    Slots { slots: Vec<TemplateSlot> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    until: Option<f64>,
    #[serde(default)]
    params: Params,
    #[serde(default)]
    robots: Vec<RobotSpec>,
    #[serde(default)]
    templates: BTreeMap<String, TemplateSpec>,
    #[serde(default)]
    script: Vec<ScriptItem>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub until: Option<f64>,
    pub params: Params,
    pub robots: Vec<RobotSpec>,
    pub templates: BTreeMap<String, MorphologyTemplate>,
    pub script: Vec<ScriptItem>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}

impl From<ParamError> for ScenarioError {
    fn from(e: ParamError) -> Self {
        ScenarioError::Validation(vec![e.to_string()])
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0);
        ScenarioError::Parse { line, msg: e.message().to_string() }
    })?;
    let mut problems = Vec::new();
    let mut templates = BTreeMap::new();
    for (name, spec) in raw.templates {
        let t = match spec {
            TemplateSpec::Shape { shape: Shape::Chain, size } => MorphologyTemplate::chain(&name, size),
            TemplateSpec::Shape { shape: Shape::Star, size } => MorphologyTemplate::star(&name, size.saturating_sub(1)),
            TemplateSpec::Slots { slots } => MorphologyTemplate { name: name.clone(), slots },
        };
        if let Err(e) = t.validate() {
            problems.push(format!("template {name}: {e}"));
        }
        templates.insert(name, t);
    }
    let s = Scenario {
        name: raw.name,
        seed: raw.seed,
        until: raw.until,
        params: raw.params,
        robots: raw.robots,
        templates,
        script: raw.script,
    };
    problems.extend(s.problems());
    if problems.is_empty() {
        Ok(s)
    } else {
        Err(ScenarioError::Validation(problems))
    }
}

/// Canonical text form; `parse_scenario` reads it back unchanged.
pub fn serialize_scenario(s: &Scenario) -> String {
    let raw = RawScenario {
        name: s.name.clone(),
        seed: s.seed,
        until: s.until,
        params: s.params.clone(),
        robots: s.robots.clone(),
        templates: s.templates.iter().map(|(k, t)| (k.clone(), TemplateSpec::Slots { slots: t.slots.clone() })).collect(),
        script: s.script.clone(),
    };
    toml::to_string(&raw).expect("scenario serializes")
}

impl Scenario {
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.params.validate() {
            out.push(e.to_string());
        }
        if self.until.is_some_and(|u| u.is_nan() || u < 0.0) {
            out.push("until must be nonnegative".into());
        }
        let mut ids = BTreeSet::new();
        for r in &self.robots {
            if !ids.insert(r.id) {
                out.push(format!("robot {} defined twice", r.id));
            }
            if r.pose.iter().any(|v| !v.is_finite()) {
                out.push(format!("robot {} has a non-finite pose", r.id));
            }
        }
        let robot = |id: &NodeId, out: &mut Vec<String>| {
            if !ids.contains(id) {
                out.push(format!("unknown robot {id}"));
            }
        };
        let template = |name: &String, out: &mut Vec<String>| {
            if !self.templates.contains_key(name) {
                out.push(format!("unknown template {name:?}"));
            }
        };
        let mut last = 0.0;
        for (i, item) in self.script.iter().enumerate() {
            if item.at.is_nan() || item.at < last {
                out.push(format!("script item {i} at {} goes back in time", item.at));
            }
            last = item.at.max(last);
            match &item.action {
                Action::Form { template: t, recruiter } => {
                    template(t, &mut out);
                    robot(recruiter, &mut out);
                }
                Action::Split { template_a, template_b } => {
                    template(template_a, &mut out);
                    template(template_b, &mut out);
                }
                Action::MergeBodies { a, b } => {
                    robot(a, &mut out);
                    robot(b, &mut out);
                    if a == b {
                        out.push(format!("script item {i} merges robot {a} with itself"));
                    }
                }
                Action::InjectFault { node } => robot(node, &mut out),
                Action::StimulusPath { waypoints } => {
                    if waypoints.is_empty() {
                        out.push(format!("script item {i} has an empty stimulus path"));
                    }
                    if waypoints.windows(2).any(|w| w[1][0].partial_cmp(&w[0][0]).is_none_or(|o| o.is_lt())) {
                        out.push(format!("script item {i} has stimulus waypoints out of order"));
                    }
                }
            }
        }
        out
    }

    /// A world loaded with this scenario's robots and script.
    pub fn build_world(&self, seed: u64) -> World {
        let mut w = World::new(self.params.clone(), seed);
        for r in &self.robots {
            w.add_robot(r.id, r.caps.unwrap_or_default(), Pose2::new(r.pose[0], r.pose[1], r.pose[2]))
                .expect("validated robots are distinct");
        }
        let script = self.script.iter().map(|i| (SimTime::from_secs(i.at), i.action.clone())).collect();
        w.load_script(script, self.templates.clone());
        w.snapshot();
        w
    }

    /// End of the run: `until` if given, else just after the last action
    /// plus the recovery allowance.
    pub fn default_until(&self) -> f64 {
        self.until.unwrap_or_else(|| self.script.last().map_or(0.0, |i| i.at) + self.params.t_recover)
    }
}
