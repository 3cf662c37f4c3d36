//! Deterministic simulator for composite robots whose modules merge and
//! split their nervous systems: event loop, kinematics glue, scripted
//! scenarios, trace checking and SVG replay.

pub mod check;
pub mod cli;
pub mod director;
pub mod params;
pub mod scenario;
pub mod svg;
pub mod trace;
pub mod world;

pub use params::Params;
pub use scenario::{parse_scenario, serialize_scenario, Action, Scenario};
pub use trace::{Trace, TraceKind, TraceRecord};
pub use world::{SimError, World};
