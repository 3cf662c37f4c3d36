//! Core model of robots that merge and split their nervous systems.
//!
//! A composite body is a tree of docked modules rooted at its brain. Each
//! module keeps a description of its own subtree, which lets a detaching
//! segment become independent without rediscovering itself and lets a merge
//! be announced with a single upward message.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure data
//! model or a pure state transition; the event loop, transport and file
//! formats live in the `vns-sim` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod behavior;
pub mod body;
pub mod geometry;
pub mod protocol;
pub mod time;
pub mod topology;

pub use geometry::{normalize_angle, Pose2, Vec2};
pub use time::SimTime;
pub use topology::{BodyMap, Capabilities, ChildLink, NodeId, PortId, SubtreeDescription};
