//! Planar multi-robot cooperative transport: simulator, distributed wrench
//! estimation over event-triggered links, multi-agent actor-critic training,
//! and evaluation metrics.

pub mod checkpoint;
pub mod comms;
pub mod config;
pub mod consensus;
pub mod env;
pub mod episode;
pub mod error;
pub mod graph;
pub mod maddpg;
pub mod metrics;
pub mod nn;
pub mod physics;
pub mod planar;
pub mod rng;

pub use error::{Error, Result};
