//! Closed-loop simulation of a remotely configurable PCC Vivace sender and the
//! cloud-side contextual continuum-armed bandit that tunes it.
//!
//! The loop is: the [`customizer`] proposes a configuration for every
//! (aggregate, context) pair, the [`harness`] deploys it to [`vivace`] senders
//! running over the [`netsim`] bottleneck, per-second telemetry is rolled up by
//! [`stats`], scored by [`rewards`], and fed back to the customizer.
//!
//! Everything is deterministic given the scenario seed.

pub mod baseline;
pub mod customizer;
pub mod error;
pub mod harness;
pub mod json;
pub mod netsim;
pub mod rewards;
pub mod stats;
pub mod vivace;

pub use error::{Error, Result};

/// Default packet size on the wire, bytes.
pub const DEFAULT_PACKET_BYTES: u32 = 1500;
