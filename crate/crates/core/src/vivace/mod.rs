//! Remotely configurable PCC Vivace sender.

mod config;
mod control;
mod monitor;
mod sender;

pub use config::{ParamName, VivaceConfig, VivaceOverrides};
pub use control::{
    early_decision, emergency_brake, rate_update, slow_start_step, unified_gradient, utility,
    BrakeAction, EarlyDecision, SlowStartStep, StepState,
};
pub use monitor::{least_squares_slope, mi_finalize, AckSample, MiOutcome, MiSamples, MonitorIntervalStats};
pub use sender::{DecisionKind, DecisionRecord, Phase, SenderState, VivaceSender};
