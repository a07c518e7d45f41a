//! Pure control laws of the sender: utility, gradient, step sizing, slow
//! start, early decisions and emergency brakes.

use super::{MonitorIntervalStats, VivaceConfig};
use crate::{Error, Result};

/// `alpha·x^delta − beta·x·L − gamma·x·dRTT/dt`, with `x` in Mbps. Loss below
/// `loss_filter` and RTT gradients smaller in magnitude than `latency_filter`
/// are treated as zero.
pub fn utility(cfg: &VivaceConfig, rate_mbps: f64, loss_rate: f64, rtt_gradient: f64) -> f64 {
    if rate_mbps <= 0.0 {
        return 0.0;
    }
    let loss = if loss_rate < cfg.loss_filter { 0.0 } else { loss_rate };
    let grad = if rtt_gradient.abs() < cfg.latency_filter {
        0.0
    } else {
        rtt_gradient
    };
    cfg.alpha * rate_mbps.powf(cfg.delta) - cfg.beta * rate_mbps * loss - cfg.gamma * rate_mbps * grad
}

/// Finite-difference utility gradient between two consecutive MIs, taken as
/// the gradient at their midpoint rate. Rates in Mbps.
pub fn unified_gradient(prev: (f64, f64), cur: (f64, f64)) -> Result<f64> {
    let ((r1, u1), (r2, u2)) = (prev, cur);
    let dr = r2 - r1;
    if dr == 0.0 || dr.abs() <= 1e-12 * r1.abs().max(r2.abs()) {
        return Err(Error::DegenerateGradient { rate: r1 });
    }
    Ok((u2 - u1) / dr)
}

/// Step-size amplification state: consecutive same-sign gradients double the
/// effective step, a sign flip resets it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepState {
    pub last_sign: i8,
    pub doublings: u32,
}

impl StepState {
    pub fn omega_eff(&self, cfg: &VivaceConfig) -> f64 {
        cfg.omega * f64::from(1u32 << self.doublings.min(30))
    }

    pub fn reset(&mut self) {
        *self = StepState::default();
    }
}

/// Gradient-ascent rate update. Returns the new rate in bits/second.
pub fn rate_update(rate: f64, cfg: &VivaceConfig, step: &mut StepState, xi: f64) -> f64 {
    if xi == 0.0 || !xi.is_finite() {
        return rate.clamp(cfg.rate_min, cfg.rate_max);
    }
    let sign: i8 = if xi > 0.0 { 1 } else { -1 };
    if step.last_sign == sign {
        step.doublings = (step.doublings + 1).min(cfg.max_step_doublings);
    } else {
        step.doublings = 0;
    }
    step.last_sign = sign;
    let limit = cfg.max_step_fraction * rate;
    let delta = (step.omega_eff(cfg) * xi * 1e6).clamp(-limit, limit);
    (rate + delta).clamp(cfg.rate_min, cfg.rate_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlowStartStep {
    Continue { rate: f64 },
    Exit { rate: f64 },
}

/// One slow-start decision after MI `mi` resolves at current rate `rate`.
pub fn slow_start_step(rate: f64, cfg: &VivaceConfig, mi: &MonitorIntervalStats) -> SlowStartStep {
    let inflated = mi.min_rtt > 0.0 && mi.avg_rtt / mi.min_rtt >= cfg.ss_exit_latency;
    if mi.loss_rate >= cfg.ss_exit_loss || inflated {
        return SlowStartStep::Exit {
            rate: mi.throughput.clamp(cfg.rate_min, cfg.rate_max),
        };
    }
    let cap = cfg.ss_max_rate.min(cfg.rate_max).max(cfg.rate_min);
    if rate >= cap {
        return SlowStartStep::Exit { rate: cap };
    }
    SlowStartStep::Continue {
        rate: (2.0 * rate).min(cap),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyDecision {
    DecideNow,
    Wait,
}

/// Early decisions are allowed only once enough ACKs are in and only when they
/// would lower the rate.
pub fn early_decision(acked: u32, expected_acks: u32, provisional_xi: f64, fraction: f64) -> EarlyDecision {
    let needed = (fraction * f64::from(expected_acks)).ceil().max(1.0) as u32;
    if acked >= needed && provisional_xi < 0.0 {
        EarlyDecision::DecideNow
    } else {
        EarlyDecision::Wait
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BrakeAction {
    NoAction,
    Brake { rate: f64 },
}

/// Emergency brake on extreme loss, latency, or sending-rate/throughput gap.
pub fn emergency_brake(mi: &MonitorIntervalStats, cfg: &VivaceConfig, min_rtt: f64) -> BrakeAction {
    let lossy = mi.loss_rate > cfg.brake_loss;
    let slow = min_rtt > 0.0 && mi.avg_rtt > cfg.brake_latency_ratio * min_rtt;
    let gap = !mi.app_limited && mi.rate > cfg.brake_tpt_gap_ratio * mi.throughput;
    if lossy || slow || gap {
        BrakeAction::Brake {
            rate: (0.5 * mi.throughput).max(cfg.rate_min),
        }
    } else {
        BrakeAction::NoAction
    }
}
