use std::collections::VecDeque;

use super::control::{
    early_decision, emergency_brake, rate_update, slow_start_step, unified_gradient, utility,
    BrakeAction, EarlyDecision, SlowStartStep, StepState,
};
use super::monitor::{mi_finalize, AckSample, MiOutcome, MiSamples, MonitorIntervalStats};
use super::VivaceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    SlowStart,
    GradientAscent,
}

/// Relative size of the exploratory nudge used when two consecutive MIs ran
/// at the same rate and no gradient can be formed.
const PROBE_STEP: f64 = 0.05;

/// Resolved packets needed before an in-progress MI may trigger a brake.
const PROVISIONAL_BRAKE_MIN: u32 = 4;

/// Resolved packets needed before the loss trigger of a brake is trusted;
/// a couple of losses in a short MI is not an emergency.
const BRAKE_LOSS_MIN_RESOLVED: u32 = 20;

/// Consecutive lossy MIs needed before the loss trigger fires.
const BRAKE_LOSS_STREAK: u32 = 2;

fn loss_evidence(mi: &MonitorIntervalStats) -> MonitorIntervalStats {
    let mut view = mi.clone();
    if mi.packets_acked + mi.packets_lost < BRAKE_LOSS_MIN_RESOLVED {
        view.loss_rate = 0.0;
    }
    view
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionKind {
    SlowStart,
    SlowStartExit,
    Gradient,
    Probe,
    Early,
    Brake,
}

/// One rate decision, kept for audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRecord {
    pub at: f64,
    pub kind: DecisionKind,
    pub rate_before: f64,
    pub rate_after: f64,
}

#[derive(Debug, Clone)]
pub struct SenderState {
    pub phase: Phase,
    /// Rate for the next MI, bits/second.
    pub rate: f64,
    /// (rate in Mbps, utility) of the last MI that entered a gradient.
    pub prev: Option<(f64, f64)>,
    pub min_rtt: Option<f64>,
    pub srtt: Option<f64>,
    pub rttvar: f64,
    pub step: StepState,
    /// Consecutive complete MIs whose loss exceeded the brake threshold.
    pub lossy_streak: u32,
    probe_up: bool,
}

#[derive(Debug, Clone)]
struct Interval {
    samples: MiSamples,
    phase: Phase,
    deadline: f64,
    hard_deadline: f64,
    first_id: Option<u64>,
    last_id: Option<u64>,
    closed: bool,
    /// Results no longer matter (rate was reset while it was in flight).
    stale: bool,
    app_limited: bool,
    early_checked: bool,
}

impl Interval {
    fn owns(&self, id: u64) -> bool {
        match (self.first_id, self.last_id) {
            (Some(f), Some(l)) => id >= f && id <= l,
            _ => false,
        }
    }

    fn live(&self) -> bool {
        !self.stale && !self.app_limited
    }

    fn resolved(&self) -> bool {
        self.closed && self.samples.resolved() >= self.samples.packets_sent
    }
}

/// Parametrized PCC Vivace sender driven by send/ack/loss/timer callbacks.
#[derive(Debug, Clone)]
pub struct VivaceSender {
    cfg: VivaceConfig,
    state: SenderState,
    packet_bytes: u32,
    intervals: VecDeque<Interval>,
    app_limited_since: Option<f64>,
    log: Vec<DecisionRecord>,
}

impl VivaceSender {
    pub fn new(cfg: VivaceConfig, packet_bytes: u32) -> Self {
        let rate = cfg.init_rate.min(cfg.ss_max_rate).clamp(cfg.rate_min, cfg.rate_max);
        Self {
            state: SenderState {
                phase: Phase::SlowStart,
                rate,
                prev: None,
                min_rtt: None,
                srtt: None,
                rttvar: 0.0,
                step: StepState::default(),
                lossy_streak: 0,
                probe_up: true,
            },
            cfg,
            packet_bytes,
            intervals: VecDeque::new(),
            app_limited_since: None,
            log: Vec::new(),
        }
    }

    pub fn config(&self) -> &VivaceConfig {
        &self.cfg
    }

    /// Swap in a new configuration; rate and phase carry over.
    pub fn set_config(&mut self, cfg: VivaceConfig) {
        self.cfg = cfg;
        let mut rate = self.state.rate.clamp(self.cfg.rate_min, self.cfg.rate_max);
        if self.state.phase == Phase::SlowStart {
            rate = rate.min(self.cfg.ss_max_rate.max(self.cfg.rate_min));
        }
        self.state.rate = rate;
    }

    pub fn state(&self) -> &SenderState {
        &self.state
    }

    pub fn rate(&self) -> f64 {
        self.current().map_or(self.state.rate, |iv| iv.samples.rate)
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.log
    }

    /// Hand over the decision log collected so far.
    pub fn take_decisions(&mut self) -> Vec<DecisionRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn srtt(&self) -> Option<f64> {
        self.state.srtt
    }

    pub fn rttvar(&self) -> f64 {
        self.state.rttvar
    }

    /// Deadline of the open MI, for timer scheduling.
    pub fn next_deadline(&self) -> Option<f64> {
        self.current().map(|iv| iv.deadline)
    }

    fn current(&self) -> Option<&Interval> {
        self.intervals.back().filter(|iv| !iv.closed)
    }

    fn base_duration(&self) -> f64 {
        match self.state.srtt {
            Some(srtt) => (2.0 * srtt).max(self.cfg.mi_min_duration),
            None => self.cfg.mi_min_duration,
        }
    }

    fn open_interval(&mut self, now: f64) {
        let base = self.base_duration();
        let hard = if self.state.srtt.is_some() {
            (8.0 * base).max(1.0)
        } else {
            2.0
        };
        self.intervals.push_back(Interval {
            samples: MiSamples {
                rate: self.state.rate,
                start: now,
                min_rtt: self.state.min_rtt,
                ..Default::default()
            },
            phase: self.state.phase,
            deadline: now + base,
            hard_deadline: now + hard,
            first_id: None,
            last_id: None,
            closed: false,
            stale: false,
            app_limited: false,
            early_checked: false,
        });
    }

    fn flush_app_limited(&mut self, now: f64) {
        if let (Some(since), Some(iv)) = (self.app_limited_since, self.intervals.back_mut()) {
            if !iv.closed {
                let from = since.max(iv.samples.start);
                if now > from {
                    iv.samples.app_limited_time += now - from;
                }
                self.app_limited_since = Some(now);
            }
        }
    }

    fn close_current(&mut self, now: f64, stale: bool) {
        self.flush_app_limited(now);
        if let Some(iv) = self.intervals.back_mut().filter(|iv| !iv.closed) {
            iv.closed = true;
            iv.samples.duration = now - iv.samples.start;
            iv.stale |= stale;
        }
    }

    /// Close the open MI if its time is up (possibly prolonging it) and make
    /// sure an MI is open.
    pub fn poll(&mut self, now: f64) {
        if self.current().is_none() {
            self.open_interval(now);
            return;
        }
        self.flush_app_limited(now);
        let cfg = self.cfg.clone();
        let iv = self.intervals.back_mut().expect("open interval");
        if now < iv.deadline {
            return;
        }
        iv.samples.duration = now - iv.samples.start;
        match mi_finalize(&iv.samples, &cfg) {
            MiOutcome::Prolong if now < iv.hard_deadline => {
                iv.deadline = now + cfg.mi_min_duration;
                return;
            }
            MiOutcome::AppLimited => iv.app_limited = true,
            _ => {}
        }
        self.close_current(now, false);
        self.evaluate(now);
        if self.current().is_none() {
            self.open_interval(now);
        }
    }

    pub fn on_send(&mut self, now: f64, id: u64, _size: u32) {
        self.poll(now);
        let iv = self.intervals.back_mut().expect("poll opens an interval");
        iv.first_id.get_or_insert(id);
        iv.last_id = Some(id);
        iv.samples.packets_sent += 1;
    }

    pub fn set_app_limited(&mut self, now: f64, limited: bool) {
        match (limited, self.app_limited_since) {
            (true, None) => self.app_limited_since = Some(now),
            (false, Some(_)) => {
                self.flush_app_limited(now);
                self.app_limited_since = None;
            }
            _ => {}
        }
    }

    pub fn is_app_limited(&self) -> bool {
        self.app_limited_since.is_some()
    }

    fn update_rtt(&mut self, rtt: f64) {
        let st = &mut self.state;
        st.min_rtt = Some(st.min_rtt.map_or(rtt, |m| m.min(rtt)));
        match st.srtt {
            None => {
                st.srtt = Some(rtt);
                st.rttvar = rtt / 2.0;
            }
            Some(s) => {
                st.rttvar = 0.75 * st.rttvar + 0.25 * (s - rtt).abs();
                st.srtt = Some(0.875 * s + 0.125 * rtt);
            }
        }
    }

    pub fn on_ack(&mut self, now: f64, id: u64, bytes: u32, rtt: f64) {
        self.update_rtt(rtt);
        if let Some(iv) = self.intervals.iter_mut().find(|iv| iv.owns(id)) {
            iv.samples.acks.push(AckSample {
                id,
                at: now,
                rtt,
                bytes,
            });
        }
        self.evaluate(now);
    }

    pub fn on_loss(&mut self, now: f64, id: u64) {
        if let Some(iv) = self.intervals.iter_mut().find(|iv| iv.owns(id)) {
            iv.samples.lost_ids.push(id);
        }
        self.evaluate(now);
    }

    fn record(&mut self, at: f64, kind: DecisionKind, before: f64, after: f64) {
        self.log.push(DecisionRecord {
            at,
            kind,
            rate_before: before,
            rate_after: after,
        });
    }

    /// Discard every in-flight MI and restart measurement at the current rate.
    fn restart_measurement(&mut self, now: f64) {
        self.close_current(now, true);
        for iv in &mut self.intervals {
            iv.stale = true;
        }
        self.open_interval(now);
    }

    fn evaluate(&mut self, now: f64) {
        if self.state.phase == Phase::GradientAscent {
            self.provisional_checks(now);
        }
        while self.intervals.front().is_some_and(|iv| iv.resolved()) {
            let iv = self.intervals.pop_front().expect("front exists");
            if iv.live() && iv.phase == self.state.phase {
                self.on_resolved(now, iv);
            }
        }
    }

    fn on_resolved(&mut self, now: f64, iv: Interval) {
        let stats = iv.samples.stats(&self.cfg);
        let before = self.state.rate;
        match self.state.phase {
            Phase::SlowStart => match slow_start_step(before, &self.cfg, &stats) {
                SlowStartStep::Continue { rate } => {
                    self.state.rate = rate;
                    self.record(now, DecisionKind::SlowStart, before, rate);
                }
                SlowStartStep::Exit { rate } => {
                    self.state.phase = Phase::GradientAscent;
                    self.state.rate = rate;
                    self.state.prev = None;
                    self.state.step.reset();
                    self.record(now, DecisionKind::SlowStartExit, before, rate);
                    self.restart_measurement(now);
                }
            },
            Phase::GradientAscent => {
                if self.cfg.brakes_enabled {
                    let min_rtt = self.state.min_rtt.unwrap_or(0.0);
                    let mut view = loss_evidence(&stats);
                    if view.loss_rate > self.cfg.brake_loss {
                        self.state.lossy_streak += 1;
                    } else {
                        self.state.lossy_streak = 0;
                    }
                    if self.state.lossy_streak < BRAKE_LOSS_STREAK {
                        view.loss_rate = 0.0;
                    }
                    if let BrakeAction::Brake { rate } = emergency_brake(&view, &self.cfg, min_rtt) {
                                        self.brake(now, rate);
                        return;
                    }
                }
                let r = stats.rate / 1e6;
                let u = utility(&self.cfg, r, stats.loss_rate, stats.rtt_gradient);
                let gradient = self.state.prev.map(|p| unified_gradient(p, (r, u)));
                self.state.prev = Some((r, u));
                match gradient {
                    Some(Ok(xi)) => {
                        let after = rate_update(before, &self.cfg, &mut self.state.step, xi);
                        self.state.rate = after;
                        self.record(now, DecisionKind::Gradient, before, after);
                    }
                    _ if (before - stats.rate).abs() <= 1e-9 * before => {
                        let dir = if self.state.probe_up { 1.0 } else { -1.0 };
                        self.state.probe_up = !self.state.probe_up;
                        let after = (before * (1.0 + dir * PROBE_STEP))
                            .clamp(self.cfg.rate_min, self.cfg.rate_max);
                        self.state.rate = after;
                        self.record(now, DecisionKind::Probe, before, after);
                    }
                    _ => {}
                }
            }
        }
    }

    fn brake(&mut self, now: f64, rate: f64) {
        let before = self.state.rate;
        let rate = rate.clamp(self.cfg.rate_min, self.cfg.rate_max);
        self.state.rate = rate;
        self.state.prev = None;
        self.state.step.reset();
        self.state.lossy_streak = 0;
        self.record(now, DecisionKind::Brake, before, rate);
        self.restart_measurement(now);
    }

    /// Checks on the oldest live MI still waiting for feedback: emergency
    /// brakes on partial evidence and early rate decreases.
    fn provisional_checks(&mut self, now: f64) {
        let Some(idx) = self.intervals.iter().position(|iv| iv.live()) else {
            return;
        };
        let cfg = &self.cfg;
        let iv = &self.intervals[idx];
        if iv.resolved() {
            return;
        }
        let mut samples = iv.samples.clone();
        if !iv.closed {
            samples.duration = now - samples.start;
        }

        if cfg.brakes_enabled && samples.resolved() >= PROVISIONAL_BRAKE_MIN && samples.acked() >= 2 {
            // Loss is only judged on complete MIs: re-testing a running
            // estimate after every ACK would brake on noise.
            let stats = samples.stats(cfg);
            let min_rtt = self.state.min_rtt.unwrap_or(0.0);
            if min_rtt > 0.0 && stats.avg_rtt > cfg.brake_latency_ratio * min_rtt {
                let tpt = samples.ack_span_rate().unwrap_or(stats.throughput);
                self.brake(now, (0.5 * tpt).max(cfg.rate_min));
                return;
            }
        }

        let Some(prev) = self.state.prev else { return };
        if iv.early_checked {
            return;
        }
        let expected = if iv.closed {
            samples.packets_sent
        } else {
            let planned = iv.deadline - samples.start;
            (samples.rate * planned / (8.0 * f64::from(self.packet_bytes))).ceil() as u32
        };
        let acked = samples.acked();
        let needed = (cfg.early_fraction * f64::from(expected)).ceil().max(1.0) as u32;
        if acked < needed || acked < cfg.min_packets_per_mi {
            return;
        }
        self.intervals[idx].early_checked = true;
        let stats = samples.stats(cfg);
        let r = stats.rate / 1e6;
        let u = utility(cfg, r, stats.loss_rate, stats.rtt_gradient);
        let Ok(xi) = unified_gradient(prev, (r, u)) else { return };
        if early_decision(acked, expected, xi, cfg.early_fraction) == EarlyDecision::DecideNow {
            let before = self.state.rate;
            let after = rate_update(before, cfg, &mut self.state.step, xi).min(before);
            self.state.rate = after;
            self.state.prev = Some((r, u));
            self.intervals[idx].stale = true;
            self.record(now, DecisionKind::Early, before, after);
            self.close_current(now, true);
            self.open_interval(now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sender() -> VivaceSender {
        VivaceSender::new(VivaceConfig::default(), 1500)
    }

    /// Drive one MI: send `n` packets at `t0`, ack them all at `t_ack` with `rtt`.
    fn run_mi(s: &mut VivaceSender, first_id: u64, n: u64, t0: f64, dur: f64, rtt: f64) -> u64 {
        for i in 0..n {
            s.on_send(t0 + dur * i as f64 / n as f64, first_id + i, 1500);
        }
        s.poll(t0 + dur);
        for i in 0..n {
            s.on_ack(t0 + dur + rtt * 0.5 + i as f64 * 1e-4, first_id + i, 1500, rtt);
        }
        first_id + n
    }

    #[test]
    fn starts_in_slow_start_at_init_rate() {
        let s = sender();
        assert_eq!(s.phase(), Phase::SlowStart);
        assert_eq!(s.rate(), 1e6);
    }

    #[test]
    fn app_limited_intervals_leave_rate_alone() {
        let mut s = sender();
        s.poll(0.0);
        s.set_app_limited(0.0, true);
        let before = s.state().rate;
        for k in 1..20 {
            s.poll(f64::from(k) * 0.05);
        }
        assert_eq!(s.state().rate, before);
        assert!(s.decisions().is_empty());
    }

    #[test]
    fn clean_intervals_double_the_rate() {
        let mut s = sender();
        let mut id = 0;
        let mut t = 0.0;
        for _ in 0..3 {
            id = run_mi(&mut s, id, 12, t, 0.05, 0.02);
            t += 0.05;
        }
        let ss: Vec<_> = s
            .decisions()
            .iter()
            .filter(|d| d.kind == DecisionKind::SlowStart)
            .collect();
        assert!(!ss.is_empty());
        for d in ss {
            assert_eq!(d.rate_after, 2.0 * d.rate_before);
        }
    }

    #[test]
    fn config_swap_keeps_rate_in_bounds() {
        let mut s = sender();
        s.set_config(VivaceConfig {
            ss_max_rate: 5e5,
            rate_min: 1e5,
            ..VivaceConfig::default()
        });
        assert!(s.state().rate <= 5e5);
    }
}
