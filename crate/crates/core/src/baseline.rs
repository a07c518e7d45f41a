//! AIMD benchmark sender (Reno-style growth with a Cubic-style 0.7 backoff).

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AimdPhase {
    SlowStart,
    CongestionAvoidance,
}

/// Multiplicative decrease factor.
pub const BACKOFF: f64 = 0.7;

pub const INITIAL_CWND: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AimdState {
    /// Congestion window, packets.
    pub cwnd: f64,
    pub ssthresh: f64,
    pub phase: AimdPhase,
    pub min_rtt: Option<f64>,
}

impl Default for AimdState {
    fn default() -> Self {
        Self {
            cwnd: INITIAL_CWND,
            ssthresh: f64::MAX,
            phase: AimdPhase::SlowStart,
            min_rtt: None,
        }
    }
}

impl AimdState {
    pub fn on_ack(&mut self) -> f64 {
        match self.phase {
            AimdPhase::SlowStart => self.cwnd += 1.0,
            AimdPhase::CongestionAvoidance => self.cwnd += 1.0 / self.cwnd,
        }
        if self.phase == AimdPhase::SlowStart && self.cwnd >= self.ssthresh {
            self.phase = AimdPhase::CongestionAvoidance;
        }
        self.cwnd
    }

    pub fn on_loss(&mut self) -> (f64, f64) {
        self.ssthresh = (self.cwnd * BACKOFF).max(2.0);
        self.cwnd = self.ssthresh;
        self.phase = AimdPhase::CongestionAvoidance;
        (self.cwnd, self.ssthresh)
    }
}

/// Window-based sender around [`AimdState`] with RTT tracking and
/// once-per-window loss reaction.
#[derive(Debug, Clone)]
pub struct AimdSender {
    state: AimdState,
    packet_bytes: u32,
    srtt: Option<f64>,
    rttvar: f64,
    /// Losses of packets sent at or before this instant are part of an
    /// already-handled congestion event.
    recovery_point: f64,
}

impl AimdSender {
    pub fn new(packet_bytes: u32) -> Self {
        Self {
            state: AimdState::default(),
            packet_bytes,
            srtt: None,
            rttvar: 0.0,
            recovery_point: f64::NEG_INFINITY,
        }
    }

    pub fn state(&self) -> &AimdState {
        &self.state
    }

    pub fn srtt(&self) -> Option<f64> {
        self.srtt
    }

    pub fn rttvar(&self) -> f64 {
        self.rttvar
    }

    pub fn in_slow_start(&self) -> bool {
        self.state.phase == AimdPhase::SlowStart
    }

    /// Packets that may be in flight.
    pub fn window(&self) -> u64 {
        self.state.cwnd.floor().max(1.0) as u64
    }

    /// cwnd / smoothed RTT, bits/second (0 before the first RTT sample).
    pub fn rate(&self) -> f64 {
        match self.srtt {
            Some(srtt) if srtt > 0.0 => self.state.cwnd * f64::from(self.packet_bytes) * 8.0 / srtt,
            _ => 0.0,
        }
    }

    pub fn on_ack(&mut self, rtt: f64) {
        self.state.min_rtt = Some(self.state.min_rtt.map_or(rtt, |m| m.min(rtt)));
        match self.srtt {
            None => {
                self.srtt = Some(rtt);
                self.rttvar = rtt / 2.0;
            }
            Some(s) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (s - rtt).abs();
                self.srtt = Some(0.875 * s + 0.125 * rtt);
            }
        }
        self.state.on_ack();
    }

    /// Returns true when the loss started a new congestion event.
    pub fn on_loss(&mut self, now: f64, sent_at: f64) -> bool {
        if sent_at <= self.recovery_point {
            return false;
        }
        self.state.on_loss();
        self.recovery_point = now;
        true
    }
}
