use super::VivaceConfig;

/// Measurements of one monitor interval, as fed to the utility function.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorIntervalStats {
    /// Sending rate the MI ran at, bits/second.
    pub rate: f64,
    pub duration: f64,
    pub packets_sent: u32,
    pub packets_acked: u32,
    /// Losses that passed the persistence filter.
    pub packets_lost: u32,
    pub throughput: f64,
    pub loss_rate: f64,
    /// Least-squares slope of RTT against ACK arrival time.
    pub rtt_gradient: f64,
    pub avg_rtt: f64,
    pub min_rtt: f64,
    pub app_limited: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckSample {
    pub id: u64,
    pub at: f64,
    pub rtt: f64,
    pub bytes: u32,
}

/// Raw per-MI samples collected by the sender.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiSamples {
    pub rate: f64,
    pub start: f64,
    /// Sending duration so far (or final, once closed).
    pub duration: f64,
    pub packets_sent: u32,
    pub acks: Vec<AckSample>,
    /// Ids of lost packets, in detection order.
    pub lost_ids: Vec<u64>,
    pub app_limited_time: f64,
    /// Connection-wide minimum RTT, if known.
    pub min_rtt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MiOutcome {
    Stats(MonitorIntervalStats),
    /// Sender was application-limited most of the MI; exclude from gradients.
    AppLimited,
    /// Too few ACKs to draw conclusions; keep the MI open.
    Prolong,
}

/// Classify an MI whose planned duration has elapsed.
pub fn mi_finalize(samples: &MiSamples, cfg: &VivaceConfig) -> MiOutcome {
    if samples.duration > 0.0 && samples.app_limited_time > 0.5 * samples.duration {
        return MiOutcome::AppLimited;
    }
    if (samples.acks.len() as u32) < cfg.min_packets_per_mi {
        return MiOutcome::Prolong;
    }
    MiOutcome::Stats(samples.stats(cfg))
}

/// Ordinary least-squares slope of `ys` on `xs`; zero when `xs` has no spread.
pub fn least_squares_slope(points: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let (n, sx) = points
        .clone()
        .fold((0.0, 0.0), |(n, sx), (x, _)| (n + 1.0, sx + x));
    if n < 2.0 {
        return 0.0;
    }
    let mx = sx / n;
    // Offsetting by the first y keeps a flat series exactly flat.
    let y0 = points.clone().next().map_or(0.0, |p| p.1);
    let (sxy, sxx) = points.fold((0.0, 0.0), |(sxy, sxx), (x, y)| {
        let dx = x - mx;
        (sxy + dx * (y - y0), sxx + dx * dx)
    });
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * n {
        0.0
    } else {
        sxy / sxx
    }
}

/// True when the ids form a single run with no gaps.
fn single_run(ids: &[u64]) -> bool {
    match (ids.iter().min(), ids.iter().max()) {
        (Some(lo), Some(hi)) => hi - lo + 1 == ids.len() as u64,
        _ => true,
    }
}

impl MiSamples {
    pub fn acked(&self) -> u32 {
        self.acks.len() as u32
    }

    pub fn resolved(&self) -> u32 {
        self.acked() + self.lost_ids.len() as u32
    }

    /// Losses surviving the persistence filter: enough of them, and not a
    /// single consecutive burst.
    pub fn counted_losses(&self, cfg: &VivaceConfig) -> u32 {
        let lost = self.lost_ids.len() as u32;
        if lost == 0 || lost < cfg.loss_persistence_count.max(1) || single_run(&self.lost_ids) {
            0
        } else {
            lost
        }
    }

    /// Delivery rate over the ACK arrival span, or `None` with < 2 ACKs.
    pub fn ack_span_rate(&self) -> Option<f64> {
        let first = self.acks.first()?;
        let last = self.acks.last()?;
        let span = last.at - first.at;
        if self.acks.len() < 2 || span <= 0.0 {
            return None;
        }
        let bits: f64 = self.acks[1..].iter().map(|a| f64::from(a.bytes) * 8.0).sum();
        Some(bits / span)
    }

    pub fn stats(&self, cfg: &VivaceConfig) -> MonitorIntervalStats {
        let acked = self.acked();
        let lost = self.counted_losses(cfg);
        let acked_bits: f64 = self.acks.iter().map(|a| f64::from(a.bytes) * 8.0).sum();
        let span = match (self.acks.first(), self.acks.last()) {
            (Some(f), Some(l)) => l.at - f.at,
            _ => 0.0,
        };
        let window = self.duration.max(span);
        let throughput = if window > 0.0 { acked_bits / window } else { 0.0 };
        let denom = acked + lost;
        let loss_rate = if denom > 0 {
            f64::from(lost) / f64::from(denom)
        } else {
            0.0
        };
        let avg_rtt = if acked > 0 {
            self.acks.iter().map(|a| a.rtt).sum::<f64>() / f64::from(acked)
        } else {
            0.0
        };
        let sample_min = self.acks.iter().map(|a| a.rtt).fold(f64::INFINITY, f64::min);
        let min_rtt = self.min_rtt.unwrap_or(f64::INFINITY).min(sample_min);
        let min_rtt = if min_rtt.is_finite() { min_rtt } else { 0.0 };
        let rtt_gradient = least_squares_slope(self.acks.iter().map(|a| (a.at, a.rtt)));
        MonitorIntervalStats {
            rate: self.rate,
            duration: self.duration,
            packets_sent: self.packets_sent,
            packets_acked: acked,
            packets_lost: lost,
            throughput,
            loss_rate,
            rtt_gradient,
            avg_rtt,
            min_rtt,
            app_limited: self.duration > 0.0 && self.app_limited_time > 0.5 * self.duration,
        }
    }
}
