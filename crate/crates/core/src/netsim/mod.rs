//! Single-bottleneck discrete-event network: drop-tail FIFO, i.i.d. random
//! loss, optional token-bucket policing, lossless delay-only ACK path.

mod events;
mod policer;

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use events::EventQueue;
pub use policer::{Policer, PolicerSpec};

use crate::{Error, Result};

/// A bandwidth change taking effect at `at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthStep {
    #[serde(rename = "at_s")]
    pub at: f64,
    pub bandwidth_bps: f64,
}

/// Static description of the bottleneck link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinkDoc", into = "LinkDoc")]
pub struct LinkSpec {
    /// bits/second
    pub bandwidth: f64,
    /// One-way propagation delay, seconds.
    pub prop_delay: f64,
    /// Bytes that may wait behind the packet in service.
    pub buffer_capacity: u64,
    pub random_loss_prob: f64,
    pub policer: Option<PolicerSpec>,
    /// Sorted by time; each entry replaces `bandwidth` from its instant on.
    pub bandwidth_schedule: Vec<BandwidthStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    bandwidth_bps: f64,
    prop_delay_ms: f64,
    buffer_bytes: u64,
    #[serde(default)]
    loss_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policer: Option<PolicerSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    bandwidth_schedule: Vec<BandwidthStep>,
}

impl TryFrom<LinkDoc> for LinkSpec {
    type Error = Error;

    fn try_from(doc: LinkDoc) -> Result<Self> {
        let mut schedule = doc.bandwidth_schedule;
        schedule.sort_by(|a, b| a.at.total_cmp(&b.at));
        let spec = LinkSpec {
            bandwidth: doc.bandwidth_bps,
            prop_delay: doc.prop_delay_ms / 1000.0,
            buffer_capacity: doc.buffer_bytes,
            random_loss_prob: doc.loss_prob,
            policer: doc.policer,
            bandwidth_schedule: schedule,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<LinkSpec> for LinkDoc {
    fn from(spec: LinkSpec) -> Self {
        LinkDoc {
            bandwidth_bps: spec.bandwidth,
            prop_delay_ms: spec.prop_delay * 1000.0,
            buffer_bytes: spec.buffer_capacity,
            loss_prob: spec.random_loss_prob,
            policer: spec.policer,
            bandwidth_schedule: spec.bandwidth_schedule,
        }
    }
}

impl LinkSpec {
    pub fn new(bandwidth: f64, prop_delay: f64, buffer_capacity: u64) -> Self {
        Self {
            bandwidth,
            prop_delay,
            buffer_capacity,
            random_loss_prob: 0.0,
            policer: None,
            bandwidth_schedule: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::invalid("link.bandwidth_bps", "must be positive"));
        }
        if !(self.prop_delay >= 0.0 && self.prop_delay.is_finite()) {
            return Err(Error::invalid("link.prop_delay_ms", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.random_loss_prob) {
            return Err(Error::invalid("link.loss_prob", "must lie in [0, 1)"));
        }
        if let Some(p) = &self.policer {
            p.validate()?;
        }
        for step in &self.bandwidth_schedule {
            if !(step.bandwidth_bps > 0.0 && step.bandwidth_bps.is_finite()) || step.at.is_nan() || step.at < 0.0 {
                return Err(Error::invalid(
                    "link.bandwidth_schedule",
                    "steps need at_s >= 0 and positive bandwidth",
                ));
            }
        }
        Ok(())
    }

    /// Bandwidth in effect at time `t`.
    pub fn bandwidth_at(&self, t: f64) -> f64 {
        self.bandwidth_schedule
            .iter()
            .take_while(|s| s.at <= t)
            .last()
            .map_or(self.bandwidth, |s| s.bandwidth_bps)
    }

    pub fn bdp_bytes(&self) -> f64 {
        self.bandwidth * 2.0 * self.prop_delay / 8.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub flow_id: u64,
    pub size: u32,
    pub sent_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Queued { deliver_at: f64 },
    DroppedBuffer,
    DroppedRandom,
    DroppedPolicer,
}

impl Verdict {
    pub fn is_drop(&self) -> bool {
        !matches!(self, Verdict::Queued { .. })
    }
}

/// Events surfaced to the caller by [`Network::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NetEvent {
    /// Packet left the bottleneck and reached the receiver.
    Delivered { at: f64, pkt: Packet },
    /// ACK for `pkt` reached the sender.
    Ack { at: f64, pkt: Packet, rtt: f64 },
    Timer { at: f64, owner: u64, token: u64 },
}

impl NetEvent {
    pub fn time(&self) -> f64 {
        match *self {
            NetEvent::Delivered { at, .. } | NetEvent::Ack { at, .. } | NetEvent::Timer { at, .. } => {
                at
            }
        }
    }
}

#[derive(Debug)]
enum Pending {
    Deliver(Packet),
    Ack(Packet),
    Timer { owner: u64, token: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_buffer: u64,
    pub dropped_random: u64,
    pub dropped_policer: u64,
}

impl LinkCounters {
    pub fn dropped(&self) -> u64 {
        self.dropped_buffer + self.dropped_random + self.dropped_policer
    }
}

/// The bottleneck path plus the simulation clock.
#[derive(Debug)]
pub struct Network {
    spec: LinkSpec,
    queue: EventQueue<Pending>,
    policer: Option<Policer>,
    /// Time the transmitter finishes everything accepted so far.
    busy_until: f64,
    /// (transmission start, size) for accepted packets not yet in service.
    waiting: VecDeque<(f64, u32)>,
    waiting_bytes: u64,
    counters: LinkCounters,
}

impl Network {
    pub fn new(spec: LinkSpec) -> Self {
        let policer = spec.policer.map(Policer::new);
        Self {
            spec,
            queue: EventQueue::new(),
            policer,
            busy_until: 0.0,
            waiting: VecDeque::new(),
            waiting_bytes: 0,
            counters: LinkCounters::default(),
        }
    }

    pub fn spec(&self) -> &LinkSpec {
        &self.spec
    }

    pub fn now(&self) -> f64 {
        self.queue.now()
    }

    pub fn counters(&self) -> LinkCounters {
        self.counters
    }

    pub fn policer(&self) -> Option<&Policer> {
        self.policer.as_ref()
    }

    /// Bytes waiting behind the packet currently on the wire.
    pub fn queued_bytes(&mut self, now: f64) -> u64 {
        self.expire_waiting(now);
        self.waiting_bytes
    }

    fn expire_waiting(&mut self, now: f64) {
        while let Some(&(start, size)) = self.waiting.front() {
            if start > now {
                break;
            }
            self.waiting.pop_front();
            self.waiting_bytes -= u64::from(size);
        }
    }

    /// Offer `pkt` to the link. Drop causes are checked policer, then random
    /// loss, then buffer overflow.
    pub fn enqueue<R: Rng + ?Sized>(&mut self, pkt: Packet, now: f64, rng: &mut R) -> Verdict {
        assert!(pkt.size > 0, "zero-sized packet");
        self.counters.sent += 1;
        if let Some(policer) = self.policer.as_mut() {
            if !policer.admit(pkt.size, now) {
                self.counters.dropped_policer += 1;
                return Verdict::DroppedPolicer;
            }
        }
        if self.spec.random_loss_prob > 0.0 && rng.random::<f64>() < self.spec.random_loss_prob {
            self.counters.dropped_random += 1;
            return Verdict::DroppedRandom;
        }
        self.expire_waiting(now);
        let start = self.busy_until.max(now);
        let must_wait = start > now;
        if must_wait && self.waiting_bytes + u64::from(pkt.size) > self.spec.buffer_capacity {
            self.counters.dropped_buffer += 1;
            return Verdict::DroppedBuffer;
        }
        let tx = f64::from(pkt.size) * 8.0 / self.spec.bandwidth_at(start);
        self.busy_until = start + tx;
        if must_wait {
            self.waiting.push_back((start, pkt.size));
            self.waiting_bytes += u64::from(pkt.size);
        }
        let deliver_at = self.busy_until + self.spec.prop_delay;
        self.queue.push(deliver_at, Pending::Deliver(pkt));
        Verdict::Queued { deliver_at }
    }

    pub fn schedule_timer(&mut self, at: f64, owner: u64, token: u64) {
        self.queue.push(at, Pending::Timer { owner, token });
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.queue.peek_time()
    }

    /// Fire the next event due at or before `until`. Deliveries schedule
    /// their ACK one propagation delay later.
    pub fn step(&mut self, until: f64) -> Option<NetEvent> {
        let (at, pending) = self.queue.pop_until(until)?;
        Some(match pending {
            Pending::Deliver(pkt) => {
                self.counters.delivered += 1;
                self.queue.push(at + self.spec.prop_delay, Pending::Ack(pkt));
                NetEvent::Delivered { at, pkt }
            }
            Pending::Ack(pkt) => NetEvent::Ack {
                at,
                pkt,
                rtt: at - pkt.sent_at,
            },
            Pending::Timer { owner, token } => NetEvent::Timer { at, owner, token },
        })
    }

    /// Fire every event due at or before `until` and set the clock to `until`.
    pub fn advance(&mut self, until: f64) -> Vec<NetEvent> {
        let mut out = Vec::new();
        while let Some(ev) = self.step(until) {
            out.push(ev);
        }
        self.queue.set_now(until);
        out
    }

    pub fn set_now(&mut self, until: f64) {
        self.queue.set_now(until);
    }
}
