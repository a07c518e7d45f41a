//! Event loop that runs senders and application sources over the link.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use super::scenario::{CcKind, Scenario, TrafficModel};
use crate::baseline::AimdSender;
use crate::netsim::{LinkCounters, NetEvent, Network, Packet};
use crate::stats::{AggregateKey, DataPoint, FlowEvent, SecondRecorder};
use crate::vivace::{DecisionRecord, Phase, VivaceConfig, VivaceSender};
use crate::{Result, DEFAULT_PACKET_BYTES};

const TIMER_PACE: u64 = 0;
const TIMER_MI: u64 = 1;
const TIMER_RTO: u64 = 2;
const TIMER_WAKE: u64 = 3;

/// Upper bound on data a bursty source buffers while the sender lags.
const BURST_BACKLOG_S: f64 = 1.0;

/// Application-side event from the pre-generated workload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkloadKind {
    Start,
    Stop,
    File { bytes: u64 },
    BurstOn,
    BurstOff,
}

/// One entry of the workload trace, identical across A/B arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadEvent {
    pub at: f64,
    pub slot: usize,
    pub kind: WorkloadKind,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Which sender each flow uses and how its configuration is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ArmOverride {
    /// Replace every flow's CC with this one.
    pub cc: Option<CcKind>,
}

#[derive(Debug)]
struct Slot {
    cc: CcKind,
    traffic: TrafficModel,
    aggregate: AggregateKey,
    fixed_cfg: VivaceConfig,
    loss_rng: ChaCha8Rng,
    /// Long-lived connection of elastic and bursty slots.
    conn: Option<u64>,
}

#[derive(Debug)]
enum Sender {
    Vivace(Box<VivaceSender>),
    Aimd(AimdSender),
}

#[derive(Debug)]
enum Source {
    Infinite,
    File { unsent: u64 },
    Bursty { on: bool, rate: f64, backlog: f64, last: f64 },
}

impl Source {
    fn refill(&mut self, now: f64) {
        if let Source::Bursty { on, rate, backlog, last } = self {
            if *on && now > *last {
                *backlog = (*backlog + (now - *last) * *rate / 8.0).min(*rate / 8.0 * BURST_BACKLOG_S);
            }
            *last = now;
        }
    }

    /// Size of the next packet the application can hand over, if any.
    fn next_packet(&mut self, now: f64, packet: u32) -> Option<u32> {
        self.refill(now);
        match *self {
            Source::Infinite => Some(packet),
            Source::File { unsent } => (unsent > 0).then(|| unsent.min(u64::from(packet)) as u32),
            // the wake timer lands on the refill instant up to rounding
            Source::Bursty { backlog, .. } => (backlog + 1e-6 >= f64::from(packet)).then_some(packet),
        }
    }

    fn consume(&mut self, size: u32) {
        match self {
            Source::Infinite => {}
            Source::File { unsent } => *unsent -= u64::from(size).min(*unsent),
            Source::Bursty { backlog, .. } => *backlog = (*backlog - f64::from(size)).max(0.0),
        }
    }

    fn give_back(&mut self, size: u32) {
        match self {
            Source::Infinite => {}
            Source::File { unsent } => *unsent += u64::from(size),
            Source::Bursty { backlog, .. } => *backlog += f64::from(size),
        }
    }

    /// When a bursty source next has a full packet, if it is producing.
    fn ready_at(&self, now: f64, packet: u32) -> Option<f64> {
        match *self {
            Source::Bursty {
                on: true,
                rate,
                backlog,
                ..
            } => Some(now + (f64::from(packet) - backlog).max(0.0) * 8.0 / rate),
            _ => None,
        }
    }

    fn finished(&self) -> bool {
        matches!(self, Source::File { unsent: 0 })
    }
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    id: u64,
    sent_at: f64,
    size: u32,
}

#[derive(Debug)]
struct Conn {
    slot: usize,
    sender: Sender,
    source: Source,
    recorder: SecondRecorder,
    inflight: VecDeque<InFlight>,
    next_pkt: u64,
    gens: [u64; 4],
    pace_armed: bool,
    next_send: f64,
    last_send: Option<f64>,
    rto_armed: bool,
    wake_armed: bool,
    mi_deadline: Option<f64>,
    app_limited: bool,
    /// Source has no more data for this connection; close once drained.
    draining: bool,
}

impl Conn {
    fn rate(&self) -> f64 {
        match &self.sender {
            Sender::Vivace(s) => s.rate(),
            Sender::Aimd(s) => s.rate(),
        }
    }

    fn slow_start(&self) -> bool {
        match &self.sender {
            Sender::Vivace(s) => s.phase() == Phase::SlowStart,
            Sender::Aimd(s) => s.in_slow_start(),
        }
    }

    fn rto(&self) -> f64 {
        let (srtt, var) = match &self.sender {
            Sender::Vivace(s) => (s.srtt(), s.rttvar()),
            Sender::Aimd(s) => (s.srtt(), s.rttvar()),
        };
        match srtt {
            Some(s) => (s + 4.0 * var).max(2.0 * s) + 0.01,
            None => 1.0,
        }
    }
}

/// Whole-run network simulation with per-aggregate sender configurations.
#[derive(Debug)]
pub struct Simulation {
    net: Network,
    slots: Vec<Slot>,
    conns: BTreeMap<u64, Conn>,
    next_conn: u64,
    workload: Vec<WorkloadEvent>,
    cursor: usize,
    deployed: BTreeMap<AggregateKey, VivaceConfig>,
    points: Vec<DataPoint>,
    decisions: Vec<(u64, DecisionRecord)>,
    keep_decisions: bool,
    packet_bytes: u32,
    acked_bytes: BTreeMap<u64, u64>,
}

/// Pre-generate every slot's application events up to `horizon`.
fn generate_workload(scenario: &Scenario, slots: &[(usize, usize)], horizon: f64) -> Result<Vec<WorkloadEvent>> {
    let mut events = Vec::new();
    for (slot, &(flow_idx, _)) in slots.iter().enumerate() {
        let flow = &scenario.flows[flow_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(slot as u64);
        let stop = flow.stop_s.unwrap_or(horizon).min(horizon);
        match flow.traffic {
            TrafficModel::Elastic => {
                events.push(WorkloadEvent { at: flow.start_s, slot, kind: WorkloadKind::Start });
                if stop < horizon {
                    events.push(WorkloadEvent { at: stop, slot, kind: WorkloadKind::Stop });
                }
            }
            TrafficModel::Files {
                median_bytes,
                sigma,
                mean_gap_s,
            } => {
                let sizes = LogNormal::new(median_bytes.ln(), sigma)
                    .map_err(|e| crate::Error::invalid("sigma", e.to_string()))?;
                let gaps = Exp::new(1.0 / mean_gap_s).map_err(|e| crate::Error::invalid("mean_gap_s", e.to_string()))?;
                let mut t = flow.start_s + gaps.sample(&mut rng);
                while t < stop {
                    let bytes = sizes.sample(&mut rng).round().max(1.0) as u64;
                    events.push(WorkloadEvent { at: t, slot, kind: WorkloadKind::File { bytes } });
                    t += gaps.sample(&mut rng);
                }
            }
            TrafficModel::Bursty {
                mean_on_s, mean_off_s, ..
            } => {
                let on = Exp::new(1.0 / mean_on_s).map_err(|e| crate::Error::invalid("mean_on_s", e.to_string()))?;
                let off = Exp::new(1.0 / mean_off_s).map_err(|e| crate::Error::invalid("mean_off_s", e.to_string()))?;
                events.push(WorkloadEvent { at: flow.start_s, slot, kind: WorkloadKind::Start });
                let mut t = flow.start_s;
                while t < stop {
                    events.push(WorkloadEvent { at: t, slot, kind: WorkloadKind::BurstOn });
                    t += on.sample(&mut rng);
                    if t >= stop {
                        break;
                    }
                    events.push(WorkloadEvent { at: t, slot, kind: WorkloadKind::BurstOff });
                    t += off.sample(&mut rng);
                }
                if stop < horizon {
                    events.push(WorkloadEvent { at: stop, slot, kind: WorkloadKind::Stop });
                }
            }
        }
    }
    // stable sort keeps per-slot order for equal times
    events.sort_by(|a, b| a.at.total_cmp(&b.at).then(a.slot.cmp(&b.slot)));
    Ok(events)
}

impl Simulation {
    pub fn new(scenario: &Scenario, arm: ArmOverride) -> Result<Self> {
        scenario.validate()?;
        let mut expanded = Vec::new();
        for (i, f) in scenario.flows.iter().enumerate() {
            for c in 0..f.count as usize {
                expanded.push((i, c));
            }
        }
        let workload = generate_workload(scenario, &expanded, scenario.duration_s)?;
        let mut slots = Vec::with_capacity(expanded.len());
        for (slot, &(i, _)) in expanded.iter().enumerate() {
            let f = &scenario.flows[i];
            let cc = arm.cc.unwrap_or(f.cc);
            // loss draws depend on the sender so distinct arms see independent loss
            let mut loss_rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ fnv1a(cc.label()));
            loss_rng.set_stream(slot as u64);
            slots.push(Slot {
                cc,
                traffic: f.traffic.clone(),
                aggregate: f.aggregate.clone(),
                fixed_cfg: VivaceConfig::default().with_overrides(&f.vivace)?,
                loss_rng,
                conn: None,
            });
        }
        Ok(Simulation {
            net: Network::new(scenario.link.clone()),
            slots,
            conns: BTreeMap::new(),
            next_conn: 0,
            workload,
            cursor: 0,
            deployed: BTreeMap::new(),
            points: Vec::new(),
            decisions: Vec::new(),
            keep_decisions: false,
            packet_bytes: DEFAULT_PACKET_BYTES,
            acked_bytes: BTreeMap::new(),
        })
    }

    /// Keep every Vivace rate decision for later inspection.
    pub fn keep_decisions(&mut self, keep: bool) {
        self.keep_decisions = keep;
    }

    pub fn now(&self) -> f64 {
        self.net.now()
    }

    pub fn counters(&self) -> LinkCounters {
        self.net.counters()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn workload(&self) -> &[WorkloadEvent] {
        &self.workload
    }

    /// Aggregates with at least one Vivace flow, in key order.
    pub fn vivace_aggregates(&self) -> Vec<AggregateKey> {
        let mut keys: Vec<AggregateKey> = self
            .slots
            .iter()
            .filter(|s| s.cc == CcKind::Vivace)
            .map(|s| s.aggregate.clone())
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }

    /// Deploy `cfg` to every current and future Vivace connection of `key`.
    pub fn set_aggregate_config(&mut self, key: &AggregateKey, cfg: VivaceConfig) {
        for conn in self.conns.values_mut() {
            if self.slots[conn.slot].aggregate == *key {
                if let Sender::Vivace(s) = &mut conn.sender {
                    s.set_config(cfg.clone());
                }
            }
        }
        self.deployed.insert(key.clone(), cfg);
    }

    pub fn deployed_config(&self, key: &AggregateKey) -> Option<&VivaceConfig> {
        self.deployed.get(key)
    }

    /// Current sending rate of every open connection.
    pub fn connection_rates(&self) -> Vec<(u64, f64)> {
        self.conns.iter().map(|(&id, c)| (id, c.rate())).collect()
    }

    /// Bytes acknowledged so far per connection.
    pub fn acked_bytes(&self) -> &BTreeMap<u64, u64> {
        &self.acked_bytes
    }

    /// Completed datapoints gathered since the last call.
    pub fn take_datapoints(&mut self) -> Vec<DataPoint> {
        std::mem::take(&mut self.points)
    }

    pub fn take_decisions(&mut self) -> Vec<(u64, DecisionRecord)> {
        self.collect_decisions();
        std::mem::take(&mut self.decisions)
    }

    fn collect_decisions(&mut self) {
        for (&id, c) in self.conns.iter_mut() {
            if let Sender::Vivace(s) = &mut c.sender {
                let log = s.take_decisions();
                if self.keep_decisions {
                    self.decisions.extend(log.into_iter().map(|d| (id, d)));
                }
            }
        }
    }

    /// Simulate up to `until`, then emit every datapoint for seconds that
    /// ended by then.
    pub fn run_until(&mut self, until: f64) {
        loop {
            let app_at = self.workload.get(self.cursor).map(|e| e.at).filter(|&t| t <= until);
            let net_at = self.net.next_event_time().filter(|&t| t <= until);
            match (app_at, net_at) {
                (None, None) => break,
                (Some(a), n) if n.is_none_or(|n| a <= n) => {
                    let ev = self.workload[self.cursor];
                    self.cursor += 1;
                    self.net.set_now(a);
                    self.on_workload(ev);
                }
                _ => {
                    if let Some(ev) = self.net.step(until) {
                        self.on_net(ev);
                    }
                }
            }
        }
        self.net.set_now(until);
        for c in self.conns.values_mut() {
            c.recorder.flush_until(until, &mut self.points);
        }
        self.collect_decisions();
    }

    fn config_for(&self, slot: usize) -> VivaceConfig {
        let s = &self.slots[slot];
        self.deployed.get(&s.aggregate).cloned().unwrap_or_else(|| s.fixed_cfg.clone())
    }

    fn open_conn(&mut self, slot: usize, source: Source) -> u64 {
        let now = self.net.now();
        let id = self.next_conn;
        self.next_conn += 1;
        let sender = match self.slots[slot].cc {
            CcKind::Vivace => Sender::Vivace(Box::new(VivaceSender::new(self.config_for(slot), self.packet_bytes))),
            CcKind::Aimd => Sender::Aimd(AimdSender::new(self.packet_bytes)),
        };
        let mut conn = Conn {
            slot,
            sender,
            source,
            recorder: SecondRecorder::new(id, self.slots[slot].aggregate.clone(), now, 0.0, true, false),
            inflight: VecDeque::new(),
            next_pkt: 0,
            gens: [0; 4],
            pace_armed: false,
            next_send: now,
            last_send: None,
            rto_armed: false,
            wake_armed: false,
            mi_deadline: None,
            app_limited: false,
            draining: false,
        };
        let rate = conn.rate();
        let ss = conn.slow_start();
        conn.recorder = SecondRecorder::new(id, self.slots[slot].aggregate.clone(), now, rate, ss, false);
        self.conns.insert(id, conn);
        self.service(id);
        id
    }

    fn on_workload(&mut self, ev: WorkloadEvent) {
        let now = ev.at;
        match ev.kind {
            WorkloadKind::Start => {
                let source = match self.slots[ev.slot].traffic {
                    TrafficModel::Bursty { app_rate_bps, .. } => Source::Bursty {
                        on: false,
                        rate: app_rate_bps,
                        backlog: 0.0,
                        last: now,
                    },
                    _ => Source::Infinite,
                };
                let id = self.open_conn(ev.slot, source);
                self.slots[ev.slot].conn = Some(id);
            }
            WorkloadKind::Stop => {
                if let Some(id) = self.slots[ev.slot].conn.take() {
                    self.close_conn(id);
                }
            }
            WorkloadKind::File { bytes } => {
                self.open_conn(ev.slot, Source::File { unsent: bytes });
            }
            WorkloadKind::BurstOn | WorkloadKind::BurstOff => {
                if let Some(id) = self.slots[ev.slot].conn {
                    if let Some(c) = self.conns.get_mut(&id) {
                        c.source.refill(now);
                        if let Source::Bursty { on, .. } = &mut c.source {
                            *on = ev.kind == WorkloadKind::BurstOn;
                        }
                    }
                    self.service(id);
                }
            }
        }
    }

    fn close_conn(&mut self, id: u64) {
        let now = self.net.now();
        if let Some(mut c) = self.conns.remove(&id) {
            if let Sender::Vivace(s) = &mut c.sender {
                let log = s.take_decisions();
                if self.keep_decisions {
                    self.decisions.extend(log.into_iter().map(|d| (id, d)));
                }
            }
            c.recorder.close(now, &mut self.points);
        }
    }

    fn arm(&mut self, id: u64, kind: u64, at: f64) {
        let c = self.conns.get_mut(&id).expect("live connection");
        c.gens[kind as usize] += 1;
        let token = (c.gens[kind as usize] << 2) | kind;
        self.net.schedule_timer(at, id, token);
    }

    fn on_net(&mut self, ev: NetEvent) {
        match ev {
            NetEvent::Delivered { .. } => {}
            NetEvent::Ack { at, pkt, rtt } => self.on_ack(at, pkt, rtt),
            NetEvent::Timer { at, owner, token } => {
                let kind = token & 3;
                let live = self
                    .conns
                    .get(&owner)
                    .is_some_and(|c| c.gens[kind as usize] == token >> 2);
                if live {
                    self.on_timer(at, owner, kind);
                }
            }
        }
    }

    fn on_timer(&mut self, now: f64, id: u64, kind: u64) {
        let c = self.conns.get_mut(&id).expect("checked live");
        match kind {
            TIMER_PACE => {
                c.pace_armed = false;
                if let Some(size) = c.source.next_packet(now, self.packet_bytes) {
                    self.send(id, size);
                }
            }
            TIMER_MI => {
                c.mi_deadline = None;
                if let Sender::Vivace(s) = &mut c.sender {
                    s.poll(now);
                }
            }
            TIMER_RTO => {
                c.rto_armed = false;
                let rto = c.rto();
                let mut lost = Vec::new();
                while let Some(p) = c.inflight.front().copied() {
                    if p.sent_at + rto > now {
                        break;
                    }
                    c.inflight.pop_front();
                    lost.push(p);
                }
                for p in lost {
                    self.lose(id, p);
                }
            }
            _ => {
                c.wake_armed = false;
            }
        }
        self.service(id);
    }

    fn on_ack(&mut self, now: f64, pkt: Packet, rtt: f64) {
        let id = pkt.flow_id;
        let Some(c) = self.conns.get_mut(&id) else {
            return;
        };
        if !c.inflight.iter().any(|p| p.id == pkt.id) {
            // already written off by the retransmission timer
            return;
        }
        let mut lost = Vec::new();
        while let Some(p) = c.inflight.pop_front() {
            if p.id == pkt.id {
                break;
            }
            lost.push(p);
        }
        // FIFO path: anything older than an ACKed packet was dropped
        for p in lost {
            self.lose(id, p);
        }
        let c = self.conns.get_mut(&id).expect("still open");
        match &mut c.sender {
            Sender::Vivace(s) => s.on_ack(now, pkt.id, pkt.size, rtt),
            Sender::Aimd(s) => s.on_ack(rtt),
        }
        c.recorder.push(FlowEvent::Ack { at: now, bytes: pkt.size, rtt }, &mut self.points);
        *self.acked_bytes.entry(id).or_default() += u64::from(pkt.size);
        self.service(id);
    }

    fn lose(&mut self, id: u64, p: InFlight) {
        let now = self.net.now();
        let c = self.conns.get_mut(&id).expect("live connection");
        match &mut c.sender {
            Sender::Vivace(s) => s.on_loss(now, p.id),
            Sender::Aimd(s) => {
                s.on_loss(now, p.sent_at);
            }
        }
        c.source.give_back(p.size);
        c.recorder.push(FlowEvent::Loss { at: now }, &mut self.points);
    }

    fn send(&mut self, id: u64, size: u32) {
        let now = self.net.now();
        let c = self.conns.get_mut(&id).expect("live connection");
        let pkt_id = c.next_pkt;
        c.next_pkt += 1;
        c.source.consume(size);
        if let Sender::Vivace(s) = &mut c.sender {
            s.on_send(now, pkt_id, size);
        }
        c.inflight.push_back(InFlight {
            id: pkt_id,
            sent_at: now,
            size,
        });
        c.last_send = Some(now);
        let rate = c.rate();
        c.next_send = if rate > 0.0 {
            now + f64::from(size) * 8.0 / rate
        } else {
            now
        };
        let slot = c.slot;
        let pkt = Packet {
            id: pkt_id,
            flow_id: id,
            size,
            sent_at: now,
        };
        let rng = &mut self.slots[slot].loss_rng;
        self.net.enqueue(pkt, now, rng);
    }

    /// Send what the sender allows, keep timers armed and telemetry current.
    fn service(&mut self, id: u64) {
        let now = self.net.now();
        let packet = self.packet_bytes;
        let Some(c) = self.conns.get_mut(&id) else {
            return;
        };
        let mut starved = false;
        match c.sender {
            Sender::Aimd(_) => loop {
                let c = self.conns.get_mut(&id).expect("live");
                let Sender::Aimd(s) = &c.sender else { unreachable!() };
                if c.inflight.len() as u64 >= s.window() {
                    break;
                }
                match c.source.next_packet(now, packet) {
                    Some(size) => self.send(id, size),
                    None => {
                        starved = true;
                        break;
                    }
                }
            },
            Sender::Vivace(_) => {
                if !c.pace_armed {
                    match c.source.next_packet(now, packet) {
                        Some(size) if c.next_send <= now => {
                            self.send(id, size);
                            self.arm_pacer(id, now);
                        }
                        Some(_) => self.arm_pacer(id, now),
                        None => starved = true,
                    }
                }
            }
        }
        let c = self.conns.get_mut(&id).expect("live");
        // transmitter idle for lack of data: restart pacing from now later
        if starved {
            c.next_send = c.next_send.max(now);
        }
        if starved != c.app_limited {
            c.app_limited = starved;
            if let Sender::Vivace(s) = &mut c.sender {
                s.set_app_limited(now, starved);
            }
            c.recorder.push(FlowEvent::AppLimited { at: now, active: starved }, &mut self.points);
        }
        let rate = c.rate();
        if rate != c.recorder.rate() {
            c.recorder.push(FlowEvent::Rate { at: now, rate }, &mut self.points);
            if c.pace_armed {
                if let Some(last) = c.last_send {
                    let next = (last + f64::from(packet) * 8.0 / rate).max(now);
                    if next < c.next_send * 0.999 || next > c.next_send * 1.001 {
                        c.next_send = next;
                        self.arm(id, TIMER_PACE, next);
                    }
                }
            }
        }
        let c = self.conns.get_mut(&id).expect("live");
        let ss = c.slow_start();
        if ss != c.recorder.slow_start() {
            c.recorder.push(FlowEvent::SlowStart { at: now, active: ss }, &mut self.points);
        }
        let deadline = match &c.sender {
            Sender::Vivace(s) => s.next_deadline(),
            Sender::Aimd(_) => None,
        };
        if let Some(d) = deadline {
            if c.mi_deadline != Some(d) {
                c.mi_deadline = Some(d);
                self.arm(id, TIMER_MI, d.max(now));
            }
        } else if matches!(c.sender, Sender::Vivace(_)) {
            // no MI open yet: open one now
            if let Sender::Vivace(s) = &mut c.sender {
                s.poll(now);
            }
            if let Sender::Vivace(s) = &c.sender {
                if let Some(d) = s.next_deadline() {
                    c.mi_deadline = Some(d);
                    self.arm(id, TIMER_MI, d.max(now));
                }
            }
        }
        let c = self.conns.get_mut(&id).expect("live");
        if !c.rto_armed && !c.inflight.is_empty() {
            c.rto_armed = true;
            let at = c.inflight.front().map_or(now, |p| p.sent_at) + c.rto();
            self.arm(id, TIMER_RTO, at.max(now));
        }
        let c = self.conns.get_mut(&id).expect("live");
        if starved && !c.wake_armed {
            if let Some(at) = c.source.ready_at(now, packet) {
                c.wake_armed = true;
                self.arm(id, TIMER_WAKE, at);
            }
        }
        let c = self.conns.get_mut(&id).expect("live");
        if c.source.finished() {
            c.draining = true;
        }
        if c.draining && c.inflight.is_empty() {
            self.close_conn(id);
        }
    }

    fn arm_pacer(&mut self, id: u64, now: f64) {
        let c = self.conns.get_mut(&id).expect("live");
        c.pace_armed = true;
        let at = c.next_send.max(now);
        self.arm(id, TIMER_PACE, at);
    }
}
