//! Per-second connection telemetry, epoch roll-ups and percentiles.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Unit of customization: (service type, destination subnet).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "AggregateDoc")]
pub struct AggregateKey {
    pub service_type: String,
    pub subnet_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AggregateDoc {
    service_type: String,
    subnet_id: String,
}

impl TryFrom<AggregateDoc> for AggregateKey {
    type Error = Error;

    fn try_from(doc: AggregateDoc) -> Result<Self> {
        AggregateKey::new(doc.service_type, doc.subnet_id)
    }
}

impl AggregateKey {
    pub fn new(service_type: impl Into<String>, subnet_id: impl Into<String>) -> Result<Self> {
        let key = AggregateKey {
            service_type: service_type.into(),
            subnet_id: subnet_id.into(),
        };
        if key.service_type.is_empty() || key.subnet_id.is_empty() {
            return Err(Error::invalid("aggregate", "service_type and subnet_id must be non-empty"));
        }
        Ok(key)
    }
}

impl std::fmt::Display for AggregateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.service_type, self.subnet_id)
    }
}

/// One second of one connection.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub second: u64,
    pub flow_id: u64,
    pub aggregate: AggregateKey,
    pub avg_throughput: f64,
    pub min_rate: f64,
    pub avg_rate: f64,
    pub max_rate: f64,
    pub loss_rate: f64,
    pub min_rtt: Option<f64>,
    pub avg_rtt: Option<f64>,
    pub slow_start_fraction: f64,
    pub app_limited_fraction: f64,
}

/// Timestamped connection events that feed a [`DataPoint`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowEvent {
    /// Sending rate in effect from `at`.
    Rate { at: f64, rate: f64 },
    SlowStart { at: f64, active: bool },
    AppLimited { at: f64, active: bool },
    Ack { at: f64, bytes: u32, rtt: f64 },
    Loss { at: f64 },
}

impl FlowEvent {
    pub fn at(&self) -> f64 {
        match *self {
            FlowEvent::Rate { at, .. }
            | FlowEvent::SlowStart { at, .. }
            | FlowEvent::AppLimited { at, .. }
            | FlowEvent::Ack { at, .. }
            | FlowEvent::Loss { at } => at,
        }
    }
}

/// Everything needed to compute one connection-second.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondWindow {
    pub second: u64,
    pub flow_id: u64,
    pub aggregate: AggregateKey,
    /// Part of the second during which the connection existed.
    pub active_from: f64,
    pub active_until: f64,
    pub initial_rate: f64,
    pub initial_slow_start: bool,
    pub initial_app_limited: bool,
    /// Time-ordered, all within `[active_from, active_until]`.
    pub events: Vec<FlowEvent>,
}

#[derive(Debug, Clone, Copy)]
struct Carry {
    rate: f64,
    slow_start: bool,
    app_limited: bool,
}

#[derive(Debug, Default)]
struct TimeWeighted {
    weighted: f64,
    min: f64,
    max: f64,
    seen: bool,
}

impl TimeWeighted {
    fn add(&mut self, value: f64, dt: f64) {
        self.weighted += value * dt;
        if !self.seen {
            self.min = value;
            self.max = value;
            self.seen = true;
        } else {
            self.min = self.min.min(value);
            self.max = self.max.max(value);
        }
    }
}

/// Roll one connection-second into a [`DataPoint`]. Rates, slow-start and
/// app-limited time are time-weighted over the active part of the second.
pub fn aggregate_second(w: &SecondWindow) -> DataPoint {
    let span = (w.active_until - w.active_from).max(0.0);
    let mut carry = Carry {
        rate: w.initial_rate,
        slow_start: w.initial_slow_start,
        app_limited: w.initial_app_limited,
    };
    let mut rate = TimeWeighted::default();
    let (mut ss_time, mut al_time) = (0.0, 0.0);
    let (mut bits, mut acks, mut losses) = (0.0, 0u64, 0u64);
    let (mut rtt_sum, mut rtt_min) = (0.0, f64::INFINITY);
    let mut cursor = w.active_from;

    let mut advance = |to: f64, carry: &Carry, rate: &mut TimeWeighted, ss: &mut f64, al: &mut f64| {
        let dt = to - cursor;
        if dt > 0.0 {
            rate.add(carry.rate, dt);
            if carry.slow_start {
                *ss += dt;
            }
            if carry.app_limited {
                *al += dt;
            }
            cursor = to;
        }
    };

    for ev in &w.events {
        let at = ev.at().clamp(w.active_from, w.active_until);
        advance(at, &carry, &mut rate, &mut ss_time, &mut al_time);
        match *ev {
            FlowEvent::Rate { rate: r, .. } => carry.rate = r,
            FlowEvent::SlowStart { active, .. } => carry.slow_start = active,
            FlowEvent::AppLimited { active, .. } => carry.app_limited = active,
            FlowEvent::Ack { bytes, rtt, .. } => {
                bits += f64::from(bytes) * 8.0;
                acks += 1;
                rtt_sum += rtt;
                rtt_min = rtt_min.min(rtt);
            }
            FlowEvent::Loss { .. } => losses += 1,
        }
    }
    advance(w.active_until, &carry, &mut rate, &mut ss_time, &mut al_time);
    if !rate.seen {
        rate.add(carry.rate, 0.0);
    }

    let (avg_rate, ss_frac, al_frac) = if span > 0.0 {
        (rate.weighted / span, ss_time / span, al_time / span)
    } else {
        (
            carry.rate,
            f64::from(u8::from(carry.slow_start)),
            f64::from(u8::from(carry.app_limited)),
        )
    };
    let resolved = acks + losses;
    DataPoint {
        second: w.second,
        flow_id: w.flow_id,
        aggregate: w.aggregate.clone(),
        avg_throughput: if span > 0.0 { bits / span } else { 0.0 },
        min_rate: rate.min,
        avg_rate: avg_rate.clamp(rate.min, rate.max),
        max_rate: rate.max,
        loss_rate: if resolved > 0 {
            losses as f64 / resolved as f64
        } else {
            0.0
        },
        min_rtt: (acks > 0).then_some(rtt_min),
        avg_rtt: (acks > 0).then(|| rtt_sum / acks as f64),
        slow_start_fraction: ss_frac.clamp(0.0, 1.0),
        app_limited_fraction: al_frac.clamp(0.0, 1.0),
    }
}

/// Live helper that buckets a connection's events into seconds.
#[derive(Debug, Clone)]
pub struct SecondRecorder {
    window: SecondWindow,
    carry: Carry,
}

impl SecondRecorder {
    pub fn new(
        flow_id: u64,
        aggregate: AggregateKey,
        start: f64,
        rate: f64,
        slow_start: bool,
        app_limited: bool,
    ) -> Self {
        let carry = Carry {
            rate,
            slow_start,
            app_limited,
        };
        let second = start.max(0.0).floor() as u64;
        Self {
            window: Self::fresh(second, flow_id, aggregate, start, carry),
            carry,
        }
    }

    fn fresh(second: u64, flow_id: u64, aggregate: AggregateKey, from: f64, carry: Carry) -> SecondWindow {
        SecondWindow {
            second,
            flow_id,
            aggregate,
            active_from: from,
            active_until: (second + 1) as f64,
            initial_rate: carry.rate,
            initial_slow_start: carry.slow_start,
            initial_app_limited: carry.app_limited,
            events: Vec::new(),
        }
    }

    /// Close every full second that ends at or before `now`.
    fn roll(&mut self, now: f64, out: &mut Vec<DataPoint>) {
        while now >= self.window.active_until {
            out.push(aggregate_second(&self.window));
            let next = self.window.second + 1;
            let from = next as f64;
            self.window = Self::fresh(next, self.window.flow_id, self.window.aggregate.clone(), from, self.carry);
        }
    }

    pub fn push(&mut self, ev: FlowEvent, out: &mut Vec<DataPoint>) {
        self.roll(ev.at(), out);
        match ev {
            FlowEvent::Rate { rate, .. } => self.carry.rate = rate,
            FlowEvent::SlowStart { active, .. } => self.carry.slow_start = active,
            FlowEvent::AppLimited { active, .. } => self.carry.app_limited = active,
            _ => {}
        }
        self.window.events.push(ev);
    }

    pub fn rate(&self) -> f64 {
        self.carry.rate
    }

    pub fn slow_start(&self) -> bool {
        self.carry.slow_start
    }

    pub fn app_limited(&self) -> bool {
        self.carry.app_limited
    }

    /// Emit seconds completed by `now` without ending the connection.
    pub fn flush_until(&mut self, now: f64, out: &mut Vec<DataPoint>) {
        self.roll(now, out);
    }

    /// End the connection at `at`, emitting the final partial second.
    pub fn close(mut self, at: f64, out: &mut Vec<DataPoint>) {
        self.roll(at, out);
        if at > self.window.active_from {
            self.window.active_until = at;
            out.push(aggregate_second(&self.window));
        }
    }
}

/// Nearest-rank percentile: the `ceil(p/100·n)`-th smallest value, with
/// `p = 0` mapping to the minimum.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput { what: "percentile" });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let p = p.clamp(0.0, 100.0);
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub const SUMMARY_PERCENTILES: [u32; 5] = [25, 50, 75, 90, 95];

/// Metric columns of an [`EpochSummary`], in CSV order.
pub fn summary_metric_names() -> Vec<String> {
    let mut names = vec!["datapoints".to_string(), "flows".to_string()];
    for base in ["throughput", "rtt", "loss"] {
        names.push(format!("{base}_mean"));
        for p in SUMMARY_PERCENTILES {
            names.push(format!("{base}_p{p}"));
        }
    }
    names.extend(["rate_mean", "slow_start_mean", "app_limited_mean"].map(String::from));
    names
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub aggregate: AggregateKey,
    pub epoch: u64,
    pub metrics: BTreeMap<String, f64>,
}

impl EpochSummary {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }

    pub fn datapoints(&self) -> usize {
        self.get("datapoints").unwrap_or(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpochOutcome {
    Summary(EpochSummary),
    /// Too few datapoints for a meaningful reward; the customizer skips it.
    LowData {
        aggregate: AggregateKey,
        epoch: u64,
        datapoints: usize,
    },
}

pub const DEFAULT_MIN_DATAPOINTS: usize = 10;

/// Sum in sorted order so the result does not depend on input order.
fn sorted_mean(sorted: &[f64]) -> f64 {
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

fn add_distribution(metrics: &mut BTreeMap<String, f64>, base: &str, mut values: Vec<f64>) {
    values.sort_by(f64::total_cmp);
    metrics.insert(format!("{base}_mean"), sorted_mean(&values));
    for p in SUMMARY_PERCENTILES {
        metrics.insert(format!("{base}_p{p}"), percentile_sorted(&values, f64::from(p)));
    }
}

/// Roll one aggregate's datapoints for an epoch into a summary.
pub fn summarize_epoch(
    points: &[DataPoint],
    aggregate: &AggregateKey,
    epoch: u64,
    min_datapoints: usize,
) -> EpochOutcome {
    let rtts: Vec<f64> = points.iter().filter_map(|d| d.avg_rtt).collect();
    if points.len() < min_datapoints.max(1) || rtts.is_empty() {
        return EpochOutcome::LowData {
            aggregate: aggregate.clone(),
            epoch,
            datapoints: points.len(),
        };
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("datapoints".into(), points.len() as f64);
    let flows: BTreeSet<u64> = points.iter().map(|d| d.flow_id).collect();
    metrics.insert("flows".into(), flows.len() as f64);
    add_distribution(&mut metrics, "throughput", points.iter().map(|d| d.avg_throughput).collect());
    add_distribution(&mut metrics, "rtt", rtts);
    add_distribution(&mut metrics, "loss", points.iter().map(|d| d.loss_rate).collect());
    for (name, f) in [
        ("rate_mean", (|d: &DataPoint| d.avg_rate) as fn(&DataPoint) -> f64),
        ("slow_start_mean", |d| d.slow_start_fraction),
        ("app_limited_mean", |d| d.app_limited_fraction),
    ] {
        let mut v: Vec<f64> = points.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        metrics.insert(name.into(), sorted_mean(&v));
    }
    EpochOutcome::Summary(EpochSummary {
        aggregate: aggregate.clone(),
        epoch,
        metrics,
    })
}

pub fn group_by_aggregate(points: &[DataPoint]) -> BTreeMap<AggregateKey, Vec<DataPoint>> {
    let mut groups: BTreeMap<AggregateKey, Vec<DataPoint>> = BTreeMap::new();
    for p in points {
        groups.entry(p.aggregate.clone()).or_default().push(p.clone());
    }
    groups
}

pub const DATAPOINT_COLUMNS: [&str; 13] = [
    "second",
    "flow_id",
    "service_type",
    "subnet_id",
    "avg_throughput_bps",
    "min_rate_bps",
    "avg_rate_bps",
    "max_rate_bps",
    "loss_rate",
    "min_rtt_s",
    "avg_rtt_s",
    "slow_start_fraction",
    "app_limited_fraction",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_datapoints<W: Write>(w: W, points: &[DataPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(DATAPOINT_COLUMNS)?;
    for d in points {
        out.write_record([
            d.second.to_string(),
            d.flow_id.to_string(),
            d.aggregate.service_type.clone(),
            d.aggregate.subnet_id.clone(),
            d.avg_throughput.to_string(),
            d.min_rate.to_string(),
            d.avg_rate.to_string(),
            d.max_rate.to_string(),
            d.loss_rate.to_string(),
            opt(d.min_rtt),
            opt(d.avg_rtt),
            d.slow_start_fraction.to_string(),
            d.app_limited_fraction.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Read one numeric column from a CSV with a header row. Empty cells are
/// skipped.
pub fn read_column<R: Read>(r: R, column: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::invalid("metric", format!("no column named `{column}`")))?;
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(idx).unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| Error::invalid(column, format!("row {}: `{cell}` is not a number", row + 1)))?;
        values.push(v);
    }
    Ok(values)
}

pub fn write_epoch_summaries<W: Write>(w: W, outcomes: &[EpochOutcome]) -> Result<()> {
    let names = summary_metric_names();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["epoch".to_string(), "service_type".into(), "subnet_id".into(), "low_data".into()];
    header.extend(names.iter().cloned());
    out.write_record(&header)?;
    for o in outcomes {
        let mut row = Vec::with_capacity(header.len());
        match o {
            EpochOutcome::Summary(s) => {
                row.extend([
                    s.epoch.to_string(),
                    s.aggregate.service_type.clone(),
                    s.aggregate.subnet_id.clone(),
                    "0".into(),
                ]);
                row.extend(names.iter().map(|n| opt(s.get(n))));
            }
            EpochOutcome::LowData {
                aggregate,
                epoch,
                datapoints,
            } => {
                row.extend([
                    epoch.to_string(),
                    aggregate.service_type.clone(),
                    aggregate.subnet_id.clone(),
                    "1".into(),
                    datapoints.to_string(),
                ]);
                row.resize(header.len(), String::new());
            }
        }
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
