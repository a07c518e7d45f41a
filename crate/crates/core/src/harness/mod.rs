//! Experiment orchestration: the epoch loop, A/B runs, CDFs and CSV output.

mod engine;
mod scenario;

pub use engine::{ArmOverride, Simulation, WorkloadEvent, WorkloadKind};
pub use scenario::{CcKind, FlowSpec, Scenario, TrafficModel};

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::customizer::{
    parse_origin, screen_parameters, Context, Customizer, CustomizerConfig, EpochFeedback, RevertReason,
    ScreeningReport, StepOutcome,
};
use crate::netsim::LinkCounters;
use crate::rewards::RewardSpec;
use crate::stats::{
    self, group_by_aggregate, summarize_epoch, AggregateKey, DataPoint, EpochOutcome, EpochSummary,
};
use crate::vivace::{DecisionRecord, ParamName, VivaceConfig};
use crate::{Error, Result};

/// Sender choice for a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Each flow's own CC; Vivace aggregates customized when the scenario asks.
    Scenario,
    /// Vivace everywhere with fixed per-flow settings.
    Vivace,
    /// Vivace everywhere, customized.
    Customized,
    Aimd,
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scenario" => Ok(Arm::Scenario),
            "vivace" => Ok(Arm::Vivace),
            "customized" => Ok(Arm::Customized),
            "aimd" => Ok(Arm::Aimd),
            _ => Err(Error::invalid("cc", format!("unknown arm `{s}` (vivace, customized, aimd, scenario)"))),
        }
    }
}

impl Arm {
    fn override_cc(self) -> ArmOverride {
        ArmOverride {
            cc: match self {
                Arm::Scenario => None,
                Arm::Vivace | Arm::Customized => Some(CcKind::Vivace),
                Arm::Aimd => Some(CcKind::Aimd),
            },
        }
    }

    fn customizes(self, scenario: &Scenario) -> bool {
        match self {
            Arm::Scenario => scenario.customize,
            Arm::Customized => true,
            Arm::Vivace | Arm::Aimd => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub arm: Arm,
    /// Keep every Vivace rate decision in the report.
    pub keep_decisions: bool,
    /// Deploy this configuration to every Vivace aggregate, no learning.
    pub fixed_config: Option<VivaceConfig>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            arm: Arm::Scenario,
            keep_decisions: false,
            fixed_config: None,
        }
    }
}

/// What happened to one aggregate in one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub start_s: f64,
    pub context: Context,
    pub aggregate: AggregateKey,
    pub outcome: EpochOutcome,
    pub reward: Option<f64>,
    /// `None` when the aggregate is not customized or the epoch had low data.
    pub step: Option<StepOutcome>,
    /// Normalized point deployed, empty when not customized.
    pub deployed: Vec<f64>,
    /// Whether `deployed` carried a perturbation.
    pub probing: bool,
    /// Learner theta after the epoch.
    pub theta: Vec<f64>,
    pub config: Option<VivaceConfig>,
}

impl EpochRecord {
    pub fn summary(&self) -> Option<&EpochSummary> {
        match &self.outcome {
            EpochOutcome::Summary(s) => Some(s),
            EpochOutcome::LowData { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    pub datapoints: Vec<DataPoint>,
    pub workload: Vec<WorkloadEvent>,
    pub decisions: Vec<(u64, DecisionRecord)>,
    pub counters: LinkCounters,
    pub active_params: Vec<ParamName>,
    pub epoch_count: u64,
}

impl RunReport {
    pub fn updates(&self) -> usize {
        self.epochs
            .iter()
            .filter(|e| e.step == Some(StepOutcome::Updated))
            .count()
    }

    pub fn records_for<'a>(&'a self, key: &'a AggregateKey) -> impl Iterator<Item = &'a EpochRecord> + 'a {
        self.epochs.iter().filter(move |e| &e.aggregate == key)
    }
}

fn scenario_aggregates(s: &Scenario) -> Vec<AggregateKey> {
    let set: BTreeSet<AggregateKey> = s.flows.iter().map(|f| f.aggregate.clone()).collect();
    set.into_iter().collect()
}

const CUSTOMIZER_SEED_SALT: u64 = 0x6375_7374_6f6d_697a;

/// Run the full epoch loop: context, propose, deploy, simulate, summarize,
/// reward, learn.
pub fn run(scenario: &Scenario, reward: &RewardSpec, custom: &CustomizerConfig) -> Result<RunReport> {
    run_with(scenario, reward, custom, &RunOptions::default())
}

pub fn run_with(
    scenario: &Scenario,
    reward: &RewardSpec,
    custom: &CustomizerConfig,
    opts: &RunOptions,
) -> Result<RunReport> {
    scenario.validate()?;
    reward.validate()?;
    let origin = parse_origin(&scenario.calendar_origin)?;
    let mut customizer = Customizer::new(custom, origin, scenario.seed ^ CUSTOMIZER_SEED_SALT)?;
    let mut sim = Simulation::new(scenario, opts.arm.override_cc())?;
    sim.keep_decisions(opts.keep_decisions);
    let customize = opts.fixed_config.is_none() && opts.arm.customizes(scenario);
    let tuned: Vec<AggregateKey> = sim.vivace_aggregates();
    if let Some(cfg) = &opts.fixed_config {
        for key in &tuned {
            sim.set_aggregate_config(key, cfg.clone());
        }
    }
    let all_keys = scenario_aggregates(scenario);
    let n_epochs = scenario.epochs();
    let mut report = RunReport {
        epochs: Vec::new(),
        datapoints: Vec::new(),
        workload: sim.workload().to_vec(),
        decisions: Vec::new(),
        counters: LinkCounters::default(),
        active_params: customizer.param_box().active().map(|p| p.name).collect(),
        epoch_count: n_epochs,
    };

    for epoch in 0..n_epochs {
        let start = epoch as f64 * scenario.epoch_s;
        let end = start + scenario.epoch_s;
        let ctx = customizer.context_at(start);
        let mut deployed = Vec::new();
        if customize {
            for key in &tuned {
                let (proposal, cfg) = customizer.propose(key, ctx)?;
                sim.set_aggregate_config(key, cfg.clone());
                deployed.push((key.clone(), proposal, cfg));
            }
        }
        sim.run_until(end);
        let points = sim.take_datapoints();
        let groups = group_by_aggregate(&points);
        for key in &all_keys {
            let pts = groups.get(key).map(Vec::as_slice).unwrap_or(&[]);
            let outcome = summarize_epoch(pts, key, epoch, scenario.min_datapoints);
            let reward_value = match &outcome {
                EpochOutcome::Summary(s) => Some(reward.compute(s)?),
                EpochOutcome::LowData { .. } => None,
            };
            let mine = deployed.iter().find(|(k, _, _)| k == key);
            let mut record = EpochRecord {
                epoch,
                start_s: start,
                context: ctx,
                aggregate: key.clone(),
                outcome: outcome.clone(),
                reward: reward_value,
                step: None,
                deployed: Vec::new(),
                probing: false,
                theta: Vec::new(),
                config: sim.deployed_config(key).cloned(),
            };
            if let Some((_, proposal, cfg)) = mine {
                record.deployed = proposal.y.clone();
                record.probing = proposal.x.is_some();
                record.config = Some(cfg.clone());
                match (&outcome, reward_value) {
                    (EpochOutcome::Summary(s), Some(r)) => {
                        let fb = EpochFeedback {
                            reward: r,
                            loss_mean: s.get("loss_mean").unwrap_or(0.0),
                            rtt_p50: s.get("rtt_p50").unwrap_or(0.0),
                        };
                        record.step = Some(customizer.finish_epoch(key, ctx, fb)?);
                    }
                    _ => customizer.skip_epoch(key, ctx),
                }
                record.theta = customizer.state(key, ctx).map(|s| s.theta.clone()).unwrap_or_default();
            }
            report.epochs.push(record);
        }
        report.datapoints.extend(points);
    }
    report.decisions = sim.take_decisions();
    report.counters = sim.counters();
    Ok(report)
}

/// One row of the A/B delta table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
}

impl MetricDelta {
    pub fn delta(&self) -> f64 {
        self.b - self.a
    }
}

#[derive(Debug, Clone)]
pub struct AbReport {
    pub a: RunReport,
    pub b: RunReport,
    pub deltas: Vec<MetricDelta>,
}

/// Whole-run metrics over every datapoint plus the mean epoch reward.
pub fn run_metrics(report: &RunReport) -> Vec<(String, f64)> {
    let key = AggregateKey {
        service_type: "all".into(),
        subnet_id: "all".into(),
    };
    let mut out = Vec::new();
    if let EpochOutcome::Summary(s) = summarize_epoch(&report.datapoints, &key, 0, 1) {
        for name in stats::summary_metric_names() {
            if let Some(v) = s.get(&name) {
                out.push((name, v));
            }
        }
    }
    let rewards: Vec<f64> = report.epochs.iter().filter_map(|e| e.reward).collect();
    if !rewards.is_empty() {
        out.push(("reward_mean".into(), rewards.iter().sum::<f64>() / rewards.len() as f64));
    }
    out
}

/// Run two arms over the identical workload and tabulate metric deltas.
pub fn ab_compare(
    scenario: &Scenario,
    reward: &RewardSpec,
    custom: &CustomizerConfig,
    arm_a: Arm,
    arm_b: Arm,
) -> Result<AbReport> {
    let run_arm = |arm| {
        run_with(
            scenario,
            reward,
            custom,
            &RunOptions {
                arm,
                ..RunOptions::default()
            },
        )
    };
    let a = run_arm(arm_a)?;
    let b = run_arm(arm_b)?;
    let ma = run_metrics(&a);
    let mb = run_metrics(&b);
    let deltas = ma
        .iter()
        .filter_map(|(name, va)| {
            mb.iter().find(|(n, _)| n == name).map(|(_, vb)| MetricDelta {
                metric: name.clone(),
                a: *va,
                b: *vb,
            })
        })
        .collect();
    Ok(AbReport { a, b, deltas })
}

/// Empirical CDF with one row per distinct value.
pub fn cdf_points(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::EmptyInput { what: "cdf" });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    if let Some(last) = out.last_mut() {
        last.1 = 1.0;
    }
    Ok(out)
}

pub fn write_cdf<W: Write>(w: W, metric: &str, values: &[f64]) -> Result<()> {
    let points = cdf_points(values)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([metric, "cumulative_fraction"])?;
    for (v, f) in points {
        out.write_record([v.to_string(), f.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn emit_cdf(values: &[f64], metric: &str, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_cdf(BufWriter::new(file), metric, values)
}

/// Offline screening: one fixed-configuration run per probe, scored by the
/// mean epoch reward.
pub fn screen(scenario: &Scenario, reward: &RewardSpec, custom: &CustomizerConfig) -> Result<ScreeningReport> {
    custom.validate()?;
    let safe = custom.safe()?;
    let bx = &custom.param_box;
    let budget = custom.probes_per_param * bx.params().len();
    screen_parameters(bx, &safe, custom.probes_per_param, budget, custom.k_active, |cfg| {
        let rep = run_with(
            scenario,
            reward,
            custom,
            &RunOptions {
                fixed_config: Some(cfg.clone()),
                ..RunOptions::default()
            },
        )?;
        let rewards: Vec<f64> = rep.epochs.iter().filter_map(|e| e.reward).collect();
        Ok(if rewards.is_empty() {
            0.0
        } else {
            rewards.iter().sum::<f64>() / rewards.len() as f64
        })
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn step_label(step: Option<StepOutcome>, outcome: &EpochOutcome, tuned: bool) -> String {
    match (step, outcome) {
        (_, EpochOutcome::LowData { .. }) => "low_data".into(),
        (Some(StepOutcome::Pending), _) => "pending".into(),
        (Some(StepOutcome::Updated), _) => "updated".into(),
        (Some(StepOutcome::Reverted(r)), _) => format!(
            "reverted_{}",
            match r {
                RevertReason::RewardDrop => "reward_drop",
                RevertReason::LossAlarm => "loss_alarm",
                RevertReason::RttAlarm => "rtt_alarm",
            }
        ),
        (None, _) if tuned => "none".into(),
        (None, _) => "fixed".into(),
    }
}

pub fn write_trajectory<W: Write>(w: W, report: &RunReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["epoch", "start_s", "context", "service_type", "subnet_id", "step", "probing", "reward"]
        .map(String::from)
        .to_vec();
    header.extend(report.active_params.iter().map(|p| format!("deployed_{p}")));
    header.extend(report.active_params.iter().map(|p| format!("theta_{p}")));
    header.extend(report.active_params.iter().map(|p| format!("value_{p}")));
    out.write_record(&header)?;
    let d = report.active_params.len();
    for e in &report.epochs {
        let tuned = !e.deployed.is_empty();
        let mut row = vec![
            e.epoch.to_string(),
            e.start_s.to_string(),
            e.context.to_string(),
            e.aggregate.service_type.clone(),
            e.aggregate.subnet_id.clone(),
            step_label(e.step, &e.outcome, tuned),
            u8::from(e.probing).to_string(),
            e.reward.map(|r| r.to_string()).unwrap_or_default(),
        ];
        let col = |v: &[f64], i: usize| v.get(i).map(|x| x.to_string()).unwrap_or_default();
        row.extend((0..d).map(|i| col(&e.deployed, i)));
        row.extend((0..d).map(|i| col(&e.theta, i)));
        row.extend(report.active_params.iter().map(|&p| {
            e.config
                .as_ref()
                .filter(|_| tuned)
                .map(|c| c.get(p).to_string())
                .unwrap_or_default()
        }));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_workload<W: Write>(w: W, workload: &[WorkloadEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["at_s", "slot", "kind", "bytes"])?;
    for ev in workload {
        let (kind, bytes) = match ev.kind {
            WorkloadKind::Start => ("start", String::new()),
            WorkloadKind::Stop => ("stop", String::new()),
            WorkloadKind::File { bytes } => ("file", bytes.to_string()),
            WorkloadKind::BurstOn => ("burst_on", String::new()),
            WorkloadKind::BurstOff => ("burst_off", String::new()),
        };
        out.write_record([ev.at.to_string(), ev.slot.to_string(), kind.to_string(), bytes])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// CDF columns written for every run.
pub const CDF_METRICS: [&str; 3] = ["throughput", "rtt", "loss"];

/// Write every CSV of a run into `dir`.
pub fn write_run(dir: &Path, report: &RunReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    stats::write_datapoints(create(dir, "datapoints.csv")?, &report.datapoints)?;
    let outcomes: Vec<EpochOutcome> = report.epochs.iter().map(|e| e.outcome.clone()).collect();
    stats::write_epoch_summaries(create(dir, "epochs.csv")?, &outcomes)?;
    write_trajectory(create(dir, "trajectory.csv")?, report)?;
    write_workload(create(dir, "workload.csv")?, &report.workload)?;
    for metric in CDF_METRICS {
        let values: Vec<f64> = report
            .datapoints
            .iter()
            .filter_map(|d| match metric {
                "throughput" => Some(d.avg_throughput),
                "rtt" => d.avg_rtt,
                _ => Some(d.loss_rate),
            })
            .collect();
        if !values.is_empty() {
            write_cdf(create(dir, &format!("cdf_{metric}.csv"))?, metric, &values)?;
        }
    }
    Ok(())
}

pub fn write_ab(dir: &Path, ab: &AbReport) -> Result<()> {
    write_run(&dir.join("a"), &ab.a)?;
    write_run(&dir.join("b"), &ab.b)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = csv::Writer::from_writer(create(dir, "deltas.csv")?);
    out.write_record(["metric", "a", "b", "delta"])?;
    for d in &ab.deltas {
        out.write_record([d.metric.clone(), d.a.to_string(), d.b.to_string(), d.delta().to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_screening(dir: &Path, rep: &ScreeningReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = csv::Writer::from_writer(create(dir, "screening.csv")?);
    out.write_record(["param", "abs_correlation", "selected"])?;
    for (name, c) in &rep.correlations {
        out.write_record([
            name.to_string(),
            c.to_string(),
            u8::from(rep.selected.contains(name)).to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    let mut out = csv::Writer::from_writer(create(dir, "probes.csv")?);
    out.write_record(["param", "value", "reward"])?;
    for (name, v, r) in &rep.probes {
        out.write_record([name.to_string(), v.to_string(), r.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
