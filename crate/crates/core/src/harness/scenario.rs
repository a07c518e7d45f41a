use serde::{Deserialize, Serialize};

use crate::customizer::{parse_origin, DEFAULT_CALENDAR_ORIGIN};
use crate::netsim::LinkSpec;
use crate::stats::{AggregateKey, DEFAULT_MIN_DATAPOINTS};
use crate::vivace::{VivaceConfig, VivaceOverrides};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcKind {
    Vivace,
    Aimd,
}

impl CcKind {
    pub fn label(self) -> &'static str {
        match self {
            CcKind::Vivace => "vivace",
            CcKind::Aimd => "aimd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficModel {
    /// Always has data.
    #[default]
    Elastic,
    /// Open-loop file arrivals, one connection per file. Sizes are
    /// log-normal, gaps exponential.
    Files {
        median_bytes: f64,
        sigma: f64,
        mean_gap_s: f64,
    },
    /// One connection alternating between producing data at `app_rate_bps`
    /// and silence; period lengths are exponential.
    Bursty {
        app_rate_bps: f64,
        mean_on_s: f64,
        mean_off_s: f64,
    },
}

impl TrafficModel {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, f: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(f, "must be finite and > 0"))
            }
        };
        match *self {
            TrafficModel::Elastic => Ok(()),
            TrafficModel::Files {
                median_bytes,
                sigma,
                mean_gap_s,
            } => {
                pos(median_bytes, "median_bytes")?;
                pos(mean_gap_s, "mean_gap_s")?;
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(Error::invalid("sigma", "must be >= 0"));
                }
                Ok(())
            }
            TrafficModel::Bursty {
                app_rate_bps,
                mean_on_s,
                mean_off_s,
            } => {
                pos(app_rate_bps, "app_rate_bps")?;
                pos(mean_on_s, "mean_on_s")?;
                pos(mean_off_s, "mean_off_s")
            }
        }
    }
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub cc: CcKind,
    #[serde(default)]
    pub traffic: TrafficModel,
    pub aggregate: AggregateKey,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub stop_s: Option<f64>,
    /// Number of identical flows this entry stands for.
    #[serde(default = "one")]
    pub count: u32,
    /// Fixed sender settings, used when the aggregate is not customized.
    #[serde(default)]
    pub vivace: VivaceOverrides,
}

fn default_epoch() -> f64 {
    900.0
}

fn default_origin() -> String {
    DEFAULT_CALENDAR_ORIGIN.to_string()
}

fn default_min_datapoints() -> usize {
    DEFAULT_MIN_DATAPOINTS
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub link: LinkSpec,
    #[serde(default)]
    pub flows: Vec<FlowSpec>,
    pub duration_s: f64,
    #[serde(default = "default_epoch")]
    pub epoch_s: f64,
    pub seed: u64,
    #[serde(default = "default_origin")]
    pub calendar_origin: String,
    #[serde(default = "default_min_datapoints")]
    pub min_datapoints: usize,
    /// Let the customizer pick configurations for Vivace aggregates.
    #[serde(default = "yes")]
    pub customize: bool,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        if !(self.epoch_s.is_finite() && self.epoch_s >= 1.0 && self.epoch_s.fract() == 0.0) {
            return Err(Error::invalid("epoch_s", "must be a whole number of seconds >= 1"));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= self.epoch_s) {
            return Err(Error::invalid("duration_s", "must cover at least one epoch"));
        }
        parse_origin(&self.calendar_origin)?;
        for f in &self.flows {
            f.traffic.validate()?;
            if !(f.start_s.is_finite() && f.start_s >= 0.0) {
                return Err(Error::invalid("start_s", "must be >= 0"));
            }
            if let Some(stop) = f.stop_s {
                if !(stop.is_finite() && stop > f.start_s) {
                    return Err(Error::invalid("stop_s", "must be after start_s"));
                }
            }
            VivaceConfig::default().with_overrides(&f.vivace)?;
        }
        Ok(())
    }

    pub fn epochs(&self) -> u64 {
        (self.duration_s / self.epoch_s).floor() as u64
    }

    pub fn from_json(text: &str, origin: &std::path::Path) -> Result<Self> {
        let s: Scenario = crate::json::from_str(text, origin)?;
        s.validate()?;
        Ok(s)
    }
}
