//! Normalized linear rewards over epoch summary metrics.

use serde::{Deserialize, Serialize};

use crate::stats::{summary_metric_names, EpochSummary};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardTerm {
    pub metric: String,
    pub coefficient: f64,
    /// Value of one metric unit, e.g. `1e6` for "per Mbps".
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardSpec {
    pub terms: Vec<RewardTerm>,
    pub global_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Pacifist,
    Moderate,
    Aggressive,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pacifist" => Ok(Preset::Pacifist),
            "moderate" => Ok(Preset::Moderate),
            "aggressive" => Ok(Preset::Aggressive),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Pacifist, Preset::Moderate, Preset::Aggressive];

    /// (throughput, p75 RTT, loss) weights.
    pub fn weights(self) -> (f64, f64, f64) {
        match self {
            Preset::Pacifist => (1.0, 4.0, 8.0),
            Preset::Moderate => (2.0, 2.0, 4.0),
            Preset::Aggressive => (4.0, 1.0, 1.0),
        }
    }
}

pub const PRESET_TAU_THROUGHPUT: f64 = 10e6;
pub const PRESET_TAU_RTT: f64 = 0.1;
pub const PRESET_TAU_LOSS: f64 = 0.05;
pub const PRESET_GLOBAL_SCALE: f64 = 0.1;
pub const DEFAULT_GLOBAL_SCALE: f64 = 1.0;

pub fn preset(name: &str) -> Result<RewardSpec> {
    Ok(preset_spec(name.parse()?))
}

pub fn preset_spec(p: Preset) -> RewardSpec {
    let (a, b, g) = p.weights();
    RewardSpec {
        terms: vec![
            RewardTerm {
                metric: "throughput_mean".into(),
                coefficient: a,
                tau: PRESET_TAU_THROUGHPUT,
            },
            RewardTerm {
                metric: "rtt_p75".into(),
                coefficient: -b,
                tau: PRESET_TAU_RTT,
            },
            RewardTerm {
                metric: "loss_mean".into(),
                coefficient: -g,
                tau: PRESET_TAU_LOSS,
            },
        ],
        global_scale: PRESET_GLOBAL_SCALE,
    }
}

impl RewardSpec {
    pub fn new(terms: Vec<RewardTerm>, global_scale: f64) -> Result<Self> {
        let spec = RewardSpec { terms, global_scale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::invalid("terms", "at least one term is required"));
        }
        let known = summary_metric_names();
        for t in &self.terms {
            if !known.contains(&t.metric) {
                return Err(Error::invalid("metric", format!("`{}` is not a summary metric", t.metric)));
            }
            if !(t.tau.is_finite() && t.tau > 0.0) {
                return Err(Error::invalid("tau", format!("normalizer for `{}` must be > 0", t.metric)));
            }
            if !t.coefficient.is_finite() {
                return Err(Error::invalid("coefficient", format!("coefficient for `{}` must be finite", t.metric)));
            }
        }
        if !(self.global_scale.is_finite() && self.global_scale > 0.0) {
            return Err(Error::invalid("global_scale", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Unclipped, unscaled weighted sum.
    pub fn raw(&self, summary: &EpochSummary) -> Result<f64> {
        self.raw_with(|m| summary.get(m))
    }

    pub fn raw_with<F: Fn(&str) -> Option<f64>>(&self, lookup: F) -> Result<f64> {
        let mut raw = 0.0;
        for t in &self.terms {
            let v = lookup(&t.metric).ok_or_else(|| Error::MissingMetric(t.metric.clone()))?;
            raw += t.coefficient * v / t.tau;
        }
        Ok(raw)
    }

    pub fn compute(&self, summary: &EpochSummary) -> Result<f64> {
        Ok(clip(self.raw(summary)? * self.global_scale))
    }
}

pub fn compute_reward(spec: &RewardSpec, summary: &EpochSummary) -> Result<f64> {
    spec.compute(summary)
}

/// Clamp into [−1, 1]; NaN maps to −1.
pub fn clip(x: f64) -> f64 {
    if x.is_nan() {
        -1.0
    } else {
        x.clamp(-1.0, 1.0)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecDoc {
    Preset {
        preset: Preset,
        #[serde(default)]
        global_scale: Option<f64>,
    },
    Terms {
        terms: Vec<RewardTerm>,
        #[serde(default)]
        global_scale: Option<f64>,
    },
}

impl<'de> Deserialize<'de> for RewardSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = match SpecDoc::deserialize(d)? {
            SpecDoc::Preset { preset, global_scale } => {
                let mut s = preset_spec(preset);
                if let Some(g) = global_scale {
                    s.global_scale = g;
                }
                s
            }
            SpecDoc::Terms { terms, global_scale } => RewardSpec {
                terms,
                global_scale: global_scale.unwrap_or(DEFAULT_GLOBAL_SCALE),
            },
        };
        spec.validate().map_err(serde::de::Error::custom)?;
        Ok(spec)
    }
}
