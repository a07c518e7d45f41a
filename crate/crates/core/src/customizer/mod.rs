//! Per-(aggregate, context) bandit search over sender configurations.

mod bandit;
mod context;
mod screening;

pub use bandit::{
    sample_perturbation, BanditState, EpochFeedback, Proposal, RevertReason, SafetyVerdict, Sample, StepOutcome,
};
pub use context::{context_of, parse_origin, Context, DayKind, TodBucket, DEFAULT_CALENDAR_ORIGIN};
pub use screening::{pearson, screen_parameters, select_top, ScreeningReport};

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stats::AggregateKey;
use crate::vivace::{ParamName, VivaceConfig, VivaceOverrides};
use crate::{Error, Result};

/// Search range of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub name: ParamName,
    pub lower: f64,
    pub upper: f64,
    #[serde(default = "yes")]
    pub active: bool,
}

fn yes() -> bool {
    true
}

/// Bounds on the configurations the customizer may emit.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParamBox {
    params: Vec<ParamRange>,
}

impl<'de> Deserialize<'de> for ParamBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let params = Vec::<ParamRange>::deserialize(d)?;
        ParamBox::new(params).map_err(serde::de::Error::custom)
    }
}

impl Default for ParamBox {
    fn default() -> Self {
        let r = |name, lower, upper, active| ParamRange {
            name,
            lower,
            upper,
            active,
        };
        ParamBox::new(vec![
            r(ParamName::alpha, 0.5, 4.0, false),
            r(ParamName::beta, 1.0, 100.0, true),
            r(ParamName::gamma, 0.1, 10.0, false),
            r(ParamName::delta, 0.6, 0.95, true),
            r(ParamName::omega, 0.01, 0.5, false),
            r(ParamName::brake_loss, 0.02, 0.5, true),
        ])
        .expect("default box is valid")
    }
}

impl ParamBox {
    pub fn new(params: Vec<ParamRange>) -> Result<Self> {
        let b = ParamBox { params };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::invalid("params", "box needs at least one parameter"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.params {
            let field = p.name.as_str();
            if !seen.insert(p.name) {
                return Err(Error::invalid(field, "listed twice"));
            }
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return Err(Error::invalid(field, "need finite lower < upper"));
            }
            if p.name == ParamName::beta && p.lower <= 0.0 {
                return Err(Error::invalid(field, "loss penalty lower bound must be > 0"));
            }
            for v in [p.lower, p.upper] {
                let mut probe = VivaceConfig::default();
                probe.set(p.name, v);
                probe
                    .validate()
                    .map_err(|e| Error::invalid(field, format!("bound {v} is not a valid setting: {e}")))?;
            }
        }
        if self.dim() == 0 {
            return Err(Error::invalid("params", "at least one parameter must be active"));
        }
        Ok(())
    }

    pub fn params(&self) -> &[ParamRange] {
        &self.params
    }

    pub fn active(&self) -> impl Iterator<Item = &ParamRange> {
        self.params.iter().filter(|p| p.active)
    }

    pub fn dim(&self) -> usize {
        self.active().count()
    }

    /// Copy with exactly `names` active.
    pub fn with_active(&self, names: &[ParamName]) -> Result<Self> {
        let mut params = self.params.clone();
        for p in &mut params {
            p.active = names.contains(&p.name);
        }
        ParamBox::new(params)
    }

    /// Map a normalized point to a configuration: active parameters are
    /// affine images of `theta`, everything else comes from `frozen`.
    pub fn denormalize(&self, theta: &[f64], frozen: &VivaceConfig) -> Result<VivaceConfig> {
        if theta.len() != self.dim() {
            return Err(Error::invalid(
                "theta",
                format!("expected {} coordinates, got {}", self.dim(), theta.len()),
            ));
        }
        let mut cfg = frozen.clone();
        for (p, &t) in self.active().zip(theta) {
            let t = t.clamp(0.0, 1.0);
            cfg.set(p.name, p.lower + t * (p.upper - p.lower));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Inverse of [`denormalize`](Self::denormalize), clamped into the box.
    pub fn normalize(&self, cfg: &VivaceConfig) -> Vec<f64> {
        self.active()
            .map(|p| ((cfg.get(p.name) - p.lower) / (p.upper - p.lower)).clamp(0.0, 1.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Perturbation radius.
    pub phi: f64,
    /// Learning rate.
    pub eta: f64,
    /// Momentum weight.
    pub mu: f64,
    /// Samples averaged per update.
    pub k: usize,
    pub n_persist: usize,
    pub drop_margin: f64,
    pub loss_alarm: f64,
    pub rtt_alarm: f64,
    /// Reward/RTT history retained per state.
    pub history_len: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            phi: 0.05,
            eta: 0.1,
            mu: 0.8,
            k: 3,
            n_persist: 5,
            drop_margin: 0.3,
            loss_alarm: 0.15,
            rtt_alarm: 3.0,
            history_len: 96,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi.is_finite() && self.phi >= 0.0) {
            return Err(Error::invalid("phi", "must be >= 0"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid("eta", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::invalid("mu", "must lie in [0, 1)"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k", "must be >= 1"));
        }
        if self.n_persist == 0 {
            return Err(Error::invalid("n_persist", "must be >= 1"));
        }
        if self.history_len <= self.n_persist {
            return Err(Error::invalid("history_len", "must exceed n_persist"));
        }
        if !(self.drop_margin.is_finite() && self.drop_margin >= 0.0) {
            return Err(Error::invalid("drop_margin", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.loss_alarm) {
            return Err(Error::invalid("loss_alarm", "must lie in [0, 1]"));
        }
        if !(self.rtt_alarm.is_finite() && self.rtt_alarm >= 1.0) {
            return Err(Error::invalid("rtt_alarm", "must be >= 1"));
        }
        Ok(())
    }
}

/// Everything the `--params` file can set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomizerConfig {
    #[serde(rename = "params")]
    pub param_box: ParamBox,
    pub hyper: Hyperparams,
    /// Fallback configuration; also the starting point of every state.
    pub safe_config: VivaceOverrides,
    /// Size of the active set chosen by screening.
    pub k_active: usize,
    pub probes_per_param: usize,
}

impl Default for CustomizerConfig {
    fn default() -> Self {
        CustomizerConfig {
            param_box: ParamBox::default(),
            hyper: Hyperparams::default(),
            safe_config: VivaceOverrides::default(),
            k_active: 3,
            probes_per_param: 5,
        }
    }
}

impl CustomizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.param_box.validate()?;
        self.hyper.validate()?;
        self.safe()?;
        if !(1..=8).contains(&self.k_active) {
            return Err(Error::invalid("k_active", "must lie in 1..=8"));
        }
        if self.probes_per_param < 2 {
            return Err(Error::invalid("probes_per_param", "must be >= 2"));
        }
        Ok(())
    }

    pub fn safe(&self) -> Result<VivaceConfig> {
        VivaceConfig::default().with_overrides(&self.safe_config)
    }
}

type StateKey = (AggregateKey, Context);

/// All learner states plus the shared search box.
#[derive(Debug, Clone)]
pub struct Customizer {
    param_box: ParamBox,
    hyper: Hyperparams,
    safe: VivaceConfig,
    safe_theta: Vec<f64>,
    origin: NaiveDateTime,
    states: BTreeMap<StateKey, BanditState>,
    rng: ChaCha8Rng,
}

impl Customizer {
    pub fn new(cfg: &CustomizerConfig, origin: NaiveDateTime, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let safe = cfg.safe()?;
        let safe_theta = cfg.param_box.normalize(&safe);
        Ok(Customizer {
            param_box: cfg.param_box.clone(),
            hyper: cfg.hyper.clone(),
            safe,
            safe_theta,
            origin,
            states: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn param_box(&self) -> &ParamBox {
        &self.param_box
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn safe_config(&self) -> &VivaceConfig {
        &self.safe
    }

    pub fn safe_theta(&self) -> &[f64] {
        &self.safe_theta
    }

    pub fn context_at(&self, sim_time: f64) -> Context {
        context_of(sim_time, self.origin)
    }

    pub fn state(&self, key: &AggregateKey, ctx: Context) -> Option<&BanditState> {
        self.states.get(&(key.clone(), ctx))
    }

    pub fn states(&self) -> impl Iterator<Item = (&AggregateKey, Context, &BanditState)> {
        self.states.iter().map(|((k, c), s)| (k, *c, s))
    }

    fn state_mut(&mut self, key: &AggregateKey, ctx: Context) -> &mut BanditState {
        let safe = &self.safe_theta;
        self.states
            .entry((key.clone(), ctx))
            .or_insert_with(|| BanditState::new(safe.clone()))
    }

    /// Choose the configuration to deploy for `key` under `ctx`.
    pub fn propose(&mut self, key: &AggregateKey, ctx: Context) -> Result<(Proposal, VivaceConfig)> {
        let hyper = self.hyper.clone();
        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        let proposal = self.state_mut(key, ctx).propose(&hyper, &mut rng);
        self.rng = rng;
        let cfg = self.param_box.denormalize(&proposal.y, &self.safe)?;
        Ok((proposal, cfg))
    }

    pub fn finish_epoch(&mut self, key: &AggregateKey, ctx: Context, fb: EpochFeedback) -> Result<StepOutcome> {
        let hyper = self.hyper.clone();
        self.state_mut(key, ctx).finish_epoch(&hyper, fb)
    }

    /// Drop the outstanding sample of an epoch that produced no usable reward.
    pub fn skip_epoch(&mut self, key: &AggregateKey, ctx: Context) {
        self.state_mut(key, ctx).skip_epoch();
    }
}
