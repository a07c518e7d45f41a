use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

macro_rules! real_params {
    ($( $(#[$doc:meta])* $field:ident = $default:expr, )*) => {
        /// Tunable parameter vector of the sender. Rates are bits/second,
        /// times are seconds, `omega` is Mbps² per utility unit.
        #[derive(Debug, Clone, PartialEq, Serialize)]
        pub struct VivaceConfig {
            $( $(#[$doc])* pub $field: f64, )*
            pub brakes_enabled: bool,
            /// Minimum ACKed packets before an MI may close.
            pub min_packets_per_mi: u32,
            /// Losses per MI below which loss is ignored.
            pub loss_persistence_count: u32,
            /// Cap on step-size doublings.
            pub max_step_doublings: u32,
        }

        /// Partial configuration: every field is optional and overrides a base.
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct VivaceOverrides {
            $(
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<f64>,
            )*
            #[serde(default, skip_serializing_if = "Option::is_none")]
            pub brakes_enabled: Option<bool>,
            #[serde(default, skip_serializing_if = "Option::is_none")]
            pub min_packets_per_mi: Option<u32>,
            #[serde(default, skip_serializing_if = "Option::is_none")]
            pub loss_persistence_count: Option<u32>,
            #[serde(default, skip_serializing_if = "Option::is_none")]
            pub max_step_doublings: Option<u32>,
        }

        /// Real-valued configuration fields addressable by name.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        #[allow(non_camel_case_types)]
        pub enum ParamName {
            $( $field, )*
        }

        impl ParamName {
            pub const ALL: &'static [ParamName] = &[$( ParamName::$field, )*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $( ParamName::$field => stringify!($field), )*
                }
            }
        }

        impl FromStr for ParamName {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $( stringify!($field) => Ok(ParamName::$field), )*
                    other => Err(Error::UnknownParameter(other.to_string())),
                }
            }
        }

        impl VivaceConfig {
            pub fn get(&self, name: ParamName) -> f64 {
                match name {
                    $( ParamName::$field => self.$field, )*
                }
            }

            pub fn set(&mut self, name: ParamName, value: f64) {
                match name {
                    $( ParamName::$field => self.$field = value, )*
                }
            }

            pub fn with_overrides(&self, o: &VivaceOverrides) -> Result<VivaceConfig> {
                let mut cfg = self.clone();
                $( if let Some(v) = o.$field { cfg.$field = v; } )*
                if let Some(v) = o.brakes_enabled { cfg.brakes_enabled = v; }
                if let Some(v) = o.min_packets_per_mi { cfg.min_packets_per_mi = v; }
                if let Some(v) = o.loss_persistence_count { cfg.loss_persistence_count = v; }
                if let Some(v) = o.max_step_doublings { cfg.max_step_doublings = v; }
                cfg.validate()?;
                Ok(cfg)
            }

            fn base_defaults() -> Self {
                VivaceConfig {
                    $( $field: $default, )*
                    brakes_enabled: true,
                    min_packets_per_mi: 10,
                    loss_persistence_count: 2,
                    max_step_doublings: 3,
                }
            }
        }
    };
}

real_params! {
    /// Throughput coefficient.
    alpha = 1.0,
    /// Loss penalty.
    beta = 10.0,
    /// Latency-gradient penalty.
    gamma = 1.0,
    /// Throughput exponent, in (0, 1).
    delta = 0.9,
    /// Gradient step size.
    omega = 0.05,
    init_rate = 1e6,
    ss_exit_loss = 0.02,
    /// RTT inflation ratio that ends slow start.
    ss_exit_latency = 1.5,
    ss_max_rate = 1e9,
    loss_filter = 0.01,
    latency_filter = 0.01,
    brake_loss = 0.10,
    brake_latency_ratio = 3.0,
    brake_tpt_gap_ratio = 2.0,
    /// Fraction of expected ACKs that allows an early decision.
    early_fraction = 0.5,
    mi_min_duration = 0.01,
    rate_min = 1e5,
    rate_max = 1e10,
    /// Largest rate change per decision, as a fraction of the current rate.
    max_step_fraction = 0.1,
}

impl Default for VivaceConfig {
    fn default() -> Self {
        let mut cfg = Self::base_defaults();
        cfg.omega = 0.05 * cfg.init_rate / 1e6;
        cfg
    }
}

impl VivaceConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: &str| Err(Error::invalid(field, reason));
        for &name in ParamName::ALL {
            if !self.get(name).is_finite() {
                return fail(name.as_str(), "must be finite");
            }
        }
        if self.alpha < 0.0 {
            return fail("alpha", "must be >= 0");
        }
        if self.beta < 0.0 {
            return fail("beta", "must be >= 0");
        }
        if self.gamma < 0.0 {
            return fail("gamma", "must be >= 0");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta", "must lie in (0, 1)");
        }
        if self.omega <= 0.0 {
            return fail("omega", "must be > 0");
        }
        if self.rate_min <= 0.0 || self.rate_max < self.rate_min {
            return fail("rate_min", "need 0 < rate_min <= rate_max");
        }
        if self.init_rate <= 0.0 {
            return fail("init_rate", "must be > 0");
        }
        if self.ss_max_rate <= 0.0 {
            return fail("ss_max_rate", "must be > 0");
        }
        if self.ss_exit_latency < 1.0 {
            return fail("ss_exit_latency", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.ss_exit_loss) {
            return fail("ss_exit_loss", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.loss_filter) {
            return fail("loss_filter", "must lie in [0, 1]");
        }
        if self.latency_filter < 0.0 {
            return fail("latency_filter", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.brake_loss) {
            return fail("brake_loss", "must lie in [0, 1]");
        }
        if self.brake_latency_ratio < 1.0 || self.brake_tpt_gap_ratio < 1.0 {
            return fail("brake_latency_ratio", "brake ratios must be >= 1");
        }
        if !(self.early_fraction > 0.0 && self.early_fraction <= 1.0) {
            return fail("early_fraction", "must lie in (0, 1]");
        }
        if self.mi_min_duration <= 0.0 {
            return fail("mi_min_duration", "must be > 0");
        }
        if self.max_step_fraction <= 0.0 {
            return fail("max_step_fraction", "must be > 0");
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for VivaceConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let overrides = VivaceOverrides::deserialize(d)?;
        let mut base = VivaceConfig::default();
        // omega tracks init_rate unless given explicitly
        if let (Some(init), None) = (overrides.init_rate, overrides.omega) {
            base.omega = 0.05 * init / 1e6;
        }
        base.with_overrides(&overrides).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
