use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Token-bucket policer parameters as they appear in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicerSpec {
    /// Token refill rate, bytes per second.
    #[serde(rename = "rate_Bps")]
    pub token_rate: f64,
    /// Bucket capacity, bytes.
    #[serde(rename = "depth_B")]
    pub bucket_depth: f64,
}

impl PolicerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.token_rate > 0.0 && self.token_rate.is_finite()) {
            return Err(Error::invalid("policer.rate_Bps", "must be positive"));
        }
        if !(self.bucket_depth >= 0.0 && self.bucket_depth.is_finite()) {
            return Err(Error::invalid("policer.depth_B", "must be non-negative"));
        }
        Ok(())
    }
}

/// Live token bucket. Starts full.
#[derive(Debug, Clone, PartialEq)]
pub struct Policer {
    spec: PolicerSpec,
    tokens: f64,
    last_refill: f64,
}

impl Policer {
    pub fn new(spec: PolicerSpec) -> Self {
        Self {
            spec,
            tokens: spec.bucket_depth,
            last_refill: 0.0,
        }
    }

    pub fn spec(&self) -> &PolicerSpec {
        &self.spec
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    pub fn last_refill(&self) -> f64 {
        self.last_refill
    }

    /// Refill to `now`, then spend `size` tokens if available.
    pub fn admit(&mut self, size: u32, now: f64) -> bool {
        let elapsed = (now - self.last_refill).max(0.0);
        self.tokens = (self.tokens + self.spec.token_rate * elapsed).min(self.spec.bucket_depth);
        if now > self.last_refill {
            self.last_refill = now;
        }
        let size = f64::from(size);
        if self.tokens >= size {
            self.tokens -= size;
            true
        } else {
            false
        }
    }
}
