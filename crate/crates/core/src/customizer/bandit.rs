use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;

use super::Hyperparams;
use crate::{Error, Result};

/// Uniform draw from the unit sphere in `d` dimensions.
pub fn sample_perturbation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    assert!(d >= 1, "perturbation dimension must be >= 1");
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-150 && norm.is_finite() {
            let mut x: Vec<f64> = v.iter().map(|c| c / norm).collect();
            if d == 1 {
                x[0] = x[0].signum();
            }
            return x;
        }
    }
}

fn clamp_unit(v: &mut [f64]) {
    for c in v {
        *c = c.clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    /// Normalized point to deploy.
    pub y: Vec<f64>,
    /// Perturbation direction, `None` when the unperturbed point is deployed.
    pub x: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochFeedback {
    pub reward: f64,
    pub loss_mean: f64,
    pub rtt_p50: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevertReason {
    RewardDrop,
    LossAlarm,
    RttAlarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyVerdict {
    Continue,
    Revert(RevertReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// Reward recorded; waiting for more samples.
    Pending,
    Updated,
    Reverted(RevertReason),
}

/// Learner state of one (aggregate, context) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
    pub pending: Vec<Sample>,
    pub rewards: VecDeque<f64>,
    pub rtt_p50s: VecDeque<f64>,
    pub safe_theta: Vec<f64>,
    /// Set by a revert: the next epoch deploys `theta` without perturbation.
    pub deploy_unperturbed: bool,
    pub updates: u64,
}

impl BanditState {
    pub fn new(safe_theta: Vec<f64>) -> Self {
        let mut theta = safe_theta.clone();
        clamp_unit(&mut theta);
        BanditState {
            momentum: vec![0.0; theta.len()],
            theta: theta.clone(),
            pending: Vec::new(),
            rewards: VecDeque::new(),
            rtt_p50s: VecDeque::new(),
            safe_theta: theta,
            deploy_unperturbed: false,
            updates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// `clamp(theta + φ·x)`.
    pub fn perturbed(&self, phi: f64, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.theta.iter().zip(x).map(|(t, xi)| t + phi * xi).collect();
        clamp_unit(&mut y);
        y
    }

    pub fn propose<R: Rng + ?Sized>(&mut self, hyper: &Hyperparams, rng: &mut R) -> Proposal {
        if self.deploy_unperturbed {
            return Proposal {
                y: self.theta.clone(),
                x: None,
            };
        }
        let x = sample_perturbation(self.dim(), rng);
        self.propose_with(hyper.phi, x)
    }

    /// Deterministic half of [`propose`](Self::propose).
    pub fn propose_with(&mut self, phi: f64, x: Vec<f64>) -> Proposal {
        let y = self.perturbed(phi, &x);
        self.pending.push(Sample {
            x: x.clone(),
            reward: None,
        });
        Proposal { y, x: Some(x) }
    }

    /// Attach a reward to the oldest unobserved sample.
    pub fn observe(&mut self, reward: f64) -> bool {
        match self.pending.iter_mut().find(|s| s.reward.is_none()) {
            Some(s) => {
                s.reward = Some(reward);
                true
            }
            None => false,
        }
    }

    pub fn observed(&self) -> usize {
        self.pending.iter().filter(|s| s.reward.is_some()).count()
    }

    /// ḡ = mean r·x, m ← μm + (1−μ)ḡ, theta ← clamp(theta + ηm).
    pub fn update(&mut self, hyper: &Hyperparams) -> Result<()> {
        let have = self.observed();
        if have < hyper.k {
            return Err(Error::NotEnoughSamples { have, need: hyper.k });
        }
        let batch: Vec<Sample> = self.pending.drain(..hyper.k).collect();
        let k = batch.len() as f64;
        let mut g = vec![0.0; self.dim()];
        for s in &batch {
            let r = s.reward.unwrap_or(0.0);
            for (gi, xi) in g.iter_mut().zip(&s.x) {
                *gi += r * xi;
            }
        }
        for ((m, gi), t) in self.momentum.iter_mut().zip(&g).zip(self.theta.iter_mut()) {
            *m = hyper.mu * *m + (1.0 - hyper.mu) * (gi / k);
            *t += hyper.eta * *m;
        }
        clamp_unit(&mut self.theta);
        self.updates += 1;
        Ok(())
    }

    fn push_bounded(q: &mut VecDeque<f64>, v: f64, cap: usize) {
        q.push_back(v);
        while q.len() > cap {
            q.pop_front();
        }
    }

    /// Decide whether the latest epoch calls for the safe configuration.
    /// The reward history must already include the latest reward; the RTT
    /// history must not yet include the latest p50.
    pub fn safety_check(&self, hyper: &Hyperparams, loss_mean: f64, rtt_p50: f64) -> SafetyVerdict {
        if loss_mean > hyper.loss_alarm {
            return SafetyVerdict::Revert(RevertReason::LossAlarm);
        }
        if !self.rtt_p50s.is_empty() {
            let mut hist: Vec<f64> = self.rtt_p50s.iter().copied().collect();
            hist.sort_by(f64::total_cmp);
            let median = hist[(hist.len() - 1) / 2];
            if rtt_p50 > hyper.rtt_alarm * median {
                return SafetyVerdict::Revert(RevertReason::RttAlarm);
            }
        }
        let n = hyper.n_persist;
        if self.rewards.len() > n {
            let split = self.rewards.len() - n;
            let avg = self.rewards.iter().take(split).sum::<f64>() / split as f64;
            if self.rewards.iter().skip(split).all(|&r| r < avg - hyper.drop_margin) {
                return SafetyVerdict::Revert(RevertReason::RewardDrop);
            }
        }
        SafetyVerdict::Continue
    }

    /// Return to the safe point and forget everything learned since.
    pub fn revert(&mut self) {
        self.theta = self.safe_theta.clone();
        self.momentum.iter_mut().for_each(|m| *m = 0.0);
        self.pending.clear();
        self.rewards.clear();
        self.rtt_p50s.clear();
        self.deploy_unperturbed = true;
    }

    /// Record an epoch's outcome, run the safety rules and update when a
    /// full batch has been observed.
    pub fn finish_epoch(&mut self, hyper: &Hyperparams, fb: EpochFeedback) -> Result<StepOutcome> {
        let probing = !self.deploy_unperturbed;
        self.deploy_unperturbed = false;
        if probing {
            self.observe(fb.reward);
        }
        Self::push_bounded(&mut self.rewards, fb.reward, hyper.history_len);
        if let SafetyVerdict::Revert(why) = self.safety_check(hyper, fb.loss_mean, fb.rtt_p50) {
            self.revert();
            return Ok(StepOutcome::Reverted(why));
        }
        Self::push_bounded(&mut self.rtt_p50s, fb.rtt_p50, hyper.history_len);
        if self.observed() >= hyper.k {
            self.update(hyper)?;
            return Ok(StepOutcome::Updated);
        }
        Ok(StepOutcome::Pending)
    }

    /// Forget the outstanding sample of an epoch with no usable reward.
    pub fn skip_epoch(&mut self) {
        if self.deploy_unperturbed {
            return;
        }
        if let Some(pos) = self.pending.iter().rposition(|s| s.reward.is_none()) {
            self.pending.remove(pos);
        }
    }
}
