//! Scenario builders and property checks shared by the integration tests.
#![allow(dead_code)]

use cctune::customizer::{sample_perturbation, BanditState, Hyperparams};
use cctune::harness::{CcKind, FlowSpec, Scenario, TrafficModel};
use cctune::netsim::{BandwidthStep, LinkSpec, Network, NetEvent, Packet, Policer, PolicerSpec};
use cctune::rewards::clip;
use cctune::stats::{percentile, AggregateKey};
use cctune::vivace::{utility, VivaceConfig, VivaceOverrides};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn key(service: &str, subnet: &str) -> AggregateKey {
    AggregateKey::new(service, subnet).unwrap()
}

pub fn vivace_flows(count: u32, vivace: VivaceOverrides) -> FlowSpec {
    FlowSpec {
        cc: CcKind::Vivace,
        traffic: TrafficModel::Elastic,
        aggregate: key("bulk", "a"),
        start_s: 0.0,
        stop_s: None,
        count,
        vivace,
    }
}

/// 10 Mbps, 20 ms RTT, one-BDP buffer.
pub fn clean_link() -> LinkSpec {
    LinkSpec::new(10e6, 0.01, 25_000)
}

pub fn scenario(link: LinkSpec, flows: Vec<FlowSpec>, duration_s: f64, epoch_s: f64, seed: u64) -> Scenario {
    Scenario {
        link,
        flows,
        duration_s,
        epoch_s,
        seed,
        calendar_origin: "2024-01-01T00:00:00".into(),
        min_datapoints: 5,
        customize: false,
    }
}

/// Clean link whose capacity falls from 10 to 1 Mbps at `at`.
pub fn step_link(at: f64) -> LinkSpec {
    let mut link = clean_link();
    link.bandwidth_schedule = vec![BandwidthStep { at, bandwidth_bps: 1e6 }];
    link
}

/// 20 Mbps path policed to 5 Mbps.
pub fn policed_link() -> LinkSpec {
    let mut link = LinkSpec::new(20e6, 0.01, 100_000);
    link.policer = Some(PolicerSpec {
        token_rate: 625_000.0,
        bucket_depth: 50_000.0,
    });
    link
}

// ---- property checks -------------------------------------------------------

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn utility_cfg() -> impl Strategy<Value = VivaceConfig> {
    (0.1f64..5.0, 0.0f64..50.0, 0.0f64..20.0, 0.05f64..0.95).prop_map(|(alpha, beta, gamma, delta)| {
        VivaceConfig {
            alpha,
            beta,
            gamma,
            delta,
            ..VivaceConfig::default()
        }
    })
}

/// Midpoint concavity in the rate, and monotonicity when loss and latency
/// terms are zero.
pub fn check_utility(cfg: &VivaceConfig, a: f64, b: f64, loss: f64, grad: f64) -> Result<(), TestCaseError> {
    let u = |x: f64| utility(cfg, x, loss, grad);
    let mid = u(0.5 * (a + b));
    let chord = 0.5 * (u(a) + u(b));
    prop_assert!(mid >= chord - 1e-9 * mid.abs().max(chord.abs()).max(1.0), "not concave: {mid} < {chord}");
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let (ulo, uhi) = (utility(cfg, lo, 0.0, 0.0), utility(cfg, hi, 0.0, 0.0));
    prop_assert!(uhi >= ulo - 1e-9 * uhi.abs().max(1.0), "not monotone: u({hi})={uhi} < u({lo})={ulo}");
    Ok(())
}

pub fn check_clip(x: f64) -> Result<(), TestCaseError> {
    let c = clip(x);
    prop_assert!((-1.0..=1.0).contains(&c));
    if (-1.0..=1.0).contains(&x) {
        prop_assert_eq!(c, x);
    } else if x.is_finite() {
        prop_assert_eq!(c, x.signum());
    }
    Ok(())
}

pub fn check_unit_norm(d: usize, seed: u64) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sample_perturbation(d, &mut rng);
    prop_assert_eq!(x.len(), d);
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    prop_assert!((norm - 1.0).abs() <= 1e-12, "norm {norm}");
    Ok(())
}

/// Arbitrary propose/feedback sequences keep theta and every deployed point
/// inside the unit box.
pub fn check_theta_box(
    start: Vec<f64>,
    eta: f64,
    phi: f64,
    rewards: Vec<f64>,
    seed: u64,
) -> Result<(), TestCaseError> {
    let hyper = Hyperparams {
        eta,
        phi,
        k: 2,
        ..Hyperparams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = BanditState::new(start);
    let inside = |v: &[f64]| v.iter().all(|c| (0.0..=1.0).contains(c));
    prop_assert!(inside(&s.theta));
    for (i, r) in rewards.into_iter().enumerate() {
        let p = s.propose(&hyper, &mut rng);
        prop_assert!(inside(&p.y), "deployed {:?}", p.y);
        let fb = cctune::customizer::EpochFeedback {
            reward: r,
            loss_mean: if i % 17 == 16 { 0.5 } else { 0.0 },
            rtt_p50: 0.02,
        };
        s.finish_epoch(&hyper, fb).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(inside(&s.theta), "theta {:?}", s.theta);
    }
    Ok(())
}

/// Admitted bytes never exceed the initial depth plus refill, and tokens stay
/// within `[0, depth]`.
pub fn check_token_bucket(rate: f64, depth: f64, arrivals: Vec<(f64, u32)>) -> Result<(), TestCaseError> {
    let mut p = Policer::new(PolicerSpec {
        token_rate: rate,
        bucket_depth: depth,
    });
    let mut now = 0.0;
    let mut admitted = 0.0;
    for (gap, size) in arrivals {
        now += gap;
        let before = p.tokens();
        if p.admit(size, now) {
            admitted += f64::from(size);
        } else {
            prop_assert!(p.tokens() < f64::from(size));
            prop_assert!(p.tokens() >= before - 1e-9);
        }
        prop_assert!(p.tokens() >= 0.0 && p.tokens() <= depth + 1e-9, "tokens {}", p.tokens());
        prop_assert!(admitted <= depth + rate * now + 1e-6, "admitted {admitted} > {}", depth + rate * now);
        prop_assert!((admitted + p.tokens() - depth - rate * now) <= 1e-6 * (1.0 + rate * now));
    }
    Ok(())
}

/// Every offered packet is either dropped or delivered exactly once, and
/// every delivery is acknowledged.
pub fn check_packet_conservation(
    bandwidth: f64,
    buffer: u64,
    loss: f64,
    sends: Vec<(f64, u32)>,
    seed: u64,
) -> Result<(), TestCaseError> {
    let mut link = LinkSpec::new(bandwidth, 0.005, buffer);
    link.random_loss_prob = loss;
    let mut net = Network::new(link);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut now = 0.0;
    let mut delivered = std::collections::BTreeSet::new();
    let mut acked = std::collections::BTreeSet::new();
    let mut dropped = 0u64;
    let collect = |evs: Vec<NetEvent>, delivered: &mut std::collections::BTreeSet<u64>, acked: &mut std::collections::BTreeSet<u64>| -> Result<(), TestCaseError> {
        for ev in evs {
            match ev {
                NetEvent::Delivered { pkt, .. } => prop_assert!(delivered.insert(pkt.id), "duplicate delivery"),
                NetEvent::Ack { pkt, .. } => {
                    prop_assert!(delivered.contains(&pkt.id), "ack before delivery");
                    prop_assert!(acked.insert(pkt.id), "duplicate ack");
                }
                NetEvent::Timer { .. } => {}
            }
        }
        Ok(())
    };
    for (i, (gap, size)) in sends.iter().enumerate() {
        now += gap;
        let evs = net.advance(now);
        collect(evs, &mut delivered, &mut acked)?;
        let pkt = Packet {
            id: i as u64,
            flow_id: 0,
            size: *size,
            sent_at: now,
        };
        if net.enqueue(pkt, now, &mut rng).is_drop() {
            dropped += 1;
        }
        let c = net.counters();
        prop_assert_eq!(c.sent, i as u64 + 1);
        prop_assert!(c.delivered + c.dropped() <= c.sent);
    }
    let evs = net.advance(now + 1e4);
    collect(evs, &mut delivered, &mut acked)?;
    let c = net.counters();
    prop_assert_eq!(c.dropped(), dropped);
    prop_assert_eq!(c.delivered + c.dropped(), c.sent);
    prop_assert_eq!(delivered.len() as u64, c.delivered);
    prop_assert_eq!(acked.len() as u64, c.delivered);
    Ok(())
}

pub fn check_percentile(values: Vec<f64>, p: f64) -> Result<(), TestCaseError> {
    let v = percentile(&values, p).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(values.contains(&v), "{v} not in sample");
    let below = values.iter().filter(|x| **x < v).count() as f64;
    let at_most = values.iter().filter(|x| **x <= v).count() as f64;
    let n = values.len() as f64;
    prop_assert!(below < (p / 100.0 * n).max(1.0), "rank too high");
    prop_assert!(at_most >= p / 100.0 * n, "rank too low");
    Ok(())
}

pub fn arrivals() -> impl Strategy<Value = Vec<(f64, u32)>> {
    prop::collection::vec((0.0f64..0.05, 40u32..3000), 1..80)
}

pub fn rel(a: f64, b: f64) -> bool {
    rel_close(a, b, 1e-9)
}
