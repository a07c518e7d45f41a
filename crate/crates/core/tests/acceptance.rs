//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cctune::customizer::{
    sample_perturbation, BanditState, CustomizerConfig, Hyperparams, ParamBox, ParamRange,
};
use cctune::harness::{self, ArmOverride, CcKind, FlowSpec, RunOptions, Scenario, Simulation, TrafficModel};
use cctune::netsim::{BandwidthStep, LinkSpec, PolicerSpec};
use cctune::rewards::{preset_spec, Preset, RewardSpec, RewardTerm};
use cctune::vivace::{DecisionKind, ParamName, VivaceOverrides};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn within(limit: Duration, started: Instant, detail: String) -> Outcome {
    let took = started.elapsed();
    if took > limit {
        Err(format!("{detail}; took {took:.2?}, limit {limit:?}"))
    } else {
        Ok(detail)
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Acked bytes per connection between `from` and `to`, plus link loss over
/// the same window.
fn window_stats(scenario: &Scenario, from: f64, to: f64) -> (Vec<f64>, f64) {
    let mut sim = Simulation::new(scenario, ArmOverride::default()).unwrap();
    sim.run_until(from);
    let a0: BTreeMap<u64, u64> = sim.acked_bytes().clone();
    let c0 = sim.counters();
    sim.run_until(to);
    let c1 = sim.counters();
    let goodput = sim
        .acked_bytes()
        .iter()
        .map(|(id, b)| (b - a0.get(id).copied().unwrap_or(0)) as f64 * 8.0 / (to - from))
        .collect();
    let sent = (c1.sent - c0.sent) as f64;
    let lost = (c1.dropped() - c0.dropped()) as f64;
    (goodput, if sent > 0.0 { lost / sent } else { 0.0 })
}

fn c1_single_flow() -> Outcome {
    let t = Instant::now();
    let s = scenario(clean_link(), vec![vivace_flows(1, VivaceOverrides::default())], 60.0, 60.0, 1);
    let (goodput, loss) = window_stats(&s, 30.0, 60.0);
    let util = goodput[0] / 10e6;
    let detail = format!("goodput {:.1}% of capacity, loss {:.3}%", util * 100.0, loss * 100.0);
    if util >= 0.85 && loss < 0.01 {
        within(Duration::from_secs(5), t, detail)
    } else {
        Err(detail)
    }
}

fn c2_fairness() -> Outcome {
    let t = Instant::now();
    let s = scenario(clean_link(), vec![vivace_flows(2, VivaceOverrides::default())], 60.0, 60.0, 1);
    let (goodput, _) = window_stats(&s, 30.0, 60.0);
    let hi = goodput.iter().cloned().fold(f64::MIN, f64::max);
    let lo = goodput.iter().cloned().fold(f64::MAX, f64::min);
    let ratio = hi / lo;
    let detail = format!("throughput ratio {ratio:.3} ({:.2} / {:.2} Mbps)", hi / 1e6, lo / 1e6);
    if goodput.len() == 2 && ratio <= 1.5 {
        within(Duration::from_secs(10), t, detail)
    } else {
        Err(detail)
    }
}

fn c3_quadratic() -> Outcome {
    let t = Instant::now();
    let optimum = [0.3, 0.7];
    let reward = |y: &[f64]| 1.0 - (y[0] - optimum[0]).powi(2) - 2.0 * (y[1] - optimum[1]).powi(2);
    let hyper = Hyperparams {
        phi: 0.3,
        eta: 0.15,
        mu: 0.5,
        k: 30,
        ..Hyperparams::default()
    };
    let updates = 500;
    let mut hits = 0;
    let mut worst = f64::MAX;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = BanditState::new(vec![0.8, 0.2]);
        for _ in 0..updates {
            for _ in 0..hyper.k {
                let p = s.propose(&hyper, &mut rng);
                s.observe(reward(&p.y));
            }
            s.update(&hyper).unwrap();
        }
        let r = reward(&s.theta);
        worst = worst.min(r);
        if r >= 0.95 {
            hits += 1;
        }
    }
    let detail = format!("{hits}/20 seeds within 5% of the optimum after {updates} updates (worst {worst:.3})");
    if hits >= 18 {
        within(Duration::from_secs(10), t, detail)
    } else {
        Err(detail)
    }
}

fn c4_gradient_fidelity() -> Outcome {
    let t = Instant::now();
    type F = fn(&[f64]) -> f64;
    let funcs: [(&str, F, [f64; 3]); 3] = [
        ("linear", |y| 0.3 * y[0] - 0.2 * y[1] + 0.1 * y[2], [0.5, 0.5, 0.5]),
        (
            "quadratic",
            |y| 0.5 - (y[0] - 0.2).powi(2) - (y[1] - 0.8).powi(2) - (y[2] - 0.4).powi(2),
            [0.6, 0.3, 0.5],
        ),
        ("trig", |y| (3.0 * y[0]).sin() * (2.0 * y[1]).cos() + 0.5 * y[2] * y[2], [0.4, 0.6, 0.7]),
    ];
    let phi = 0.05;
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, (name, f, theta)) in funcs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let s = BanditState::new(theta.to_vec());
        let mut g = [0.0; 3];
        let n = 10_000;
        for _ in 0..n {
            let x = sample_perturbation(3, &mut rng);
            let r = f(&s.perturbed(phi, &x));
            for (gi, xi) in g.iter_mut().zip(&x) {
                *gi += r * xi / n as f64;
            }
        }
        let h = 1e-5;
        let oracle: Vec<f64> = (0..3)
            .map(|j| {
                let (mut a, mut b) = (*theta, *theta);
                a[j] += h;
                b[j] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect();
        let dot: f64 = g.iter().zip(&oracle).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
        let cos = dot / (norm(&g) * norm(&oracle));
        ok &= cos > 0.9;
        parts.push(format!("{name} {cos:.3}"));
    }
    let detail = format!("cosine similarity: {}", parts.join(", "));
    if ok {
        within(Duration::from_secs(10), t, detail)
    } else {
        Err(detail)
    }
}

fn policing_scenario(seed: u64, epochs: u32) -> Scenario {
    let mut s = scenario(
        policed_link(),
        vec![FlowSpec {
            aggregate: key("video", "a"),
            ..vivace_flows(1, VivaceOverrides::default())
        }],
        10.0 * f64::from(epochs),
        10.0,
        seed,
    );
    s.customize = true;
    s
}

/// (throughput, loss) of the configuration learned after 200 epochs,
/// measured over 20 evaluation epochs without learning.
fn learned_outcome(p: Preset, seed: u64, custom: &CustomizerConfig) -> (f64, f64) {
    let reward = preset_spec(p);
    let learned = harness::run(&policing_scenario(seed, 200), &reward, custom).unwrap();
    let theta = &learned.epochs.last().unwrap().theta;
    let cfg = custom.param_box.denormalize(theta, &custom.safe().unwrap()).unwrap();
    let mut eval = policing_scenario(seed + 1000, 20);
    eval.customize = false;
    let opts = RunOptions {
        fixed_config: Some(cfg),
        ..RunOptions::default()
    };
    let rep = harness::run_with(&eval, &reward, custom, &opts).unwrap();
    let sums: Vec<_> = rep.epochs.iter().filter_map(|e| e.summary()).collect();
    let mean = |m: &str| sums.iter().map(|s| s.get(m).unwrap()).sum::<f64>() / sums.len() as f64;
    (mean("throughput_mean"), mean("loss_mean"))
}

fn c5_policing_order() -> Outcome {
    let t = Instant::now();
    let custom = CustomizerConfig {
        param_box: ParamBox::new(vec![ParamRange {
            name: ParamName::rate_max,
            lower: 1e6,
            upper: 1e7,
            active: true,
        }])
        .unwrap(),
        hyper: Hyperparams {
            phi: 0.15,
            eta: 0.3,
            mu: 0.5,
            k: 3,
            ..Hyperparams::default()
        },
        safe_config: VivaceOverrides {
            rate_max: Some(2e6),
            ..VivaceOverrides::default()
        },
        ..CustomizerConfig::default()
    };
    let le = |a: f64, b: f64| a <= b * 1.05;
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 1..=5u64 {
        let r: Vec<(f64, f64)> = Preset::ALL.iter().map(|p| learned_outcome(*p, seed, &custom)).collect();
        let ordered = le(r[0].0, r[1].0) && le(r[1].0, r[2].0) && le(r[0].1, r[1].1) && le(r[1].1, r[2].1);
        wins += ordered as u32;
        rows.push(format!(
            "seed {seed} {} T {:.2}/{:.2}/{:.2} Mbps L {:.3}/{:.3}/{:.3}%",
            if ordered { "ok" } else { "violated" },
            r[0].0 / 1e6,
            r[1].0 / 1e6,
            r[2].0 / 1e6,
            r[0].1 * 100.0,
            r[1].1 * 100.0,
            r[2].1 * 100.0
        ));
    }
    let detail = format!("{wins}/5 seeds ordered P<=M<=A [{}]", rows.join("; "));
    if wins >= 3 {
        within(Duration::from_secs(120), t, detail)
    } else {
        Err(detail)
    }
}

/// Seconds after the step until the flow's rate first drops below 2 Mbps.
fn time_below_2mbps(brakes: bool) -> Option<f64> {
    let vivace = VivaceOverrides {
        brakes_enabled: Some(brakes),
        ..VivaceOverrides::default()
    };
    let s = scenario(step_link(30.0), vec![vivace_flows(1, vivace)], 40.0, 40.0, 1);
    let mut sim = Simulation::new(&s, ArmOverride::default()).unwrap();
    sim.run_until(30.0);
    for ms in 1..=10_000 {
        let now = 30.0 + f64::from(ms) * 1e-3;
        sim.run_until(now);
        if sim.connection_rates().iter().all(|(_, r)| *r < 2e6) {
            return Some(now - 30.0);
        }
    }
    None
}

fn c6_brakes() -> Outcome {
    let t = Instant::now();
    let rtt = 0.02;
    let with = time_below_2mbps(true);
    let without = time_below_2mbps(false);
    let fmt = |v: Option<f64>| v.map_or("never (10 s)".to_string(), |s| format!("{:.0} ms", s * 1e3));
    let detail = format!("below 2 Mbps after {} with brakes, {} without", fmt(with), fmt(without));
    let fast = with.is_some_and(|w| w <= 10.0 * rtt);
    let later = match (with, without) {
        (Some(w), Some(n)) => n > w,
        (Some(_), None) => true,
        _ => false,
    };
    if fast && later {
        within(Duration::from_secs(5), t, detail)
    } else {
        Err(detail)
    }
}

fn c7_safety_reversion() -> Outcome {
    let t = Instant::now();
    let change_epoch = 30u64;
    let epoch_s = 10.0;
    let mut link = clean_link();
    link.bandwidth_schedule = vec![BandwidthStep {
        at: change_epoch as f64 * epoch_s,
        bandwidth_bps: 1e6,
    }];
    let mut s = scenario(link, vec![vivace_flows(1, VivaceOverrides::default())], 45.0 * epoch_s, epoch_s, 3);
    s.customize = true;
    let reward = RewardSpec::new(
        vec![RewardTerm {
            metric: "throughput_mean".into(),
            coefficient: 1.0,
            tau: 10e6,
        }],
        1.0,
    )
    .unwrap();
    let custom = CustomizerConfig::default();
    let n_persist = custom.hyper.n_persist as u64;
    let rep = harness::run(&s, &reward, &custom).unwrap();
    let safe = cctune::customizer::Customizer::new(
        &custom,
        cctune::customizer::parse_origin(&s.calendar_origin).unwrap(),
        0,
    )
    .unwrap()
    .safe_theta()
    .to_vec();
    let recs: Vec<_> = rep.epochs.iter().collect();
    let probing_before = recs
        .iter()
        .filter(|r| r.epoch >= change_epoch - 5 && r.epoch < change_epoch)
        .all(|r| r.probing && r.deployed != safe);
    let back = recs
        .iter()
        .find(|r| r.epoch >= change_epoch && r.deployed == safe)
        .map(|r| r.epoch - change_epoch);
    let detail = format!(
        "safe config deployed {} epochs after the change (limit {}), probing beforehand: {probing_before}",
        back.map_or("never".into(), |b| b.to_string()),
        n_persist + 1
    );
    if probing_before && back.is_some_and(|b| b <= n_persist + 1) {
        within(Duration::from_secs(30), t, detail)
    } else {
        Err(detail)
    }
}

fn random_scenario(rng: &mut ChaCha8Rng, seed: u64) -> Scenario {
    let bw = rng.random_range(2e6..50e6);
    let delay = rng.random_range(0.005..0.05);
    let bdp = bw / 8.0 * 2.0 * delay;
    let mut link = LinkSpec::new(bw, delay, (bdp * rng.random_range(0.3..3.0)).max(3000.0) as u64);
    link.random_loss_prob = if rng.random_bool(0.3) { rng.random_range(0.0..0.02) } else { 0.0 };
    if rng.random_bool(0.3) {
        link.policer = Some(PolicerSpec {
            token_rate: bw / 8.0 * rng.random_range(0.2..0.8),
            bucket_depth: rng.random_range(5e3..2e5),
        });
    }
    if rng.random_bool(0.4) {
        link.bandwidth_schedule = vec![BandwidthStep {
            at: rng.random_range(5.0..25.0),
            bandwidth_bps: bw * rng.random_range(0.1..2.0),
        }];
    }
    let flows = (0..rng.random_range(1..4))
        .map(|i| {
            let traffic = match rng.random_range(0..3) {
                0 => TrafficModel::Elastic,
                1 => TrafficModel::Files {
                    median_bytes: rng.random_range(2e4..2e6),
                    sigma: 1.0,
                    mean_gap_s: rng.random_range(0.2..3.0),
                },
                _ => TrafficModel::Bursty {
                    app_rate_bps: rng.random_range(1e6..20e6),
                    mean_on_s: 1.0,
                    mean_off_s: 1.0,
                },
            };
            FlowSpec {
                cc: if rng.random_bool(0.8) { CcKind::Vivace } else { CcKind::Aimd },
                traffic,
                aggregate: key("svc", &format!("net{i}")),
                start_s: rng.random_range(0.0..5.0),
                stop_s: None,
                count: rng.random_range(1..3),
                vivace: VivaceOverrides::default(),
            }
        })
        .collect();
    scenario(link, flows, 30.0, 30.0, seed)
}

fn c8_early_decisions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut early = 0usize;
    let mut increases = 0usize;
    let runs = 30;
    for i in 0..runs {
        let s = random_scenario(&mut rng, i);
        let mut sim = Simulation::new(&s, ArmOverride::default()).unwrap();
        sim.keep_decisions(true);
        sim.run_until(s.duration_s);
        for (_, d) in sim.take_decisions() {
            if d.kind == DecisionKind::Early {
                early += 1;
                if d.rate_after > d.rate_before {
                    increases += 1;
                }
            }
        }
    }
    check(
        increases == 0 && early > 0,
        format!("{early} early decisions over {runs} random scenarios, {increases} increased the rate"),
    )
}

fn err<T: std::fmt::Debug>(e: proptest::test_runner::TestError<T>) -> String {
    e.to_string()
}

fn c9_invariants() -> Outcome {
    let cases = 1000;
    let runner = || TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let mut results: Vec<(&str, Result<(), String>)> = Vec::new();
    results.push((
        "utility",
        runner()
            .run(
                &(utility_cfg(), 0.01f64..1000.0, 0.01f64..1000.0, 0.0f64..1.0, -1.0f64..1.0),
                |(cfg, a, b, l, g)| check_utility(&cfg, a, b, l, g),
            )
            .map_err(err),
    ));
    results.push((
        "clip",
        runner()
            .run(&prop_oneof![any::<f64>(), -3.0f64..3.0], check_clip)
            .map_err(err),
    ));
    results.push((
        "unit-norm",
        runner()
            .run(&(1usize..12, any::<u64>()), |(d, s)| check_unit_norm(d, s))
            .map_err(err),
    ));
    results.push((
        "theta-box",
        runner()
            .run(
                &(
                    prop::collection::vec(-0.5f64..1.5, 1..5),
                    0.0f64..5.0,
                    0.0f64..1.0,
                    prop::collection::vec(-1.0f64..1.0, 0..40),
                    any::<u64>(),
                ),
                |(start, eta, phi, rewards, seed)| check_theta_box(start, eta, phi, rewards, seed),
            )
            .map_err(err),
    ));
    results.push((
        "token-bucket",
        runner()
            .run(&(1.0f64..1e7, 1500.0f64..1e6, arrivals()), |(r, d, a)| check_token_bucket(r, d, a))
            .map_err(err),
    ));
    results.push((
        "packet-conservation",
        runner()
            .run(
                &(1e5f64..1e8, 0u64..50_000, 0.0f64..0.3, arrivals(), any::<u64>()),
                |(bw, buf, loss, sends, seed)| check_packet_conservation(bw, buf, loss, sends, seed),
            )
            .map_err(err),
    ));
    results.push((
        "percentile",
        runner()
            .run(
                &(prop::collection::vec(-1e6f64..1e6, 1..200), 0.0f64..=100.0),
                |(v, p)| check_percentile(v, p),
            )
            .map_err(err),
    ));
    let failed: Vec<String> = results
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    let names: Vec<&str> = results.iter().map(|(n, _)| *n).collect();
    check(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} suites x {cases} cases held: {}", names.len(), names.join(", "))
        } else {
            failed.join("; ")
        },
    )
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("scenario.json");
    std::fs::write(
        &scen,
        r#"{
          "link": {"bandwidth_bps": 20e6, "prop_delay_ms": 15, "buffer_bytes": 75000,
                   "policer": {"rate_Bps": 1500000, "depth_B": 60000}, "loss_prob": 0.001},
          "flows": [
            {"cc": "vivace", "traffic": {"kind": "files", "median_bytes": 400000, "sigma": 1.0, "mean_gap_s": 2.0},
             "aggregate": {"service_type": "video", "subnet_id": "edge-1"}, "count": 2},
            {"cc": "aimd", "traffic": {"kind": "bursty", "app_rate_bps": 2e6, "mean_on_s": 1.0, "mean_off_s": 2.0},
             "aggregate": {"service_type": "web", "subnet_id": "edge-2"}}
          ],
          "duration_s": 200, "epoch_s": 20, "seed": 5
        }"#,
    )
    .unwrap();
    let exe = env!("CARGO_BIN_EXE_cctune");
    let run = |out: &Path| {
        Command::new(exe)
            .args(["run", "--scenario"])
            .arg(&scen)
            .args(["--seed", "11", "--out"])
            .arg(out)
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if !run(&a) || !run(&b) {
        return Err("cctune run failed".into());
    }
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    check(
        differing.is_empty() && names.len() >= 5,
        if differing.is_empty() {
            format!("{} CSV files byte-identical across two runs", names.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("single-flow utilization", c1_single_flow),
        ("two-flow fairness", c2_fairness),
        ("concave quadratic convergence", c3_quadratic),
        ("gradient estimator fidelity", c4_gradient_fidelity),
        ("policing preset ordering", c5_policing_order),
        ("emergency brakes", c6_brakes),
        ("safety reversion", c7_safety_reversion),
        ("early decisions only decrease", c8_early_decisions),
        ("invariant property suites", c9_invariants),
        ("byte-identical reruns", c10_determinism),
    ];
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if filter.is_some_and(|only| only != n) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = started.elapsed();
        match outcome {
            Ok(d) => println!("criterion {n:2} PASS {name}: {d} [{took:.2?}]"),
            Err(d) => {
                failures += 1;
                println!("criterion {n:2} FAIL {name}: {d} [{took:.2?}]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
