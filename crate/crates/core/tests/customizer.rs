mod common;

use cctune::customizer::{
    context_of, parse_origin, pearson, screen_parameters, BanditState, Context, Customizer, CustomizerConfig,
    DayKind, EpochFeedback, Hyperparams, ParamBox, ParamRange, StepOutcome, TodBucket,
};
use cctune::vivace::{ParamName, VivaceConfig};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fb(reward: f64) -> EpochFeedback {
    EpochFeedback {
        reward,
        loss_mean: 0.0,
        rtt_p50: 0.02,
    }
}

fn customizer(seed: u64) -> Customizer {
    Customizer::new(&CustomizerConfig::default(), parse_origin("2024-01-01T00:00:00").unwrap(), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn perturbations_have_unit_norm(d in 1usize..12, seed in any::<u64>()) {
        check_unit_norm(d, seed)?;
    }

    #[test]
    fn theta_stays_in_box(
        start in prop::collection::vec(-0.5f64..1.5, 1..5),
        eta in 0.0f64..5.0,
        phi in 0.0f64..1.0,
        rewards in prop::collection::vec(-1.0f64..1.0, 0..40),
        seed in any::<u64>(),
    ) {
        check_theta_box(start, eta, phi, rewards, seed)?;
    }

    #[test]
    fn contexts_do_not_share_state(rewards in prop::collection::vec(-1.0f64..1.0, 1..30), seed in any::<u64>(), a in 0usize..6, b in 0usize..6) {
        prop_assume!(a != b);
        let (ca, cb) = (Context::ALL[a], Context::ALL[b]);
        let k = key("video", "x");
        let mut c = customizer(seed);
        c.propose(&k, cb).unwrap();
        let before = c.state(&k, cb).unwrap().clone();
        for r in rewards {
            c.propose(&k, ca).unwrap();
            c.finish_epoch(&k, ca, fb(r)).unwrap();
        }
        prop_assert_eq!(c.state(&k, cb).unwrap(), &before);
    }

    #[test]
    fn denormalize_stays_in_bounds(theta in prop::collection::vec(0.0f64..=1.0, 3)) {
        let bx = ParamBox::default();
        let cfg = bx.denormalize(&theta, &VivaceConfig::default()).unwrap();
        for r in bx.active() {
            let v = cfg.get(r.name);
            prop_assert!(v >= r.lower && v <= r.upper, "{:?} = {}", r.name, v);
        }
        for (a, b) in bx.normalize(&cfg).iter().zip(&theta) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn linear_reward_moves_theta_uphill() {
    // mu = 0, k = 1: each update is eta * r * x, whose mean points along c
    let c = [0.6, -0.3, 0.2];
    let hyper = Hyperparams {
        mu: 0.0,
        k: 1,
        eta: 0.01,
        phi: 0.1,
        ..Hyperparams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 10_000;
    let mut sum = [0.0; 3];
    let mut along = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut s = BanditState::new(vec![0.5; 3]);
        let p = s.propose(&hyper, &mut rng);
        s.observe(c.iter().zip(&p.y).map(|(a, b)| a * b).sum());
        s.update(&hyper).unwrap();
        let mut dot = 0.0;
        for i in 0..3 {
            let d = s.theta[i] - 0.5;
            sum[i] += d;
            dot += d * c[i];
        }
        along.push(dot);
    }
    let n = trials as f64;
    let mean = along.iter().sum::<f64>() / n;
    let sd = (along.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let z = mean / (sd / n.sqrt());
    assert!(z > 3.0, "mean step along c {mean:.3e}, z = {z:.2}");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = sum.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / (norm(&sum) * norm(&c));
    assert!(cos > 0.8, "cosine {cos:.3}");
}

#[test]
fn revert_restores_safe_theta_exactly() {
    let k = key("video", "x");
    let ctx = Context::ALL[0];
    let mut c = customizer(1);
    let safe = c.safe_theta().to_vec();
    for _ in 0..9 {
        c.propose(&k, ctx).unwrap();
        c.finish_epoch(&k, ctx, fb(0.9)).unwrap();
    }
    assert_ne!(c.state(&k, ctx).unwrap().theta, safe);
    c.propose(&k, ctx).unwrap();
    let out = c
        .finish_epoch(
            &k,
            ctx,
            EpochFeedback {
                reward: 0.9,
                loss_mean: 0.5,
                rtt_p50: 0.02,
            },
        )
        .unwrap();
    assert!(matches!(out, StepOutcome::Reverted(_)));
    let st = c.state(&k, ctx).unwrap();
    assert_eq!(st.theta, safe);
    assert!(st.momentum.iter().all(|m| *m == 0.0));
    let (proposal, cfg) = c.propose(&k, ctx).unwrap();
    assert_eq!(proposal.y, safe);
    assert!(proposal.x.is_none());
    assert_eq!(&cfg, c.safe_config());
}

#[test]
fn persistent_reward_drop_reverts_after_n_persist() {
    let hyper = Hyperparams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = BanditState::new(vec![0.5, 0.5]);
    for _ in 0..20 {
        s.propose(&hyper, &mut rng);
        assert!(!matches!(s.finish_epoch(&hyper, fb(0.8)).unwrap(), StepOutcome::Reverted(_)));
    }
    let mut reverted_at = None;
    for i in 1..=hyper.n_persist + 2 {
        s.propose(&hyper, &mut rng);
        if let StepOutcome::Reverted(_) = s.finish_epoch(&hyper, fb(0.1)).unwrap() {
            reverted_at = Some(i);
            break;
        }
    }
    assert_eq!(reverted_at, Some(hyper.n_persist));
}

#[test]
fn calendar_contexts() {
    let origin = parse_origin("2024-01-01T00:00:00").unwrap(); // a Monday
    let at = |days: f64, hours: f64| context_of((days * 24.0 + hours) * 3600.0, origin);
    assert_eq!(at(0.0, 3.0).tod, TodBucket::Night);
    assert_eq!(at(0.0, 3.0).day, DayKind::Weekday);
    assert_eq!(at(5.0, 20.0).tod, TodBucket::Evening);
    assert_eq!(at(5.0, 20.0).day, DayKind::Weekend);
    assert_eq!(at(2.0, 8.0).tod, TodBucket::Day);
    assert_eq!(at(2.0, 7.999).tod, TodBucket::Night);
}

#[test]
fn screening_ranks_the_dominant_parameter_first() {
    let bx = ParamBox::new(
        [ParamName::beta, ParamName::gamma, ParamName::delta, ParamName::omega]
            .iter()
            .map(|&name| {
                let (lower, upper) = match name {
                    ParamName::beta => (1.0, 100.0),
                    ParamName::gamma => (0.1, 10.0),
                    ParamName::delta => (0.6, 0.95),
                    _ => (0.01, 0.5),
                };
                ParamRange {
                    name,
                    lower,
                    upper,
                    active: true,
                }
            })
            .collect(),
    )
    .unwrap();
    let rep = screen_parameters(&bx, &VivaceConfig::default(), 6, 24, 2, |cfg| {
        Ok(0.3 * (cfg.gamma * 2.0).sin() + 2.0 * cfg.delta + 0.01 * (cfg.beta * 0.3).cos())
    })
    .unwrap();
    assert_eq!(rep.selected[0], ParamName::delta);
    assert_eq!(rep.selected.len(), 2);
    assert_eq!(rep.probes.len(), 24);
    assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
}

#[test]
fn customizer_json_rejects_bad_hyperparameters() {
    for doc in [r#"{"hyper":{"phi":-0.1}}"#, r#"{"hyper":{"mu":1.0}}"#, r#"{"k_active":0}"#] {
        let cfg: CustomizerConfig = serde_json::from_str(doc).unwrap();
        assert!(cfg.validate().is_err(), "{doc}");
    }
    assert!(serde_json::from_str::<CustomizerConfig>(r#"{"params":[{"name":"nope","lower":0,"upper":1}]}"#).is_err());
}

#[test]
fn hand_computed_step() {
    let mut s = BanditState::new(vec![0.5, 0.5]);
    assert_eq!(s.perturbed(0.1, &[1.0, 0.0]), vec![0.6, 0.5]);
    assert_eq!(s.perturbed(0.8, &[1.0, 0.0]), vec![1.0, 0.5]);
    let hyper = Hyperparams {
        mu: 0.0,
        k: 1,
        eta: 0.1,
        ..Hyperparams::default()
    };
    s.propose_with(0.1, vec![1.0, 0.0]);
    s.observe(1.0);
    s.update(&hyper).unwrap();
    assert!((s.theta[0] - 0.6).abs() < 1e-12 && s.theta[1] == 0.5, "{:?}", s.theta);
    // with momentum 0.5 the same sample moves half as far
    let mut m = BanditState::new(vec![0.5, 0.5]);
    m.propose_with(0.1, vec![1.0, 0.0]);
    m.observe(1.0);
    m.update(&Hyperparams { mu: 0.5, ..hyper }).unwrap();
    assert!((m.theta[0] - 0.55).abs() < 1e-12);
}
