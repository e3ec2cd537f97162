//! End-to-end protocol flow on small networks.

use cob::adversary::{deadlock_scenario, ComponentRule, StrategyConfig};
use cob::sim::{collect_statistics, replay, run, run_batch, run_with_trace, SimConfig};

fn unanimous(m: usize) -> Vec<ComponentRule> {
    (0..m)
        .map(|c| ComponentRule::Unanimous {
            value: Some(format!("block-{c}")),
        })
        .collect()
}

#[test]
fn all_honest_unambiguous_certifies_fast() {
    let mut cfg = SimConfig::full_committee(20, 1.0, unanimous(4));
    cfg.seed = 7;
    let out = run(&cfg).unwrap();
    let m = &out.metrics;
    assert!(m.all_honest_halted, "timeout={:?}", m.timeout);
    assert!(m.outputs_agree);
    assert!(!m.safety.any(), "{:?}", m.safety);
    assert_eq!(m.ell, 0);
    assert_eq!(m.last_honest_broadcast_step, 4);
    assert_eq!(m.cgf_loops, 0);
    // T <= Omega + 2 Lambda + 7 lambda
    let bound = cfg.schedule.omega + 2 * cfg.schedule.big_lambda + 7 * cfg.schedule.lambda;
    assert!(m.certificate_time.unwrap() <= bound);
    assert!(m.halt_spread_ok);
    // Every component certified to the observed (non-bottom) value.
    let theta = m.output.as_ref().unwrap();
    assert!(theta.0.iter().all(|v| v.is_some()));
}

#[test]
fn all_bottom_observation_certifies_bottom() {
    let rules = vec![ComponentRule::Unanimous { value: None }; 3];
    let mut cfg = SimConfig::full_committee(15, 1.0, rules);
    cfg.seed = 9;
    let out = run(&cfg).unwrap();
    let m = &out.metrics;
    assert!(m.all_honest_halted);
    assert!(m.outputs_agree);
    let theta = m.output.as_ref().unwrap();
    assert!(theta.0.iter().all(|v| v.is_none()));
}

#[test]
fn same_seed_reproduces_trace_and_states() {
    let mut cfg = SimConfig::full_committee(15, 0.8, unanimous(2));
    cfg.seed = 11;
    let a = run_with_trace(&cfg, true).unwrap();
    let b = run_with_trace(&cfg, true).unwrap();
    assert_eq!(
        a.trace.as_ref().unwrap().to_bytes(),
        b.trace.as_ref().unwrap().to_bytes()
    );
    assert_eq!(a.metrics.state_digest, b.metrics.state_digest);
    assert_eq!(a.snapshots, b.snapshots);
    // Replaying the trace reproduces the states byte for byte.
    let (snaps, digest) = replay(&cfg, a.trace.as_ref().unwrap()).unwrap();
    assert_eq!(snaps, a.snapshots);
    assert_eq!(digest, a.metrics.state_digest);
}

#[test]
fn honest_split_resolves_by_step_five() {
    // Ambiguous components among honest-only players settle at step 3 and
    // certify right after; no coin rounds needed.
    let rules = vec![
        ComponentRule::Split {
            first: Some("x".into()),
            second: Some("y".into()),
            fraction: 0.5,
        },
        ComponentRule::Unanimous {
            value: Some("z".into()),
        },
    ];
    let mut cfg = SimConfig::full_committee(20, 1.0, rules);
    cfg.seed = 13;
    let out = run(&cfg).unwrap();
    let m = &out.metrics;
    assert!(m.all_honest_halted);
    assert_eq!(m.ell, 1);
    assert!(m.last_honest_broadcast_step <= 7);
    assert!(!m.safety.any());
    assert!(m.outputs_agree);
}

#[test]
fn crash_fraction_tolerated() {
    let mut cfg = SimConfig::full_committee(20, 0.8, unanimous(2));
    cfg.adversary = StrategyConfig::Crash { after_step: 0 };
    cfg.seed = 17;
    let out = run(&cfg).unwrap();
    assert!(out.metrics.all_honest_halted);
    assert!(out.metrics.outputs_agree);
    assert!(!out.metrics.safety.any());
}

#[test]
fn delayer_maintains_deadlock_then_resolves() {
    let mut cfg = SimConfig::full_committee(50, 0.8, deadlock_scenario(50, 0.8, 1, 1));
    cfg.adversary = StrategyConfig::FinalizationDelayer {
        mode: cob::adversary::DelayerMode::MaxDelay,
    };
    cfg.seed = 23;
    let out = run(&cfg).unwrap();
    let m = &out.metrics;
    assert!(m.all_honest_halted, "timeout={}", m.timeout);
    assert!(m.outputs_agree);
    assert!(!m.safety.any(), "{:?}", m.safety);
    assert_eq!(m.ell, 1);
    // The deadlock forces at least one genuine coin round.
    assert!(m.cgf_flip_rounds >= 1, "flip rounds {}", m.cgf_flip_rounds);
    assert!(m.last_honest_broadcast_step >= 7);
}

#[test]
fn batch_statistics_aggregate() {
    let cfg = SimConfig::full_committee(15, 1.0, unanimous(2));
    let runs = run_batch(&cfg, 5, 99).unwrap();
    assert_eq!(runs.len(), 5);
    let report = collect_statistics(&runs);
    assert_eq!(report.runs, 5);
    assert_eq!(report.all_halted_runs, 5);
    assert_eq!(report.safety_violation_runs, 0);
    assert!(report.outputs_agree_all);
    assert_eq!(report.mean_cgf_loops, 0.0);
}
