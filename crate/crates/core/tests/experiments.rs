use eunomia::harness::config::{ExperimentConfig, Protocol};
use eunomia::harness::oracle::check_causal;
use eunomia::harness::suites::{base_config, lossy_ft_config};
use eunomia::harness::trace::{oracle_events, parse_trace};
use eunomia::harness::{run_experiment, run_with_trace};
use eunomia::Error;

fn short(protocol: Protocol, seed: u64) -> ExperimentConfig {
    let mut cfg = base_config(protocol, seed);
    cfg.duration_ms = 2_000;
    cfg.drain_ms = 1_000;
    cfg.workload.warmup_ms = 200;
    cfg.workload.cooldown_ms = 200;
    cfg
}

#[test]
fn zero_duration_yields_an_empty_report() {
    for p in Protocol::ALL {
        let mut cfg = base_config(p, 1);
        cfg.duration_ms = 0;
        cfg.drain_ms = 0;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.ops.is_empty() && r.visibility.is_empty(), "{p}");
        assert_eq!(r.verdict.events, 0);
        assert!(r.verdict.passed());
    }
}

#[test]
fn every_protocol_runs_and_causal_ones_pass() {
    for p in Protocol::ALL {
        let r = run_experiment(&short(p, 7)).unwrap();
        assert!(r.counters.updates > 0 && r.counters.reads > 0, "{p}");
        assert_eq!(r.counters.still_pending, 0, "{p}");
        if p.is_causal() {
            assert!(r.verdict.passed(), "{p}: {:?}", r.verdict.violations.first());
        }
        // Every applied remote update is sampled exactly once.
        assert_eq!(r.visibility.len() as u64, r.counters.remote_applies, "{p}");
        // Writes whose reply was still in flight at the end are logged but not counted.
        assert!(r.verdict.writes as u64 >= r.counters.updates, "{p}");
    }
}

#[test]
fn eventual_consistency_adds_no_delay() {
    let r = run_experiment(&short(Protocol::Eventual, 3)).unwrap();
    assert!(r.visibility.iter().all(|s| s.extra() == 0));
}

#[test]
fn single_datacenter_has_no_remote_traffic() {
    for p in Protocol::ALL {
        let mut cfg = short(p, 2);
        cfg.deployment.num_dcs = 1;
        cfg.network.inter_dc_ms = vec![vec![0]];
        let r = run_experiment(&cfg).unwrap();
        assert!(r.visibility.is_empty(), "{p}");
        assert!(r.counters.updates > 0, "{p}");
        assert!(r.verdict.passed(), "{p}");
    }
}

#[test]
fn same_seed_same_report_and_trace() {
    for p in [Protocol::Eunomia, Protocol::SeqChain, Protocol::GstabVector] {
        let a = run_with_trace(&short(p, 11), true).unwrap();
        let b = run_with_trace(&short(p, 11), true).unwrap();
        assert_eq!(a.report, b.report, "{p}");
        assert_eq!(a.trace, b.trace, "{p}");
        let c = run_experiment(&short(p, 12)).unwrap();
        assert_ne!(a.report.trace_digest, c.trace_digest, "{p}");
    }
}

#[test]
fn persisted_trace_replays_to_the_same_verdict() {
    let out = run_with_trace(&short(Protocol::Eunomia, 5), true).unwrap();
    let events = oracle_events(&parse_trace(&out.trace.unwrap()).unwrap());
    assert_eq!(check_causal(&events).unwrap(), out.report.verdict);
}

#[test]
fn duplicating_every_batch_changes_nothing_downstream() {
    let plain = run_experiment(&short(Protocol::Eunomia, 4)).unwrap();
    let mut cfg = short(Protocol::Eunomia, 4);
    cfg.network.batch_dup_rate = 1.0;
    let dup = run_experiment(&cfg).unwrap();
    assert!(dup.counters.sim.duplicated > 0);
    assert_eq!(plain.emitted_uids(), dup.emitted_uids());
    assert_eq!(plain.counters.stream_violations, 0);
    assert_eq!(dup.counters.stream_violations, 0);
}

#[test]
fn replicated_stabilizer_emits_what_a_single_one_does() {
    for seed in [1, 2] {
        let mut ft = lossy_ft_config(seed);
        ft.duration_ms = 3_000;
        let mut plain = base_config(Protocol::Eunomia, seed);
        plain.duration_ms = 3_000;
        let a = run_experiment(&plain).unwrap();
        let b = run_experiment(&ft).unwrap();
        assert!(b.counters.sim.lost > 0 && b.counters.sim.duplicated > 0);
        assert_eq!(a.emitted_uids(), b.emitted_uids(), "seed {seed}");
        assert!(b.verdict.passed());
    }
}

#[test]
fn invalid_configs_report_every_field_path() {
    let mut cfg = base_config(Protocol::Eunomia, 1);
    cfg.deployment.partitions_per_dc = 0;
    cfg.workload.read_write = "90:20".into();
    match run_experiment(&cfg) {
        Err(Error::Config(errs)) => {
            let text = errs.to_string();
            assert!(text.contains("deployment.partitions_per_dc"), "{text}");
            assert!(text.contains("workload.read_write"), "{text}");
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}
