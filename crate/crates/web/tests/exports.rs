use eunomia::harness::oracle::OracleEvent;
use eunomia::harness::trace::TraceWriter;
use eunomia::{HybridTimestamp, Key, UpdateId, UpdateRef};
use eunomia_web::{check_trace_json, straggler_json, visibility_cdf_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).expect("valid json")
}

#[test]
fn cdf_is_monotone_and_ends_at_one() {
    let v = parse(&visibility_cdf_json("eunomia", 3, 1_500, 1_000, 0, 1).unwrap());
    assert!(v["samples"].as_u64().unwrap() > 0);
    let pts = v["cdf"].as_array().unwrap();
    assert!(pts.len() <= 201);
    let mut prev = (0u64, 0.0f64);
    for p in pts {
        let (x, f) = (p[0].as_u64().unwrap(), p[1].as_f64().unwrap());
        assert!(x >= prev.0 && f > prev.1);
        prev = (x, f);
    }
    assert_eq!(prev.1, 1.0);
}

#[test]
fn bad_inputs_are_errors() {
    assert!(visibility_cdf_json("nope", 1, 1_000, 1_000, 0, 1).is_err());
    assert!(visibility_cdf_json("eunomia", 1, 1_000, 1_000, 1, 1).is_err());
    assert!(visibility_cdf_json("eunomia", 1, 0, 1_000, 0, 1).is_err());
    assert!(visibility_cdf_json("eunomia", 1, 1_000, 0, 0, 1).is_err());
    assert!(straggler_json("s-seq", 0, 1, 1_000).is_err());
    assert!(check_trace_json("{not json").is_err());
}

#[test]
fn straggler_slows_sequencer_clients() {
    let v = parse(&straggler_json("s-seq", 100, 1, 3_000).unwrap());
    let slow = v["straggler_latency"]["p50"].as_u64().unwrap();
    let base = v["baseline_latency"]["p50"].as_u64().unwrap();
    assert!(slow >= base + 50_000, "{slow} vs {base}");
}

#[test]
fn checker_reports_out_of_order_apply() {
    let u = |dc, ts| UpdateRef {
        dc,
        uid: UpdateId {
            local_ts: HybridTimestamp(ts),
            origin_partition: 0,
            key: Key(ts),
        },
    };
    let mut w = TraceWriter::new();
    let events = [
        OracleEvent::Write { session: 7, update: u(0, 1) },
        OracleEvent::Write { session: 7, update: u(0, 2) },
        OracleEvent::Apply { dc: 1, update: u(0, 2) },
        OracleEvent::Apply { dc: 1, update: u(0, 1) },
    ];
    for (t, e) in events.iter().enumerate() {
        w.oracle(t as u64, "test", e);
    }
    let v = parse(&check_trace_json(&w.into_text()).unwrap());
    assert_eq!(v["events"], 4);
    assert_eq!(v["violations"].as_array().unwrap().len(), 1);

    let empty = parse(&check_trace_json("").unwrap());
    assert_eq!(empty["violations"].as_array().unwrap().len(), 0);
}
