//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers or strings and returns a JSON string,
//! so the page needs no bundler. The `*_json` functions hold the logic and
//! are callable from native code too.

use eunomia::harness::metrics::{cdf, summarize, Summary};
use eunomia::harness::suites::{base_config, straggler_config, straggler_sample};
use eunomia::harness::trace::{oracle_events, parse_trace};
use eunomia::harness::{check_causal, run_experiment, ExperimentConfig, FaultSpec, Protocol};
use eunomia::{DcIndex, Micros, MILLIS};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Longest run the page may request, in simulated milliseconds.
pub const MAX_DURATION_MS: u64 = 20_000;
/// Points kept in a returned CDF.
const CDF_POINTS: usize = 200;

#[derive(Serialize)]
struct CdfOut {
    protocol: &'static str,
    samples: usize,
    summary: Summary,
    /// `[extra delay in µs, fraction]` pairs.
    cdf: Vec<(Micros, f64)>,
}

#[derive(Serialize)]
struct StragglerOut {
    protocol: &'static str,
    interval_ms: u64,
    healthy_extra: Summary,
    straggler_latency: Summary,
    baseline_latency: Summary,
}

#[derive(Serialize)]
struct CheckOut {
    events: usize,
    writes: usize,
    applies: usize,
    violations: Vec<String>,
}

fn protocol(name: &str) -> Result<Protocol, String> {
    Protocol::ALL
        .into_iter()
        .find(|p| p.name() == name)
        .ok_or_else(|| format!("unknown protocol {name:?}"))
}

fn short(mut cfg: ExperimentConfig, duration_ms: u64) -> Result<ExperimentConfig, String> {
    if duration_ms == 0 || duration_ms > MAX_DURATION_MS {
        return Err(format!("duration must be between 1 and {MAX_DURATION_MS} ms"));
    }
    cfg.duration_ms = duration_ms;
    cfg.drain_ms = 1_000;
    let margin = (duration_ms / 5).min(1_000);
    cfg.workload.warmup_ms = margin;
    cfg.workload.cooldown_ms = margin;
    let (from, to) = cfg.window();
    for f in &mut cfg.faults {
        if let FaultSpec::StragglePartition { from_ms, to_ms, .. } = f {
            (*from_ms, *to_ms) = (from / MILLIS, to / MILLIS);
        }
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn thin(points: Vec<(Micros, f64)>) -> Vec<(Micros, f64)> {
    if points.len() <= CDF_POINTS {
        return points;
    }
    let step = points.len().div_ceil(CDF_POINTS);
    let last = *points.last().expect("non-empty");
    let mut out: Vec<_> = points.into_iter().step_by(step).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Runs one simulation and returns the extra visibility delay CDF for
/// updates from `origin` seen at `dest`.
pub fn visibility_cdf_json(
    protocol_name: &str,
    seed: u64,
    duration_ms: u64,
    stabilization_us: Micros,
    origin: DcIndex,
    dest: DcIndex,
) -> Result<String, String> {
    let p = protocol(protocol_name)?;
    let mut cfg = base_config(p, seed);
    cfg.deployment.stabilization_interval = stabilization_us;
    let cfg = short(cfg, duration_ms)?;
    if origin >= cfg.deployment.num_dcs || dest >= cfg.deployment.num_dcs || origin == dest {
        return Err("origin and dest must be two different datacenters".into());
    }
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let extra = report.extra_delays(origin, dest);
    let out = CdfOut {
        protocol: p.name(),
        samples: extra.len(),
        summary: summarize(&extra),
        cdf: thin(cdf(&extra)),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Runs a protocol with one slow partition and again without it.
pub fn straggler_json(protocol_name: &str, interval_ms: u64, seed: u64, duration_ms: u64) -> Result<String, String> {
    let p = protocol(protocol_name)?;
    if interval_ms == 0 {
        return Err("interval must be positive".into());
    }
    let slow = short(straggler_config(p, interval_ms, seed), duration_ms)?;
    let base = short(base_config(p, seed), duration_ms)?;
    let s = straggler_sample(&run_experiment(&slow).map_err(|e| e.to_string())?);
    let b = straggler_sample(&run_experiment(&base).map_err(|e| e.to_string())?);
    let out = StragglerOut {
        protocol: p.name(),
        interval_ms,
        healthy_extra: summarize(&s.healthy_extra),
        straggler_latency: summarize(&s.straggler_latency),
        baseline_latency: summarize(&b.straggler_latency),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Checks a JSON-lines trace for causal violations.
pub fn check_trace_json(text: &str) -> Result<String, String> {
    let records = parse_trace(text).map_err(|e| e.to_string())?;
    let verdict = check_causal(&oracle_events(&records)).map_err(|e| e.to_string())?;
    let out = CheckOut {
        events: verdict.events,
        writes: verdict.writes,
        applies: verdict.applies,
        violations: verdict
            .violations
            .iter()
            .map(|v| format!("dc{} applied {} before {}", v.dc, v.update, v.missing))
            .collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn visibility_cdf(
    protocol: &str,
    seed: u32,
    duration_ms: u32,
    stabilization_us: u32,
    origin: u32,
    dest: u32,
) -> Result<String, JsError> {
    visibility_cdf_json(
        protocol,
        seed.into(),
        duration_ms.into(),
        stabilization_us.into(),
        origin as DcIndex,
        dest as DcIndex,
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn straggler(protocol: &str, interval_ms: u32, seed: u32, duration_ms: u32) -> Result<String, JsError> {
    straggler_json(protocol, interval_ms.into(), seed.into(), duration_ms.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn check_trace(text: &str) -> Result<String, JsError> {
    check_trace_json(text).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn protocols() -> String {
    let names: Vec<&str> = Protocol::ALL.iter().map(|p| p.name()).collect();
    names.join(",")
}

