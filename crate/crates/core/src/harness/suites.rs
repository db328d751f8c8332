//! Named multi-run experiments on the three-datacenter topology.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::Result;
use crate::harness::config::{ExperimentConfig, FaultSpec, Protocol};
use crate::harness::experiment::run_experiment;
use crate::harness::metrics::{cdf, summarize, MetricsReport, OpKindTag, Summary};
use crate::types::{DcIndex, PartitionIndex, ReplicaId, Micros, MILLIS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteName {
    Visibility,
    Straggler,
    Failures,
    Tradeoff,
}

impl SuiteName {
    pub const ALL: [SuiteName; 4] = [
        SuiteName::Visibility,
        SuiteName::Straggler,
        SuiteName::Failures,
        SuiteName::Tradeoff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteName::Visibility => "visibility",
            SuiteName::Straggler => "straggler",
            SuiteName::Failures => "failures",
            SuiteName::Tradeoff => "tradeoff",
        }
    }
}

impl fmt::Display for SuiteName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SuiteName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SuiteName::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = SuiteName::ALL.iter().map(|n| n.name()).collect();
                format!("unknown suite `{s}`; expected one of: {}", names.join(", "))
            })
    }
}

/// Datacenter holding the straggler partition.
pub const STRAGGLER_DC: DcIndex = 2;
pub const STRAGGLER_PARTITION: PartitionIndex = 0;
pub const STRAGGLE_INTERVALS_MS: [u64; 3] = [10, 100, 1000];

pub fn base_config(protocol: Protocol, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        ..ExperimentConfig::preset(protocol)
    }
}

/// Three Eunomia replicas per datacenter, lossy and duplicating batch links.
pub fn lossy_ft_config(seed: u64) -> ExperimentConfig {
    let mut cfg = base_config(Protocol::Eunomia, seed);
    cfg.eunomia.replicas = 3;
    cfg.network.batch_loss_rate = 0.2;
    cfg.network.batch_dup_rate = 0.2;
    cfg
}

/// Stretches one partition's communication period to `interval_ms` for the
/// whole measurement window.
pub fn straggler_config(protocol: Protocol, interval_ms: u64, seed: u64) -> ExperimentConfig {
    let mut cfg = base_config(protocol, seed);
    let (from, to) = cfg.window();
    cfg.faults.push(FaultSpec::StragglePartition {
        dc: STRAGGLER_DC,
        partition: STRAGGLER_PARTITION,
        interval_ms,
        from_ms: from / MILLIS,
        to_ms: to / MILLIS,
    });
    cfg
}

/// `replicas` Eunomia replicas in every datacenter; `crashes` lists
/// `(replica, at_ms)` crashes in datacenter 0.
pub fn failure_config(replicas: usize, crashes: &[(ReplicaId, u64)], seed: u64) -> ExperimentConfig {
    let mut cfg = base_config(Protocol::Eunomia, seed);
    cfg.eunomia.replicas = replicas;
    cfg.faults = crashes
        .iter()
        .map(|&(replica, at_ms)| FaultSpec::CrashReplica { dc: 0, replica, at_ms })
        .collect();
    cfg
}

pub const FAILURE_CRASH_1FT: &[(ReplicaId, u64)] = &[(0, 4_000)];
pub const FAILURE_CRASHES_3FT: &[(ReplicaId, u64)] = &[(0, 3_000), (1, 6_000)];

/// Runs every config, at most `jobs` at a time (0 picks a default), and
/// maps each report through `f` before the next run starts holding memory.
pub fn map_runs<T, F>(configs: Vec<ExperimentConfig>, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&ExperimentConfig, MetricsReport) -> T + Sync + Send,
{
    let one = |cfg: &ExperimentConfig| run_experiment(cfg).map(|r| f(cfg, r));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if jobs != 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .expect("thread pool");
            return pool.install(|| configs.par_iter().map(one).collect());
        }
    }
    let _ = jobs;
    configs.iter().map(one).collect()
}

#[derive(Clone, Debug, Default)]
pub struct SuiteOutput {
    /// `(file name, CSV contents)`.
    pub tables: Vec<(String, String)>,
    pub runs: usize,
    /// Oracle violations across the runs of causal protocols.
    pub violations: usize,
}

pub fn run_suite(suite: SuiteName, seeds: &[u64], jobs: usize) -> Result<SuiteOutput> {
    match suite {
        SuiteName::Visibility => visibility_suite(seeds, jobs),
        SuiteName::Straggler => straggler_suite(seeds, jobs),
        SuiteName::Failures => failures_suite(seeds, jobs),
        SuiteName::Tradeoff => tradeoff_suite(seeds, jobs),
    }
}

fn causal_violations(cfg: &ExperimentConfig, r: &MetricsReport) -> usize {
    if cfg.protocol.is_causal() {
        r.verdict.violations.len()
    } else {
        0
    }
}

const VISIBILITY_PROTOCOLS: [Protocol; 5] = [
    Protocol::Eunomia,
    Protocol::GstabScalar,
    Protocol::GstabVector,
    Protocol::SSeq,
    Protocol::Eventual,
];

const PAIRS: [(DcIndex, DcIndex); 2] = [(0, 1), (1, 2)];

fn cdf_csv(samples: &[Micros]) -> String {
    let mut out = String::from("extra_us,fraction\n");
    for (v, f) in cdf(samples) {
        let _ = writeln!(out, "{v},{f:.6}");
    }
    out
}

fn visibility_suite(seeds: &[u64], jobs: usize) -> Result<SuiteOutput> {
    let configs: Vec<_> = VISIBILITY_PROTOCOLS
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| base_config(p, s)))
        .collect();
    let runs = configs.len();
    let results = map_runs(configs, jobs, |cfg, r| {
        let pairs: Vec<Vec<Micros>> = PAIRS.iter().map(|&(o, d)| r.extra_delays(o, d)).collect();
        (cfg.protocol, pairs, causal_violations(cfg, &r))
    })?;
    let mut out = SuiteOutput {
        runs,
        ..SuiteOutput::default()
    };
    let mut summary = format!("protocol,origin,dest,{}\n", Summary::CSV_HEADER);
    for p in VISIBILITY_PROTOCOLS {
        for (i, &(o, d)) in PAIRS.iter().enumerate() {
            let samples: Vec<Micros> = results
                .iter()
                .filter(|r| r.0 == p)
                .flat_map(|r| r.1[i].iter().copied())
                .collect();
            let _ = writeln!(summary, "{p},{o},{d},{}", summarize(&samples).csv_row());
            out.tables.push((format!("visibility_{p}_dc{o}_dc{d}.csv"), cdf_csv(&samples)));
        }
    }
    out.violations = results.iter().map(|r| r.2).sum();
    out.tables.insert(0, ("visibility_summary.csv".into(), summary));
    Ok(out)
}

/// Measurements behind the straggler comparison, from one run.
#[derive(Clone, Debug, Default)]
pub struct StragglerSample {
    /// Extra delay at datacenter 1 of updates from the straggler's
    /// datacenter that originate at healthy partitions.
    pub healthy_extra: Vec<Micros>,
    /// Update latencies of clients writing to the straggler partition.
    pub straggler_latency: Vec<Micros>,
}

pub fn straggler_sample(r: &MetricsReport) -> StragglerSample {
    StragglerSample {
        healthy_extra: r
            .visibility
            .iter()
            .filter(|s| {
                s.origin == STRAGGLER_DC
                    && s.dest == 1
                    && s.origin_partition != STRAGGLER_PARTITION
                    && r.in_window(s.installed_at)
            })
            .map(|s| s.extra())
            .collect(),
        straggler_latency: r
            .ops
            .iter()
            .filter(|o| {
                o.kind == OpKindTag::Update
                    && o.dc == STRAGGLER_DC
                    && o.partition == STRAGGLER_PARTITION
                    && r.in_window(o.issued_at)
            })
            .map(|o| o.latency)
            .collect(),
    }
}

fn straggler_suite(seeds: &[u64], jobs: usize) -> Result<SuiteOutput> {
    let protocols = [Protocol::Eunomia, Protocol::SSeq, Protocol::GstabVector];
    let intervals: Vec<Option<u64>> = std::iter::once(None)
        .chain(STRAGGLE_INTERVALS_MS.iter().copied().map(Some))
        .collect();
    let mut configs = Vec::new();
    for &p in &protocols {
        for &i in &intervals {
            for &s in seeds {
                configs.push(match i {
                    Some(ms) => straggler_config(p, ms, s),
                    None => base_config(p, s),
                });
            }
        }
    }
    let runs = configs.len();
    let results = map_runs(configs, jobs, |cfg, r| {
        let interval = cfg.faults.iter().find_map(|f| match f {
            FaultSpec::StragglePartition { interval_ms, .. } => Some(*interval_ms),
            _ => None,
        });
        (cfg.protocol, interval, straggler_sample(&r), causal_violations(cfg, &r))
    })?;
    let mut table = format!(
        "protocol,interval_ms,metric,{}\n",
        Summary::CSV_HEADER
    );
    for &p in &protocols {
        for &i in &intervals {
            let runs: Vec<_> = results.iter().filter(|r| r.0 == p && r.1 == i).collect();
            let extra: Vec<Micros> = runs.iter().flat_map(|r| r.2.healthy_extra.iter().copied()).collect();
            let lat: Vec<Micros> = runs
                .iter()
                .flat_map(|r| r.2.straggler_latency.iter().copied())
                .collect();
            let label = i.map_or("none".to_string(), |ms| ms.to_string());
            let _ = writeln!(table, "{p},{label},healthy_extra,{}", summarize(&extra).csv_row());
            let _ = writeln!(table, "{p},{label},straggler_update_latency,{}", summarize(&lat).csv_row());
        }
    }
    Ok(SuiteOutput {
        tables: vec![("straggler.csv".into(), table)],
        runs,
        violations: results.iter().map(|r| r.3).sum(),
    })
}

pub const EMISSION_BUCKET: Micros = 100 * MILLIS;

fn failures_suite(seeds: &[u64], jobs: usize) -> Result<SuiteOutput> {
    let variants: [(&str, usize, &[(ReplicaId, u64)]); 3] = [
        ("1ft_crash", 1, FAILURE_CRASH_1FT),
        ("3ft_two_crashes", 3, FAILURE_CRASHES_3FT),
        ("3ft_fault_free", 3, &[]),
    ];
    let mut configs = Vec::new();
    for (_, replicas, crashes) in variants {
        for &s in seeds {
            configs.push(failure_config(replicas, crashes, s));
        }
    }
    let runs = configs.len();
    let end = configs.first().map_or(0, |c| c.end_time());
    let series = map_runs(configs, jobs, |cfg, r| {
        (
            r.emission_series(EMISSION_BUCKET, cfg.end_time())
                .first()
                .cloned()
                .unwrap_or_default(),
            r.verdict.violations.len(),
        )
    })?;
    let buckets = end.div_ceil(EMISSION_BUCKET) as usize;
    let mut table = String::from("time_ms");
    for (name, _, _) in variants {
        let _ = write!(table, ",{name}");
    }
    table.push('\n');
    let per_variant = seeds.len().max(1);
    for b in 0..buckets {
        let _ = write!(table, "{}", b as u64 * EMISSION_BUCKET / MILLIS);
        for v in 0..variants.len() {
            let total: u64 = series[v * seeds.len()..(v + 1) * seeds.len()]
                .iter()
                .map(|s| s.0.get(b).copied().unwrap_or(0))
                .sum();
            let rate = total as f64 / per_variant as f64 * (1_000_000.0 / EMISSION_BUCKET as f64);
            let _ = write!(table, ",{rate:.1}");
        }
        table.push('\n');
    }
    Ok(SuiteOutput {
        tables: vec![("failures_emission_rate_dc0.csv".into(), table)],
        runs,
        violations: series.iter().map(|s| s.1).sum(),
    })
}

fn tradeoff_suite(seeds: &[u64], jobs: usize) -> Result<SuiteOutput> {
    let configs: Vec<_> = Protocol::ALL
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| base_config(p, s)))
        .collect();
    let runs = configs.len();
    let results = map_runs(configs, jobs, |cfg, r| {
        let (start, end) = r.window;
        let completed = r.ops.iter().filter(|o| r.in_window(o.issued_at)).count();
        let secs = (end - start) as f64 / 1e6;
        let hops: Vec<u32> = r
            .ops
            .iter()
            .filter(|o| o.kind == OpKindTag::Update)
            .map(|o| o.sync_hops)
            .collect();
        let vis: Vec<Micros> = r
            .visibility
            .iter()
            .filter(|s| r.in_window(s.installed_at))
            .map(|s| s.extra())
            .collect();
        (
            cfg.protocol,
            if secs > 0.0 { completed as f64 / secs } else { 0.0 },
            r.update_latencies(),
            vis,
            hops,
            r.counters.metadata_messages as f64 / r.counters.updates.max(1) as f64,
            r.verdict.violations.len(),
            causal_violations(cfg, &r),
        )
    })?;
    let mut table = String::from(
        "protocol,throughput_ops_s,update_latency_p50_us,update_latency_p99_us,visibility_extra_p90_us,sync_hops_mean,metadata_msgs_per_update,oracle_violations\n",
    );
    for p in Protocol::ALL {
        let rs: Vec<_> = results.iter().filter(|r| r.0 == p).collect();
        let n = rs.len().max(1) as f64;
        let tput = rs.iter().map(|r| r.1).sum::<f64>() / n;
        let lat: Vec<Micros> = rs.iter().flat_map(|r| r.2.iter().copied()).collect();
        let vis: Vec<Micros> = rs.iter().flat_map(|r| r.3.iter().copied()).collect();
        let hops: Vec<u32> = rs.iter().flat_map(|r| r.4.iter().copied()).collect();
        let meta = rs.iter().map(|r| r.5).sum::<f64>() / n;
        let viol: usize = rs.iter().map(|r| r.6).sum();
        let lat = summarize(&lat).0;
        let vis = summarize(&vis).0;
        let cell = |v: Option<Micros>| v.map_or("no data".to_string(), |v| v.to_string());
        let hop_mean = if hops.is_empty() {
            0.0
        } else {
            hops.iter().map(|&h| h as f64).sum::<f64>() / hops.len() as f64
        };
        let _ = writeln!(
            table,
            "{p},{tput:.1},{},{},{},{hop_mean:.3},{meta:.2},{viol}",
            cell(lat.map(|l| l.p50)),
            cell(lat.map(|l| l.p99)),
            cell(vis.map(|v| v.p90)),
        );
    }
    Ok(SuiteOutput {
        tables: vec![("tradeoff.csv".into(), table)],
        runs,
        violations: results.iter().map(|r| r.7).sum(),
    })
}
