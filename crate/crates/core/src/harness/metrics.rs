//! Samples collected during a run and their summaries.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::harness::oracle::Verdict;
use crate::simnet::SimStats;
use crate::types::{DcIndex, Micros, PartitionIndex, UpdateId};

/// One remote update becoming visible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisSample {
    pub origin: DcIndex,
    pub dest: DcIndex,
    pub origin_partition: PartitionIndex,
    pub installed_at: Micros,
    pub arrived_at: Micros,
    pub visible_at: Micros,
}

impl VisSample {
    /// Visibility delay with the data transfer factored out.
    pub fn extra(&self) -> Micros {
        self.visible_at.saturating_sub(self.arrived_at)
    }

    pub fn total(&self) -> Micros {
        self.visible_at.saturating_sub(self.installed_at)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKindTag {
    Read,
    Update,
}

/// One completed client operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpSample {
    pub dc: DcIndex,
    pub partition: PartitionIndex,
    pub kind: OpKindTag,
    pub issued_at: Micros,
    pub latency: Micros,
    /// Messages on the critical path besides the client request and reply.
    pub sync_hops: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmittedOp {
    pub at: Micros,
    pub uid: UpdateId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub reads: u64,
    pub updates: u64,
    /// Partition to stabilizer stream monotonicity failures.
    pub stream_violations: u64,
    /// Stabilizer entries that arrived at or below a computed stable time.
    pub stability_violations: u64,
    pub duplicate_deliveries: u64,
    pub remote_applies: u64,
    /// Remote updates shipped but not visible at the end of the run.
    pub still_pending: u64,
    /// Metadata and control messages that are not client traffic or payloads.
    pub metadata_messages: u64,
    pub sim: SimStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: String,
    pub seed: u64,
    pub window: (Micros, Micros),
    pub visibility: Vec<VisSample>,
    pub ops: Vec<OpSample>,
    /// Per datacenter, the stabilizer's outgoing order.
    pub emissions: Vec<Vec<EmittedOp>>,
    pub counters: Counters,
    pub verdict: Verdict,
    pub trace_digest: String,
}

impl MetricsReport {
    pub fn in_window(&self, t: Micros) -> bool {
        t >= self.window.0 && t < self.window.1
    }

    /// Extra visibility delays for one datacenter pair inside the window.
    pub fn extra_delays(&self, origin: DcIndex, dest: DcIndex) -> Vec<Micros> {
        self.visibility
            .iter()
            .filter(|s| s.origin == origin && s.dest == dest && self.in_window(s.installed_at))
            .map(VisSample::extra)
            .collect()
    }

    pub fn update_latencies(&self) -> Vec<Micros> {
        self.ops
            .iter()
            .filter(|o| o.kind == OpKindTag::Update && self.in_window(o.issued_at))
            .map(|o| o.latency)
            .collect()
    }

    pub fn visibility_csv(&self) -> String {
        let mut out = String::from("origin,dest,origin_partition,installed_at_us,arrived_at_us,visible_at_us,extra_us\n");
        for s in &self.visibility {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.origin,
                s.dest,
                s.origin_partition,
                s.installed_at,
                s.arrived_at,
                s.visible_at,
                s.extra()
            );
        }
        out
    }

    pub fn ops_csv(&self) -> String {
        let mut out = String::from("dc,partition,kind,issued_at_us,latency_us,sync_hops\n");
        for o in &self.ops {
            let kind = match o.kind {
                OpKindTag::Read => "read",
                OpKindTag::Update => "update",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                o.dc, o.partition, kind, o.issued_at, o.latency, o.sync_hops
            );
        }
        out
    }

    /// Percentiles of extra visibility delay per datacenter pair, in the window.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("origin,dest,");
        out.push_str(Summary::CSV_HEADER);
        out.push('\n');
        let m = self.emissions.len();
        for origin in 0..m {
            for dest in 0..m {
                if origin != dest {
                    let s = summarize(&self.extra_delays(origin, dest));
                    let _ = writeln!(out, "{origin},{dest},{}", s.csv_row());
                }
            }
        }
        out
    }

    /// Per datacenter, the emitted update ids in emission order.
    pub fn emitted_uids(&self) -> Vec<Vec<UpdateId>> {
        self.emissions
            .iter()
            .map(|ops| ops.iter().map(|o| o.uid).collect())
            .collect()
    }

    /// Emitted operations per datacenter per time bucket.
    pub fn emission_series(&self, bucket: Micros, end: Micros) -> Vec<Vec<u64>> {
        let n = end.div_ceil(bucket) as usize;
        self.emissions
            .iter()
            .map(|ops| {
                let mut counts = vec![0u64; n];
                for op in ops {
                    if let Some(c) = counts.get_mut((op.at / bucket) as usize) {
                        *c += 1;
                    }
                }
                counts
            })
            .collect()
    }
}

/// Nearest-rank percentile summary; `None` stands for "no data".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary(pub Option<Percentiles>);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: usize,
    pub p50: Micros,
    pub p90: Micros,
    pub p95: Micros,
    pub p99: Micros,
    pub mean: f64,
}

impl Summary {
    pub const CSV_HEADER: &'static str = "count,p50_us,p90_us,p95_us,p99_us,mean_us";

    pub fn csv_row(&self) -> String {
        match self.0 {
            Some(p) => format!("{},{},{},{},{},{:.1}", p.count, p.p50, p.p90, p.p95, p.p99, p.mean),
            None => "0,no data,no data,no data,no data,no data".to_string(),
        }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(p) => write!(
                f,
                "n={} p50={} p90={} p95={} p99={} mean={:.1}",
                p.count, p.p50, p.p90, p.p95, p.p99, p.mean
            ),
            None => f.write_str("no data"),
        }
    }
}

/// Smallest sample with at least `pct` percent of samples at or below it.
pub fn nearest_rank(sorted: &[Micros], pct: f64) -> Option<Micros> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (pct * sorted.len() as f64 / 100.0).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn summarize(samples: &[Micros]) -> Summary {
    if samples.is_empty() {
        return Summary(None);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let at = |p| nearest_rank(&sorted, p).expect("non-empty");
    Summary(Some(Percentiles {
        count: sorted.len(),
        p50: at(50.0),
        p90: at(90.0),
        p95: at(95.0),
        p99: at(99.0),
        mean: sorted.iter().map(|&s| s as f64).sum::<f64>() / sorted.len() as f64,
    }))
}

/// Empirical CDF as `(value, fraction at or below)` at each distinct value.
pub fn cdf(samples: &[Micros]) -> Vec<(Micros, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut out: Vec<(Micros, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank_on_one_to_hundred() {
        let s: Vec<Micros> = (1..=100).collect();
        let p = summarize(&s).0.unwrap();
        assert_eq!((p.p50, p.p90, p.p95, p.p99), (50, 90, 95, 99));
        assert_eq!(p.mean, 50.5);
    }

    #[test]
    fn single_sample_fills_every_percentile() {
        let p = summarize(&[7]).0.unwrap();
        assert_eq!((p.p50, p.p90, p.p95, p.p99, p.count), (7, 7, 7, 7, 1));
    }

    #[test]
    fn empty_input_is_marked() {
        let s = summarize(&[]);
        assert_eq!(s, Summary(None));
        assert_eq!(s.to_string(), "no data");
        assert!(s.csv_row().contains("no data"));
    }

    proptest! {
        #[test]
        fn cdf_is_monotone_and_ends_at_one(samples in proptest::collection::vec(0u64..1_000, 1..200)) {
            let c = cdf(&samples);
            prop_assert!(c.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            prop_assert!((c.last().unwrap().1 - 1.0).abs() < 1e-12);
        }

        #[test]
        fn percentiles_are_ordered_members(samples in proptest::collection::vec(0u64..1_000, 1..200)) {
            let p = summarize(&samples).0.unwrap();
            prop_assert!(p.p50 <= p.p90 && p.p90 <= p.p95 && p.p95 <= p.p99);
            for v in [p.p50, p.p90, p.p95, p.p99] {
                prop_assert!(samples.contains(&v));
            }
        }
    }
}
