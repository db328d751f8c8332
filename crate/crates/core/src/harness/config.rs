//! Experiment configuration: TOML in, validated [`ExperimentConfig`] out.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::simnet::NodeId;
use crate::types::{DeploymentConfig, Micros, MILLIS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Eunomia,
    SSeq,
    ASeq,
    SeqChain,
    GstabScalar,
    GstabVector,
    Eventual,
}

impl Protocol {
    pub const ALL: [Protocol; 7] = [
        Protocol::Eunomia,
        Protocol::SSeq,
        Protocol::ASeq,
        Protocol::SeqChain,
        Protocol::GstabScalar,
        Protocol::GstabVector,
        Protocol::Eventual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Eunomia => "eunomia",
            Protocol::SSeq => "s-seq",
            Protocol::ASeq => "a-seq",
            Protocol::SeqChain => "seq-chain",
            Protocol::GstabScalar => "gstab-scalar",
            Protocol::GstabVector => "gstab-vector",
            Protocol::Eventual => "eventual",
        }
    }

    /// Whether the protocol promises causal consistency.
    pub fn is_causal(self) -> bool {
        !matches!(self, Protocol::ASeq | Protocol::Eventual)
    }

    pub fn uses_sequencer(self) -> bool {
        matches!(self, Protocol::SSeq | Protocol::ASeq | Protocol::SeqChain)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Protocol::ALL.iter().map(|p| p.name()).collect();
                format!("unknown protocol `{s}`; valid protocols: {}", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// One-way delay matrix between datacenters, milliseconds.
    pub inter_dc_ms: Vec<Vec<u64>>,
    /// One-way delay between nodes of one datacenter, microseconds.
    pub intra_dc_us: Micros,
    /// Loss probability on partition to stabilizer-replica links.
    pub batch_loss_rate: f64,
    /// Duplication probability on the same links.
    pub batch_dup_rate: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            inter_dc_ms: default_delays_ms(),
            intra_dc_us: 250,
            batch_loss_rate: 0.0,
            batch_dup_rate: 0.0,
        }
    }
}

/// Three datacenters, 80ms round trip from the first to the other two and
/// 160ms between those two.
pub fn default_delays_ms() -> Vec<Vec<u64>> {
    vec![vec![0, 40, 40], vec![40, 0, 80], vec![40, 80, 0]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockConfig {
    pub max_offset_us: u64,
    pub max_drift_ppm: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            max_offset_us: 1_000,
            max_drift_ppm: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyDistribution {
    Uniform,
    PowerLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub clients_per_dc: usize,
    pub key_count: u64,
    pub key_distribution: KeyDistribution,
    pub power_law_alpha: f64,
    /// `"reads:writes"`, e.g. `"90:10"`.
    pub read_write: String,
    pub value_size: usize,
    /// Mean of the exponential pause between a reply and the next request.
    pub think_time_us: Micros,
    pub warmup_ms: u64,
    pub cooldown_ms: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            clients_per_dc: 16,
            key_count: 10_000,
            key_distribution: KeyDistribution::Uniform,
            power_law_alpha: 1.0,
            read_write: "90:10".into(),
            value_size: 100,
            think_time_us: 10 * MILLIS,
            warmup_ms: 1_000,
            cooldown_ms: 1_000,
        }
    }
}

impl WorkloadSpec {
    /// Percentage of reads, if `read_write` is well formed.
    pub fn read_percent(&self) -> Option<u32> {
        let (r, w) = self.read_write.split_once(':')?;
        let r: u32 = r.trim().parse().ok()?;
        let w: u32 = w.trim().parse().ok()?;
        (r + w == 100).then_some(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EunomiaConfig {
    pub replicas: usize,
    /// Failure detector delay before a new leader is installed.
    pub detection_delay_ms: u64,
}

impl Default for EunomiaConfig {
    fn default() -> Self {
        EunomiaConfig {
            replicas: 1,
            detection_delay_ms: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequencerConfig {
    pub chain_length: usize,
}

impl Default for SequencerConfig {
    fn default() -> Self {
        SequencerConfig { chain_length: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GStabConfig {
    /// Sibling heartbeat period.
    pub heartbeat_interval_us: Micros,
    /// Local stable-time computation period.
    pub stabilization_interval_us: Micros,
}

impl Default for GStabConfig {
    fn default() -> Self {
        GStabConfig {
            heartbeat_interval_us: 10 * MILLIS,
            stabilization_interval_us: 5 * MILLIS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    CrashReplica {
        dc: usize,
        replica: usize,
        at_ms: u64,
    },
    StragglePartition {
        dc: usize,
        partition: usize,
        interval_ms: u64,
        from_ms: u64,
        to_ms: u64,
    },
    LoseAcks {
        dc: usize,
        replica: usize,
        rate: f64,
    },
    /// Extra one-way delay on one directed link, from `from_ms` on.
    SlowLink {
        src: String,
        dst: String,
        extra_us: Micros,
        #[serde(default)]
        from_ms: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub seed: u64,
    /// Clients issue operations during this period.
    pub duration_ms: u64,
    /// Extra time for in-flight updates to become visible.
    pub drain_ms: u64,
    pub deployment: DeploymentConfig,
    pub network: NetworkConfig,
    pub clocks: ClockConfig,
    pub workload: WorkloadSpec,
    pub eunomia: EunomiaConfig,
    pub sequencer: SequencerConfig,
    pub gstab: GStabConfig,
    pub faults: Vec<FaultSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: Protocol::Eunomia,
            seed: 1,
            duration_ms: 10_000,
            drain_ms: 2_000,
            deployment: DeploymentConfig::default(),
            network: NetworkConfig::default(),
            clocks: ClockConfig::default(),
            workload: WorkloadSpec::default(),
            eunomia: EunomiaConfig::default(),
            sequencer: SequencerConfig::default(),
            gstab: GStabConfig::default(),
            faults: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

/// Every problem found in a configuration, each with its field path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl ConfigErrors {
    fn single(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigErrors(vec![ConfigIssue {
            path: path.into(),
            message: message.into(),
        }])
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            let path = if issue.path.is_empty() { "." } else { &issue.path };
            write!(f, "{path}: {}", issue.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ExperimentConfig {
    /// Desk-scale defaults on the three-datacenter topology.
    pub fn preset(protocol: Protocol) -> Self {
        ExperimentConfig {
            protocol,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigErrors> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| ConfigErrors::single("", e.message().to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            ConfigErrors::single(path, e.inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn duration(&self) -> Micros {
        self.duration_ms * MILLIS
    }

    pub fn end_time(&self) -> Micros {
        (self.duration_ms + self.drain_ms) * MILLIS
    }

    /// Measurement window on origin install time.
    pub fn window(&self) -> (Micros, Micros) {
        let start = self.workload.warmup_ms * MILLIS;
        let end = self
            .duration()
            .saturating_sub(self.workload.cooldown_ms * MILLIS);
        (start, end.max(start))
    }

    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut issues = Vec::new();
        let mut bad = |path: &str, message: String| {
            issues.push(ConfigIssue {
                path: path.to_string(),
                message,
            })
        };
        let d = &self.deployment;
        let (m, n) = (d.num_dcs, d.partitions_per_dc);
        if m == 0 {
            bad("deployment.num_dcs", "must be at least 1".into());
        }
        if n == 0 {
            bad("deployment.partitions_per_dc", "must be at least 1".into());
        }
        for (name, v) in [
            ("heartbeat_interval", d.heartbeat_interval),
            ("stabilization_interval", d.stabilization_interval),
            ("receiver_interval", d.receiver_interval),
            ("batch_interval", d.batch_interval),
        ] {
            if v == 0 {
                bad(&format!("deployment.{name}"), "must be positive".into());
            }
        }
        let net = &self.network;
        if net.inter_dc_ms.len() != m {
            bad(
                "network.inter_dc_ms",
                format!("expected {m} rows, found {}", net.inter_dc_ms.len()),
            );
        } else {
            for (i, row) in net.inter_dc_ms.iter().enumerate() {
                if row.len() != m {
                    bad(
                        &format!("network.inter_dc_ms[{i}]"),
                        format!("expected {m} entries, found {}", row.len()),
                    );
                }
            }
        }
        if !(0.0..1.0).contains(&net.batch_loss_rate) {
            bad("network.batch_loss_rate", "must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&net.batch_dup_rate) {
            bad("network.batch_dup_rate", "must lie in [0, 1]".into());
        }
        if self.clocks.max_drift_ppm < 0.0 || self.clocks.max_drift_ppm >= 1e6 {
            bad("clocks.max_drift_ppm", "must lie in [0, 1e6)".into());
        }
        let w = &self.workload;
        if w.key_count == 0 {
            bad("workload.key_count", "must be at least 1".into());
        }
        if w.read_percent().is_none() {
            bad(
                "workload.read_write",
                format!("`{}` is not of the form reads:writes summing to 100", w.read_write),
            );
        }
        if !(w.power_law_alpha > 0.0) {
            bad("workload.power_law_alpha", "must be positive".into());
        }
        if self.eunomia.replicas == 0 {
            bad("eunomia.replicas", "must be at least 1".into());
        }
        if self.sequencer.chain_length == 0 {
            bad("sequencer.chain_length", "must be at least 1".into());
        }
        if self.gstab.heartbeat_interval_us == 0 {
            bad("gstab.heartbeat_interval_us", "must be positive".into());
        }
        if self.gstab.stabilization_interval_us == 0 {
            bad("gstab.stabilization_interval_us", "must be positive".into());
        }
        for (i, f) in self.faults.iter().enumerate() {
            let path = |field: &str| format!("faults[{i}].{field}");
            match f {
                FaultSpec::CrashReplica { dc, replica, .. } | FaultSpec::LoseAcks { dc, replica, .. } => {
                    if *dc >= m {
                        bad(&path("dc"), format!("unknown datacenter {dc}"));
                    }
                    if *replica >= self.eunomia.replicas {
                        bad(&path("replica"), format!("unknown replica {replica}"));
                    }
                    if let FaultSpec::LoseAcks { rate, .. } = f {
                        if !(0.0..1.0).contains(rate) {
                            bad(&path("rate"), "must lie in [0, 1)".into());
                        }
                    }
                }
                FaultSpec::StragglePartition {
                    dc,
                    partition,
                    interval_ms,
                    from_ms,
                    to_ms,
                } => {
                    if *dc >= m {
                        bad(&path("dc"), format!("unknown datacenter {dc}"));
                    }
                    if *partition >= n {
                        bad(&path("partition"), format!("unknown partition {partition}"));
                    }
                    if *interval_ms == 0 {
                        bad(&path("interval_ms"), "must be positive".into());
                    }
                    if from_ms > to_ms {
                        bad(&path("to_ms"), "must not precede from_ms".into());
                    }
                }
                FaultSpec::SlowLink { src, dst, .. } => {
                    for (field, text) in [("src", src), ("dst", dst)] {
                        match text.parse::<NodeId>() {
                            Ok(node) if self.node_exists(node) => {}
                            Ok(_) => bad(&path(field), format!("unknown node `{text}`")),
                            Err(e) => bad(&path(field), e),
                        }
                    }
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(issues))
        }
    }

    pub fn node_exists(&self, node: NodeId) -> bool {
        let m = self.deployment.num_dcs;
        let dc_ok = |dc: usize| dc < m;
        match node {
            NodeId::Client { dc, idx } => dc_ok(dc) && idx < self.workload.clients_per_dc,
            NodeId::Partition { dc, idx } => dc_ok(dc) && idx < self.deployment.partitions_per_dc,
            NodeId::Eunomia { dc, replica } => {
                dc_ok(dc) && self.protocol == Protocol::Eunomia && replica < self.eunomia.replicas
            }
            NodeId::Receiver { dc } => dc_ok(dc),
            NodeId::Sequencer { dc, idx } => {
                let len = if self.protocol == Protocol::SeqChain {
                    self.sequencer.chain_length
                } else {
                    1
                };
                dc_ok(dc) && self.protocol.uses_sequencer() && idx < len
            }
            NodeId::Stabilizer { dc } => {
                dc_ok(dc) && matches!(self.protocol, Protocol::GstabScalar | Protocol::GstabVector)
            }
            NodeId::Control => true,
        }
    }
}
