//! Identifiers and records shared by every protocol node.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::{HybridTimestamp, VectorTimestamp};

/// Simulated time in microseconds.
pub type Micros = u64;

pub const MILLIS: Micros = 1_000;

pub type DcIndex = usize;
pub type PartitionIndex = usize;
pub type ReplicaId = usize;

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Key(pub u64);

impl Key {
    /// Partition responsible for this key in a datacenter with `partitions` shards.
    pub fn partition(self, partitions: usize) -> PartitionIndex {
        (self.0 % partitions as u64) as PartitionIndex
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

/// Opaque payload. Cheap to clone; shipped to every datacenter.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Value(Arc<[u8]>);

impl Value {
    pub fn new(bytes: impl Into<Arc<[u8]>>) -> Self {
        Value(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Value({} bytes)", self.0.len())
    }
}

/// Field order doubles as the tie-break order for concurrent updates:
/// timestamp first, then origin partition, then key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UpdateId {
    pub local_ts: HybridTimestamp,
    pub origin_partition: PartitionIndex,
    pub key: Key,
}

impl fmt::Display for UpdateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@p{}/{}", self.key, self.origin_partition, self.local_ts)
    }
}

/// Globally unique handle of an update: update ids are only unique within
/// their origin datacenter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UpdateRef {
    pub dc: DcIndex,
    pub uid: UpdateId,
}

impl fmt::Display for UpdateRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dc{}:{}", self.dc, self.uid)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateRecord {
    pub key: Key,
    pub value: Value,
    pub vts: VectorTimestamp,
    pub origin_dc: DcIndex,
    pub origin_partition: PartitionIndex,
    pub uid: UpdateId,
}

impl UpdateRecord {
    pub fn update_ref(&self) -> UpdateRef {
        UpdateRef {
            dc: self.origin_dc,
            uid: self.uid,
        }
    }

    /// Last-writer-wins rank: origin timestamp, then origin partition, then
    /// origin datacenter.
    pub fn lww_rank(&self) -> (HybridTimestamp, PartitionIndex, DcIndex) {
        (
            self.vts.get(self.origin_dc),
            self.origin_partition,
            self.origin_dc,
        )
    }
}

/// Topology size and protocol periods of one deployment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentConfig {
    pub num_dcs: usize,
    pub partitions_per_dc: usize,
    /// Partition heartbeat period towards the local stabilizer.
    pub heartbeat_interval: Micros,
    /// Period of the stable-time computation.
    pub stabilization_interval: Micros,
    /// Period of the receiver's pending-queue scan.
    pub receiver_interval: Micros,
    /// Period of partition metadata batch flushes.
    pub batch_interval: Micros,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            num_dcs: 3,
            partitions_per_dc: 4,
            heartbeat_interval: 5 * MILLIS,
            stabilization_interval: MILLIS,
            receiver_interval: MILLIS,
            batch_interval: MILLIS,
        }
    }
}
