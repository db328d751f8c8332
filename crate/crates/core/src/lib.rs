//! Causally consistent geo-replication with deferred site stabilization.
//!
//! Partitions stamp local updates with hybrid clocks and stream them, in
//! batches interleaved with heartbeats, to a per-datacenter stabilizer that
//! ships them to remote datacenters in timestamp order once every local
//! partition has moved past them. A receiver at each destination releases
//! remote updates once their vector dependencies are visible.
//!
//! Everything runs inside a deterministic simulator ([`simnet`]) so the
//! protocol and its baselines can be compared and checked reproducibly.

pub mod baselines;
pub mod client;
pub mod clock;
pub mod error;
pub mod eunomia;
pub mod harness;
pub mod partition;
pub mod receiver;
pub mod simnet;
pub mod types;

pub use clock::{HybridTimestamp, VectorTimestamp};
pub use error::{Error, Result};
pub use types::{DcIndex, DeploymentConfig, Key, Micros, PartitionIndex, ReplicaId, UpdateId, UpdateRecord, UpdateRef, Value, MILLIS};
