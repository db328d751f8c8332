//! Site stabilization service.
//!
//! Each replica keeps every not-yet-stable update id in an ordered map, plus
//! the highest timestamp heard from each local partition. The minimum of
//! those watermarks is the stable time: nothing at or below it can still
//! arrive, so everything at or below it can be shipped in timestamp order.
//!
//! With several replicas, partitions feed every replica and only the current
//! leader computes the stable time and ships. Followers prune what the leader
//! reports as stable. Ingestion is idempotent, so duplicated or resent
//! batches leave the state unchanged.

use std::collections::BTreeMap;

use crate::clock::HybridTimestamp;
use crate::error::{Error, Result};
use crate::partition::{BatchMessage, MetaEntry};
use crate::types::{Key, PartitionIndex, ReplicaId, UpdateId};

/// Result of one stabilization round on the leader.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Emission {
    pub stable: HybridTimestamp,
    /// Newly stable updates, ascending by (timestamp, partition, key).
    pub ops: Vec<MetaEntry>,
    /// Followers to inform of the new stable time (empty if it did not move).
    pub notify: Vec<ReplicaId>,
}

#[derive(Clone, Debug)]
pub struct EunomiaReplica {
    id: ReplicaId,
    replicas: Vec<ReplicaId>,
    leader: ReplicaId,
    replicated: bool,
    ops: BTreeMap<UpdateId, MetaEntry>,
    partition_time: Vec<HybridTimestamp>,
    stable_time: HybridTimestamp,
    last_emitted: HybridTimestamp,
    safety_violations: u64,
}

impl EunomiaReplica {
    /// A single, non-replicated stabilizer.
    pub fn standalone(partitions: usize) -> Self {
        let mut r = Self::replicated(0, vec![0], partitions);
        r.replicated = false;
        r
    }

    /// Replica `id` of `replicas`; the lowest id starts as leader.
    pub fn replicated(id: ReplicaId, replicas: Vec<ReplicaId>, partitions: usize) -> Self {
        let leader = replicas.iter().copied().min().unwrap_or(id);
        EunomiaReplica {
            id,
            replicas,
            leader,
            replicated: true,
            ops: BTreeMap::new(),
            partition_time: vec![HybridTimestamp::ZERO; partitions],
            stable_time: HybridTimestamp::ZERO,
            last_emitted: HybridTimestamp::ZERO,
            safety_violations: 0,
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn leader(&self) -> ReplicaId {
        self.leader
    }

    pub fn is_leader(&self) -> bool {
        !self.replicated || self.leader == self.id
    }

    pub fn partition_time(&self) -> &[HybridTimestamp] {
        &self.partition_time
    }

    pub fn last_emitted(&self) -> HybridTimestamp {
        self.last_emitted
    }

    pub fn pending(&self) -> impl Iterator<Item = &MetaEntry> {
        self.ops.values()
    }

    pub fn pending_len(&self) -> usize {
        self.ops.len()
    }

    /// Entries that arrived at or below an already computed stable time.
    /// Non-zero means a partition broke stream monotonicity.
    pub fn safety_violations(&self) -> u64 {
        self.safety_violations
    }

    fn slot(&mut self, partition: PartitionIndex) -> Result<&mut HybridTimestamp> {
        self.partition_time
            .get_mut(partition)
            .ok_or(Error::UnknownPartition(partition))
    }

    /// Ingests a partition batch and returns the acknowledgement watermark.
    pub fn ingest_batch(&mut self, batch: &BatchMessage) -> Result<HybridTimestamp> {
        let p = batch.partition;
        self.slot(p)?;
        for entry in &batch.entries {
            let ts = entry.ts();
            if ts <= self.partition_time[p] {
                continue;
            }
            if ts <= self.stable_time {
                self.safety_violations += 1;
            }
            self.partition_time[p] = ts;
            // A follower may hear about an update only after the leader has
            // already shipped it.
            if ts > self.last_emitted {
                self.ops.insert(entry.uid, entry.clone());
            }
        }
        if let Some(hb) = batch.heartbeat {
            self.ingest_heartbeat(p, hb)?;
        }
        Ok(self.partition_time[p])
    }

    pub fn ingest_heartbeat(&mut self, partition: PartitionIndex, ts: HybridTimestamp) -> Result<()> {
        let slot = self.slot(partition)?;
        *slot = (*slot).max(ts);
        Ok(())
    }

    pub fn current_stable_time(&self) -> HybridTimestamp {
        self.partition_time.iter().copied().min().unwrap_or_default()
    }

    /// Stabilization round. Followers of a replicated service do nothing.
    pub fn process_stable(&mut self) -> Option<Emission> {
        if !self.is_leader() {
            return None;
        }
        let stable = self.current_stable_time().max(self.stable_time);
        self.stable_time = stable;

        let ops = self.take_stable(stable);
        let advanced = stable > self.last_emitted;
        self.last_emitted = self.last_emitted.max(stable);
        let notify = if self.replicated && advanced {
            self.replicas.iter().copied().filter(|&r| r != self.id).collect()
        } else {
            Vec::new()
        };
        Some(Emission { stable, ops, notify })
    }

    fn take_stable(&mut self, stable: HybridTimestamp) -> Vec<MetaEntry> {
        let first_unstable = UpdateId {
            local_ts: stable.next(),
            origin_partition: 0,
            key: Key(0),
        };
        let rest = self.ops.split_off(&first_unstable);
        std::mem::replace(&mut self.ops, rest).into_values().collect()
    }

    /// Follower side of the leader's stable-time notification.
    pub fn handle_stable(&mut self, stable: HybridTimestamp) {
        self.take_stable(stable);
        self.last_emitted = self.last_emitted.max(stable);
        self.stable_time = self.stable_time.max(stable.min(self.current_stable_time()));
    }

    pub fn handle_new_leader(&mut self, leader: ReplicaId) {
        self.leader = leader;
    }
}
