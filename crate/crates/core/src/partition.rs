//! Data partition of the stabilized deployment.
//!
//! A partition serves reads from its local version store, timestamps updates
//! with its hybrid clock, ships payloads straight to sibling partitions and
//! batches lightweight metadata towards the local stabilizer replicas.

use std::collections::{HashMap, VecDeque};

use crate::clock::{HybridTimestamp, VectorTimestamp};
use crate::error::{Error, Result};
use crate::types::{
    DcIndex, Key, Micros, PartitionIndex, ReplicaId, UpdateId, UpdateRecord, UpdateRef, Value,
};

/// Ranking used for last-writer-wins: (origin timestamp, origin partition, origin dc).
pub type LwwRank = (HybridTimestamp, PartitionIndex, DcIndex);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Version {
    pub value: Value,
    pub vts: VectorTimestamp,
    /// `None` for the pre-populated initial version.
    pub writer: Option<UpdateRef>,
    pub rank: LwwRank,
}

/// Key/version map shared by every protocol flavour.
#[derive(Clone, Debug, Default)]
pub struct VersionStore {
    map: HashMap<Key, Version>,
}

impl VersionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn populate(&mut self, key: Key, value: Value, num_dcs: usize) {
        self.map.insert(
            key,
            Version {
                value,
                vts: VectorTimestamp::zero(num_dcs),
                writer: None,
                rank: (HybridTimestamp::ZERO, 0, 0),
            },
        );
    }

    pub fn get(&self, key: Key) -> Result<&Version> {
        self.map.get(&key).ok_or(Error::ReadMiss(key))
    }

    pub fn get_mut(&mut self, key: Key) -> Option<&mut Version> {
        self.map.get_mut(&key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Unconditional overwrite by a locally issued update.
    pub fn put_local(&mut self, record: &UpdateRecord) {
        self.map.insert(record.key, version_of(record));
    }

    /// Installs `record` if it outranks the stored version. Returns whether it won.
    pub fn apply_lww(&mut self, record: &UpdateRecord) -> bool {
        let rank = record.lww_rank();
        match self.map.get(&record.key) {
            Some(current) if current.rank >= rank => false,
            _ => {
                self.map.insert(record.key, version_of(record));
                true
            }
        }
    }
}

fn version_of(record: &UpdateRecord) -> Version {
    Version {
        value: record.value.clone(),
        vts: record.vts.clone(),
        writer: Some(record.update_ref()),
        rank: record.lww_rank(),
    }
}

/// Metadata of one update as seen by the stabilizer: the id plus the vector
/// timestamp that is forwarded to remote receivers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaEntry {
    pub uid: UpdateId,
    pub vts: VectorTimestamp,
}

impl MetaEntry {
    pub fn ts(&self) -> HybridTimestamp {
        self.uid.local_ts
    }
}

/// Partition to stabilizer-replica message. The heartbeat, when present,
/// travels with every unacknowledged entry so a replica can never accept a
/// heartbeat while missing an earlier update of the same partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchMessage {
    pub partition: PartitionIndex,
    pub entries: Vec<MetaEntry>,
    pub heartbeat: Option<HybridTimestamp>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadResult {
    pub value: Value,
    pub vts: VectorTimestamp,
    pub writer: Option<UpdateRef>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub vts: VectorTimestamp,
    /// Payload shipped to the sibling partition of every remote datacenter.
    pub record: UpdateRecord,
}

#[derive(Clone, Debug)]
pub struct PartitionState {
    pub dc: DcIndex,
    pub id: PartitionIndex,
    num_dcs: usize,
    heartbeat_interval: Micros,
    max_ts: HybridTimestamp,
    store: VersionStore,
    pending_batch: VecDeque<MetaEntry>,
    ack: Vec<HybridTimestamp>,
    retired: Vec<bool>,
    last_sent_ts: HybridTimestamp,
    stream_violations: u64,
}

impl PartitionState {
    pub fn new(
        dc: DcIndex,
        id: PartitionIndex,
        num_dcs: usize,
        replicas: usize,
        heartbeat_interval: Micros,
    ) -> Self {
        PartitionState {
            dc,
            id,
            num_dcs,
            heartbeat_interval,
            max_ts: HybridTimestamp::ZERO,
            store: VersionStore::new(),
            pending_batch: VecDeque::new(),
            ack: vec![HybridTimestamp::ZERO; replicas],
            retired: vec![false; replicas],
            last_sent_ts: HybridTimestamp::ZERO,
            stream_violations: 0,
        }
    }

    pub fn populate(&mut self, key: Key, value: Value) {
        self.store.populate(key, value, self.num_dcs);
    }

    pub fn max_ts(&self) -> HybridTimestamp {
        self.max_ts
    }

    pub fn ack(&self) -> &[HybridTimestamp] {
        &self.ack
    }

    pub fn pending_batch(&self) -> impl Iterator<Item = &MetaEntry> {
        self.pending_batch.iter()
    }

    pub fn store(&self) -> &VersionStore {
        &self.store
    }

    /// Number of times the outgoing stream to the stabilizer failed to be
    /// strictly increasing. Must stay zero.
    pub fn stream_violations(&self) -> u64 {
        self.stream_violations
    }

    pub fn handle_read(&self, key: Key) -> Result<ReadResult> {
        let v = self.store.get(key)?;
        Ok(ReadResult {
            value: v.value.clone(),
            vts: v.vts.clone(),
            writer: v.writer,
        })
    }

    pub fn handle_update(
        &mut self,
        key: Key,
        value: Value,
        client_vclock: &VectorTimestamp,
        now: HybridTimestamp,
    ) -> Result<UpdateOutcome> {
        if client_vclock.len() != self.num_dcs {
            return Err(Error::LengthMismatch {
                left: client_vclock.len(),
                right: self.num_dcs,
            });
        }
        let local = now
            .max(client_vclock.get(self.dc).next())
            .max(self.max_ts.next());
        let mut vts = client_vclock.clone();
        vts.set(self.dc, local);
        self.max_ts = local;

        let uid = UpdateId {
            local_ts: local,
            origin_partition: self.id,
            key,
        };
        let record = UpdateRecord {
            key,
            value,
            vts: vts.clone(),
            origin_dc: self.dc,
            origin_partition: self.id,
            uid,
        };
        self.store.put_local(&record);
        self.note_sent(local);
        self.pending_batch.push_back(MetaEntry {
            uid,
            vts: vts.clone(),
        });
        Ok(UpdateOutcome { vts, record })
    }

    fn note_sent(&mut self, ts: HybridTimestamp) {
        if ts <= self.last_sent_ts {
            self.stream_violations += 1;
        }
        self.last_sent_ts = self.last_sent_ts.max(ts);
    }

    /// Heartbeat guard: only when the clock has moved `heartbeat_interval`
    /// past the last assigned timestamp.
    pub fn maybe_heartbeat(&mut self, now: HybridTimestamp) -> Option<HybridTimestamp> {
        if now >= self.max_ts.saturating_add(self.heartbeat_interval) {
            self.note_sent(now);
            Some(now)
        } else {
            None
        }
    }

    /// Per replica, every retained entry above its acknowledged watermark.
    /// Replicas with nothing to receive are skipped unless a heartbeat rides along.
    pub fn outgoing(&self, heartbeat: Option<HybridTimestamp>) -> Vec<(ReplicaId, BatchMessage)> {
        self.ack
            .iter()
            .enumerate()
            .filter(|&(f, _)| !self.retired[f])
            .filter_map(|(f, &acked)| {
                let entries: Vec<MetaEntry> = self
                    .pending_batch
                    .iter()
                    .filter(|e| e.ts() > acked)
                    .cloned()
                    .collect();
                if entries.is_empty() && heartbeat.is_none() {
                    return None;
                }
                Some((
                    f,
                    BatchMessage {
                        partition: self.id,
                        entries,
                        heartbeat,
                    },
                ))
            })
            .collect()
    }

    pub fn flush_batch(&self) -> Vec<(ReplicaId, BatchMessage)> {
        self.outgoing(None)
    }

    /// Heartbeat timer: the heartbeat (if the guard allows one) plus the
    /// unacknowledged suffix for every replica.
    pub fn heartbeat_messages(&mut self, now: HybridTimestamp) -> Vec<(ReplicaId, BatchMessage)> {
        match self.maybe_heartbeat(now) {
            Some(hb) => self.outgoing(Some(hb)),
            None => self.flush_batch(),
        }
    }

    pub fn handle_ack(&mut self, replica: ReplicaId, ts: HybridTimestamp) {
        // Heartbeats can push a replica's watermark past the last update;
        // only the update part is meaningful here.
        let ts = ts.min(self.max_ts);
        if let Some(a) = self.ack.get_mut(replica) {
            *a = (*a).max(ts);
        }
        self.collect_garbage();
    }

    /// Stops feeding a replica the failure detector declared dead.
    pub fn retire_replica(&mut self, replica: ReplicaId) {
        if let Some(r) = self.retired.get_mut(replica) {
            *r = true;
        }
        self.collect_garbage();
    }

    fn collect_garbage(&mut self) {
        let floor = self
            .ack
            .iter()
            .zip(&self.retired)
            .filter(|(_, &gone)| !gone)
            .map(|(&a, _)| a)
            .min()
            .unwrap_or(HybridTimestamp(u64::MAX));
        while self.pending_batch.front().is_some_and(|e| e.ts() <= floor) {
            self.pending_batch.pop_front();
        }
    }

    /// Installs a remote update released by the local receiver.
    pub fn apply_remote(&mut self, record: &UpdateRecord) -> bool {
        self.store.apply_lww(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(v: u64) -> HybridTimestamp {
        HybridTimestamp(v)
    }

    fn vts(e: &[u64]) -> VectorTimestamp {
        VectorTimestamp::from_entries(e.iter().copied())
    }

    fn part(replicas: usize) -> PartitionState {
        let mut p = PartitionState::new(0, 0, 3, replicas, 5);
        for k in 0..4 {
            p.populate(Key(k), Value::new(vec![0u8]));
        }
        p
    }

    fn val(b: u8) -> Value {
        Value::new(vec![b])
    }

    #[test]
    fn read_returns_stored_version() {
        let mut p = part(1);
        let out = p.handle_update(Key(1), val(7), &vts(&[4, 0, 0]), ts(5)).unwrap();
        assert_eq!(out.vts, vts(&[5, 0, 0]));
        let r = p.handle_read(Key(1)).unwrap();
        assert_eq!((r.value.clone(), r.vts.clone()), (val(7), vts(&[5, 0, 0])));
        assert_eq!(p.handle_read(Key(1)).unwrap(), r);
        assert_eq!(p.handle_read(Key(99)), Err(Error::ReadMiss(Key(99))));
    }

    #[test]
    fn update_timestamp_examples() {
        let mut p = part(1);
        let a = p.handle_update(Key(0), val(1), &vts(&[0, 0, 0]), ts(10)).unwrap();
        assert_eq!(a.vts, vts(&[10, 0, 0]));

        let mut p = part(1);
        p.max_ts = ts(12);
        let b = p.handle_update(Key(0), val(1), &vts(&[15, 4, 0]), ts(10)).unwrap();
        assert_eq!(b.vts, vts(&[16, 4, 0]));
        assert_eq!(p.max_ts(), ts(16));

        let mut p = part(1);
        let c1 = p.handle_update(Key(0), val(1), &vts(&[0, 0, 0]), ts(10)).unwrap();
        let c2 = p.handle_update(Key(1), val(1), &vts(&[0, 0, 0]), ts(10)).unwrap();
        assert_eq!(c2.vts.get(0), c1.vts.get(0).next());
        assert_eq!(c2.record.uid.local_ts, c2.vts.get(0));
    }

    #[test]
    fn heartbeat_guard() {
        let mut p = part(1);
        p.max_ts = ts(10);
        assert_eq!(p.maybe_heartbeat(ts(100)), Some(ts(100)));
        let mut p = part(1);
        p.max_ts = ts(98);
        assert_eq!(p.maybe_heartbeat(ts(100)), None);
    }

    #[test]
    fn heartbeat_then_update_keeps_stream_monotone() {
        let mut p = part(1);
        p.max_ts = ts(10);
        let hb = p.maybe_heartbeat(ts(100)).unwrap();
        // The clock has ticked once since the heartbeat reading.
        let u = p.handle_update(Key(0), val(1), &vts(&[0, 0, 0]), ts(101)).unwrap();
        assert!(u.vts.get(0) > hb);
        assert_eq!(p.stream_violations(), 0);

        // A non-advancing clock reading is flagged.
        let mut q = part(1);
        q.max_ts = ts(10);
        q.maybe_heartbeat(ts(100)).unwrap();
        let u = q.handle_update(Key(0), val(1), &vts(&[0, 0, 0]), ts(100)).unwrap();
        assert!(u.vts.get(0) >= ts(100));
        assert_eq!(q.stream_violations(), 1);
    }

    fn fill(p: &mut PartitionState, stamps: &[u64]) {
        for (i, &s) in stamps.iter().enumerate() {
            p.handle_update(Key(i as u64 % 4), val(1), &vts(&[0, 0, 0]), ts(s))
                .unwrap();
        }
    }

    fn batch_ts(msgs: &[(ReplicaId, BatchMessage)], f: ReplicaId) -> Vec<u64> {
        msgs.iter()
            .find(|(r, _)| *r == f)
            .map(|(_, m)| m.entries.iter().map(|e| e.ts().0).collect())
            .unwrap_or_default()
    }

    #[test]
    fn flush_filters_by_replica_watermark() {
        let mut p = part(2);
        fill(&mut p, &[3, 5, 8]);
        p.handle_ack(0, ts(4));
        let msgs = p.flush_batch();
        assert_eq!(batch_ts(&msgs, 0), vec![5, 8]);
        assert_eq!(batch_ts(&msgs, 1), vec![3, 5, 8]);

        p.handle_ack(0, ts(8));
        let msgs = p.flush_batch();
        assert!(msgs.iter().all(|(f, _)| *f != 0), "empty batch is suppressed");
    }

    #[test]
    fn acks_are_monotone_and_drive_gc() {
        let mut p = part(2);
        fill(&mut p, &[3, 5, 8, 11]);
        p.handle_ack(0, ts(3));
        p.handle_ack(0, ts(7));
        assert_eq!(p.ack()[0], ts(7));
        p.handle_ack(0, ts(2));
        assert_eq!(p.ack()[0], ts(7));
        assert_eq!(p.pending_batch().count(), 4, "replica 1 has acked nothing");
        p.handle_ack(0, ts(8));
        p.handle_ack(1, ts(9));
        let left: Vec<u64> = p.pending_batch().map(|e| e.ts().0).collect();
        assert_eq!(left, vec![11]);
    }

    #[test]
    fn ack_never_exceeds_max_ts() {
        let mut p = part(1);
        fill(&mut p, &[3]);
        p.handle_ack(0, ts(500));
        assert_eq!(p.ack()[0], ts(3));
    }

    #[test]
    fn heartbeat_carries_unacked_suffix() {
        let mut p = part(2);
        fill(&mut p, &[3, 5]);
        p.handle_ack(0, ts(5));
        let msgs = p.heartbeat_messages(ts(50));
        assert_eq!(msgs.len(), 2);
        assert!(msgs.iter().all(|(_, m)| m.heartbeat == Some(ts(50))));
        assert_eq!(batch_ts(&msgs, 0), Vec::<u64>::new());
        assert_eq!(batch_ts(&msgs, 1), vec![3, 5]);
    }

    fn remote(key: u64, origin_dc: usize, origin_ts: u64, origin_partition: usize) -> UpdateRecord {
        let mut v = VectorTimestamp::zero(3);
        v.set(origin_dc, ts(origin_ts));
        UpdateRecord {
            key: Key(key),
            value: val(origin_ts as u8),
            vts: v,
            origin_dc,
            origin_partition,
            uid: UpdateId {
                local_ts: ts(origin_ts),
                origin_partition,
                key: Key(key),
            },
        }
    }

    #[test]
    fn apply_remote_into_fresh_key() {
        let mut p = part(1);
        let u = remote(2, 1, 5, 0);
        assert!(p.apply_remote(&u));
        assert_eq!(p.handle_read(Key(2)).unwrap().vts, vts(&[0, 5, 0]));
    }

    #[test]
    fn apply_remote_is_last_writer_wins_in_either_order() {
        let newer = remote(2, 1, 9, 0);
        let older = remote(2, 1, 5, 0);
        // Oracle: the version with the larger origin timestamp must survive.
        for order in [[&newer, &older], [&older, &newer]] {
            let mut p = part(1);
            for u in order {
                p.apply_remote(u);
            }
            assert_eq!(p.handle_read(Key(2)).unwrap().writer, Some(newer.update_ref()));
        }
        // Equal timestamps fall back to origin partition, then origin dc.
        let a = remote(2, 1, 9, 1);
        let b = remote(2, 2, 9, 0);
        let mut p = part(1);
        p.apply_remote(&a);
        p.apply_remote(&b);
        assert_eq!(p.handle_read(Key(2)).unwrap().writer, Some(a.update_ref()));
    }

    #[test]
    fn update_rejects_wrong_vector_length() {
        let mut p = part(1);
        assert!(p.handle_update(Key(0), val(1), &vts(&[0, 0]), ts(3)).is_err());
    }
}
