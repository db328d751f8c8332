//! Remote-update coordinator of one datacenter.
//!
//! Each remote datacenter's stabilizer ships its updates in a total order
//! consistent with causality. The receiver keeps one FIFO queue per origin
//! and releases a queue head once every other remote dependency has been
//! applied locally and the payload, shipped separately by the sibling
//! partition, has arrived.

use std::collections::{HashMap, VecDeque};

use crate::clock::{HybridTimestamp, VectorTimestamp};
use crate::error::{Error, Result};
use crate::partition::MetaEntry;
use crate::types::{DcIndex, PartitionIndex, UpdateRecord, UpdateRef};

#[derive(Clone, Debug)]
pub struct ReceiverState {
    dc: DcIndex,
    queues: Vec<VecDeque<MetaEntry>>,
    site_time: VectorTimestamp,
    enqueued_watermark: HashMap<(DcIndex, PartitionIndex), HybridTimestamp>,
    applied_watermark: HashMap<(DcIndex, PartitionIndex), HybridTimestamp>,
    payload_buffer: HashMap<UpdateRef, UpdateRecord>,
    duplicates: u64,
}

impl ReceiverState {
    pub fn new(dc: DcIndex, num_dcs: usize) -> Self {
        ReceiverState {
            dc,
            queues: vec![VecDeque::new(); num_dcs],
            site_time: VectorTimestamp::zero(num_dcs),
            enqueued_watermark: HashMap::new(),
            applied_watermark: HashMap::new(),
            payload_buffer: HashMap::new(),
            duplicates: 0,
        }
    }

    pub fn dc(&self) -> DcIndex {
        self.dc
    }

    pub fn site_time(&self) -> &VectorTimestamp {
        &self.site_time
    }

    pub fn queue(&self, origin: DcIndex) -> impl Iterator<Item = &MetaEntry> {
        self.queues[origin].iter()
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn buffered_payloads(&self) -> usize {
        self.payload_buffer.len()
    }

    /// Duplicate metadata or payloads dropped so far.
    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    fn applied_up_to(&self, origin: DcIndex, partition: PartitionIndex) -> HybridTimestamp {
        self.applied_watermark
            .get(&(origin, partition))
            .copied()
            .unwrap_or_default()
    }

    /// Appends a shipped update to the origin's queue. Returns `false` for a
    /// duplicate (re-emission after a stabilizer failover).
    pub fn enqueue_remote(&mut self, meta: MetaEntry, origin: DcIndex) -> Result<bool> {
        if origin == self.dc {
            return Err(Error::LocalOrigin(origin));
        }
        let slot = (origin, meta.uid.origin_partition);
        let seen = self.enqueued_watermark.entry(slot).or_default();
        if meta.ts() <= *seen {
            self.duplicates += 1;
            return Ok(false);
        }
        *seen = meta.ts();
        self.queues[origin].push_back(meta);
        Ok(true)
    }

    /// Stores a payload until its metadata is released.
    pub fn buffer_payload(&mut self, record: UpdateRecord) -> bool {
        if record.uid.local_ts <= self.applied_up_to(record.origin_dc, record.origin_partition) {
            self.duplicates += 1;
            return false;
        }
        self.payload_buffer.insert(record.update_ref(), record);
        true
    }

    fn releasable(&self, origin: DcIndex) -> Option<UpdateRef> {
        let head = self.queues[origin].front()?;
        if !self.site_time.dominates(&head.vts, &[self.dc, origin]) {
            return None;
        }
        let r = UpdateRef {
            dc: origin,
            uid: head.uid,
        };
        self.payload_buffer.contains_key(&r).then_some(r)
    }

    /// Releases every update whose dependencies are satisfied, in release
    /// order. After each release the scan restarts from the first queue,
    /// since applying one update may unblock a head already passed over.
    pub fn check_pending(&mut self) -> Vec<UpdateRecord> {
        let mut released = Vec::new();
        'scan: loop {
            for origin in 0..self.queues.len() {
                if origin == self.dc {
                    continue;
                }
                if let Some(r) = self.releasable(origin) {
                    let head = self.queues[origin].pop_front().expect("head checked");
                    let record = self.payload_buffer.remove(&r).expect("payload checked");
                    self.site_time.set(origin, head.vts.get(origin));
                    self.applied_watermark
                        .insert((origin, head.uid.origin_partition), head.ts());
                    released.push(record);
                    continue 'scan;
                }
            }
            break;
        }
        released
    }

    /// Queue heads that cannot be released right now, with the reason.
    pub fn blocked_heads(&self) -> Vec<(DcIndex, &MetaEntry, bool)> {
        (0..self.queues.len())
            .filter(|&k| k != self.dc)
            .filter_map(|k| {
                let head = self.queues[k].front()?;
                let deps_ok = self.site_time.dominates(&head.vts, &[self.dc, k]);
                Some((k, head, deps_ok))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Key, UpdateId, Value};

    fn meta(origin: DcIndex, p: PartitionIndex, vts: &[u64]) -> (MetaEntry, UpdateRecord) {
        let vts = VectorTimestamp::from_entries(vts.iter().copied());
        let uid = UpdateId {
            local_ts: vts.get(origin),
            origin_partition: p,
            key: Key(vts.get(origin).0),
        };
        let rec = UpdateRecord {
            key: uid.key,
            value: Value::new(vec![1]),
            vts: vts.clone(),
            origin_dc: origin,
            origin_partition: p,
            uid,
        };
        (MetaEntry { uid, vts }, rec)
    }

    fn released_ts(rs: &[UpdateRecord]) -> Vec<(usize, u64)> {
        rs.iter().map(|r| (r.origin_dc, r.uid.local_ts.0)).collect()
    }

    #[test]
    fn enqueue_keeps_arrival_order_and_drops_duplicates() {
        let mut r = ReceiverState::new(1, 3);
        let (a, _) = meta(0, 0, &[3, 0, 0]);
        let (b, _) = meta(0, 1, &[5, 0, 0]);
        assert!(r.enqueue_remote(a.clone(), 0).unwrap());
        assert!(r.enqueue_remote(b.clone(), 0).unwrap());
        assert!(!r.enqueue_remote(a.clone(), 0).unwrap());
        let q: Vec<u64> = r.queue(0).map(|m| m.ts().0).collect();
        assert_eq!(q, vec![3, 5]);
        assert_eq!(r.enqueue_remote(a, 1), Err(Error::LocalOrigin(1)));
    }

    #[test]
    fn zero_dependencies_apply_immediately() {
        let mut r = ReceiverState::new(1, 3);
        let (m, rec) = meta(0, 0, &[7, 0, 0]);
        r.enqueue_remote(m, 0).unwrap();
        r.buffer_payload(rec);
        assert_eq!(released_ts(&r.check_pending()), vec![(0, 7)]);
        assert_eq!(r.site_time().get(0), HybridTimestamp(7));
    }

    #[test]
    fn blocked_until_dependency_from_third_dc() {
        let mut r = ReceiverState::new(1, 3);
        let (m0, p0) = meta(0, 0, &[7, 0, 4]);
        r.enqueue_remote(m0, 0).unwrap();
        r.buffer_payload(p0);
        let (m2a, p2a) = meta(2, 0, &[0, 0, 3]);
        r.enqueue_remote(m2a, 2).unwrap();
        r.buffer_payload(p2a);
        // site_time[2] reaches 3 only: still blocked.
        assert_eq!(released_ts(&r.check_pending()), vec![(2, 3)]);
        assert_eq!(r.queued(), 1);
        let (m2b, p2b) = meta(2, 1, &[0, 0, 4]);
        r.enqueue_remote(m2b, 2).unwrap();
        r.buffer_payload(p2b);
        assert_eq!(released_ts(&r.check_pending()), vec![(2, 4), (0, 7)]);
    }

    #[test]
    fn later_queue_unblocks_earlier_queue_in_one_pass() {
        let mut r = ReceiverState::new(1, 3);
        let (m0, p0) = meta(0, 0, &[7, 0, 4]);
        let (m2, p2) = meta(2, 0, &[0, 0, 4]);
        r.enqueue_remote(m0, 0).unwrap();
        r.enqueue_remote(m2, 2).unwrap();
        r.buffer_payload(p0);
        r.buffer_payload(p2);
        assert_eq!(released_ts(&r.check_pending()), vec![(2, 4), (0, 7)]);
        assert_eq!(r.queued(), 0);
    }

    #[test]
    fn payload_gates_release() {
        let mut r = ReceiverState::new(1, 3);
        let (m, rec) = meta(0, 0, &[7, 0, 0]);
        r.enqueue_remote(m, 0).unwrap();
        assert!(r.check_pending().is_empty());
        assert_eq!(r.blocked_heads().len(), 1);
        r.buffer_payload(rec.clone());
        assert_eq!(r.check_pending().len(), 1);
        // A late duplicate payload is discarded.
        assert!(!r.buffer_payload(rec));
        assert_eq!(r.buffered_payloads(), 0);
    }

    #[test]
    fn payload_before_metadata_is_held() {
        let mut r = ReceiverState::new(2, 3);
        let (m, rec) = meta(1, 0, &[0, 9, 0]);
        assert!(r.buffer_payload(rec));
        assert!(r.check_pending().is_empty());
        r.enqueue_remote(m, 1).unwrap();
        assert_eq!(released_ts(&r.check_pending()), vec![(1, 9)]);
    }

    #[test]
    fn own_entry_of_destination_is_not_checked() {
        let mut r = ReceiverState::new(1, 3);
        let (m, rec) = meta(0, 0, &[7, 1_000, 0]);
        r.enqueue_remote(m, 0).unwrap();
        r.buffer_payload(rec);
        assert_eq!(r.check_pending().len(), 1);
    }
}
