//! Global stabilization.
//!
//! Partitions replicate updates straight to their siblings and heartbeat
//! them periodically, so each partition knows, per remote datacenter, a
//! timestamp below which it has received everything. A per-datacenter
//! stabilizer folds the partitions' reports into a global stable time
//! (scalar) or a global stable vector, and a remote update becomes visible
//! once that stable point covers it.

use crate::clock::{HybridTimestamp, VectorTimestamp};
use crate::error::{Error, Result};
use crate::partition::{ReadResult, VersionStore};
use crate::types::{DcIndex, Key, PartitionIndex, UpdateId, UpdateRecord, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabMode {
    /// One timestamp summarizes the whole causal past.
    Scalar,
    /// One entry per datacenter.
    Vector,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GlobalStable {
    Scalar(HybridTimestamp),
    Vector(VectorTimestamp),
}

impl GlobalStable {
    pub fn admits(&self, record: &UpdateRecord, local_dc: DcIndex) -> bool {
        match self {
            GlobalStable::Scalar(gst) => record.vts.get(record.origin_dc) <= *gst,
            GlobalStable::Vector(gsv) => gsv.dominates(&record.vts, &[local_dc]),
        }
    }

    fn max(self, other: GlobalStable) -> GlobalStable {
        match (self, other) {
            (GlobalStable::Scalar(a), GlobalStable::Scalar(b)) => GlobalStable::Scalar(a.max(b)),
            (GlobalStable::Vector(a), GlobalStable::Vector(b)) => {
                GlobalStable::Vector(a.merge(&b).expect("same deployment"))
            }
            (_, b) => b,
        }
    }
}

/// Order in which simultaneously visible updates are installed. Every
/// causal predecessor sorts strictly earlier.
pub fn visibility_order(mode: StabMode, r: &UpdateRecord) -> (u128, DcIndex, PartitionIndex, UpdateId) {
    let primary = match mode {
        StabMode::Scalar => r.vts.get(r.origin_dc).value() as u128,
        StabMode::Vector => r.vts.weight(),
    };
    (primary, r.origin_dc, r.origin_partition, r.uid)
}

#[derive(Clone, Debug)]
pub struct GStabPartition {
    pub dc: DcIndex,
    pub id: PartitionIndex,
    mode: StabMode,
    num_dcs: usize,
    max_ts: HybridTimestamp,
    store: VersionStore,
    vv: Vec<HybridTimestamp>,
    pending: Vec<UpdateRecord>,
}

impl GStabPartition {
    pub fn new(dc: DcIndex, id: PartitionIndex, num_dcs: usize, mode: StabMode) -> Self {
        GStabPartition {
            dc,
            id,
            mode,
            num_dcs,
            max_ts: HybridTimestamp::ZERO,
            store: VersionStore::new(),
            vv: vec![HybridTimestamp::ZERO; num_dcs],
            pending: Vec::new(),
        }
    }

    pub fn populate(&mut self, key: Key, value: Value) {
        self.store.populate(key, value, self.num_dcs);
    }

    pub fn store(&self) -> &VersionStore {
        &self.store
    }

    pub fn max_ts(&self) -> HybridTimestamp {
        self.max_ts
    }

    /// Latest timestamp received from the sibling in each datacenter.
    pub fn version_vector(&self) -> &[HybridTimestamp] {
        &self.vv
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
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
        vclock: &VectorTimestamp,
        now: HybridTimestamp,
    ) -> Result<UpdateRecord> {
        if vclock.len() != self.num_dcs {
            return Err(Error::LengthMismatch {
                left: vclock.len(),
                right: self.num_dcs,
            });
        }
        let floor = match self.mode {
            StabMode::Scalar => vclock.max_entry(),
            StabMode::Vector => vclock.get(self.dc),
        };
        let local = now.max(floor.next()).max(self.max_ts.next());
        self.max_ts = local;
        let mut vts = vclock.clone();
        vts.set(self.dc, local);
        let record = UpdateRecord {
            key,
            value,
            vts,
            origin_dc: self.dc,
            origin_partition: self.id,
            uid: UpdateId {
                local_ts: local,
                origin_partition: self.id,
                key,
            },
        };
        self.store.put_local(&record);
        Ok(record)
    }

    /// Heartbeat value for the siblings. Later updates are stamped above it.
    pub fn heartbeat(&mut self, now: HybridTimestamp) -> HybridTimestamp {
        self.max_ts = self.max_ts.max(now);
        self.max_ts
    }

    pub fn receive_remote(&mut self, record: UpdateRecord) {
        let k = record.origin_dc;
        self.vv[k] = self.vv[k].max(record.vts.get(k));
        self.pending.push(record);
    }

    pub fn receive_heartbeat(&mut self, from: DcIndex, ts: HybridTimestamp) {
        self.vv[from] = self.vv[from].max(ts);
    }

    /// Removes and returns the pending updates covered by `stable`.
    pub fn take_visible(&mut self, stable: &GlobalStable) -> Vec<UpdateRecord> {
        let dc = self.dc;
        let (ready, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|r| stable.admits(r, dc));
        self.pending = rest;
        ready
    }

    pub fn apply_remote(&mut self, record: &UpdateRecord) -> bool {
        self.store.apply_lww(record)
    }
}

/// Aggregates partition reports into the datacenter's global stable point.
#[derive(Clone, Debug)]
pub struct Stabilizer {
    dc: DcIndex,
    mode: StabMode,
    reports: Vec<Option<Vec<HybridTimestamp>>>,
    stable: Option<GlobalStable>,
}

impl Stabilizer {
    pub fn new(dc: DcIndex, partitions: usize, mode: StabMode) -> Self {
        Stabilizer {
            dc,
            mode,
            reports: vec![None; partitions],
            stable: None,
        }
    }

    pub fn report(&mut self, partition: PartitionIndex, vv: Vec<HybridTimestamp>) -> Result<()> {
        let slot = self
            .reports
            .get_mut(partition)
            .ok_or(Error::UnknownPartition(partition))?;
        *slot = Some(vv);
        Ok(())
    }

    /// Current stable point, `None` until every partition has reported.
    /// Never moves backwards.
    pub fn stable(&mut self) -> Option<GlobalStable> {
        let reports: Vec<&Vec<HybridTimestamp>> =
            self.reports.iter().map(Option::as_ref).collect::<Option<_>>()?;
        let num_dcs = reports.first().map_or(0, |r| r.len());
        let column_min = |d: usize| reports.iter().map(|r| r[d]).min().unwrap_or_default();
        let fresh = match self.mode {
            StabMode::Scalar => GlobalStable::Scalar(
                (0..num_dcs)
                    .filter(|&d| d != self.dc)
                    .map(column_min)
                    .min()
                    .unwrap_or(HybridTimestamp(u64::MAX)),
            ),
            StabMode::Vector => GlobalStable::Vector(VectorTimestamp::from_entries(
                (0..num_dcs).map(|d| if d == self.dc { u64::MAX } else { column_min(d).value() }),
            )),
        };
        let next = match self.stable.take() {
            Some(prev) => prev.max(fresh),
            None => fresh,
        };
        self.stable = Some(next.clone());
        Some(next)
    }
}
