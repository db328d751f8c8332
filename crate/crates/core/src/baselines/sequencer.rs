//! Sequencer-based replication.
//!
//! A sequencer per datacenter hands out dense, increasing numbers. The
//! number becomes the update's local vector entry and fixes the order in
//! which remote datacenters apply the origin's updates. In the synchronous
//! flavour the client waits for the number; in the asynchronous flavour the
//! update is installed and acknowledged first, which loses causality.

use std::collections::{BTreeMap, HashMap};

use crate::clock::{HybridTimestamp, VectorTimestamp};
use crate::error::{Error, Result};
use crate::partition::{ReadResult, VersionStore};
use crate::types::{DcIndex, Key, PartitionIndex, UpdateId, UpdateRecord, Value};

/// Request handle: issuing partition and its local request counter.
pub type Token = (PartitionIndex, u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqMode {
    Sync,
    Async,
}

/// One sequencer node. A lone node is the plain sequencer; in a chain the
/// head assigns and every later node checks and adopts the head's grants.
#[derive(Clone, Debug)]
pub struct SequencerReplica {
    is_head: bool,
    last: u64,
}

impl SequencerReplica {
    pub fn new(is_head: bool) -> Self {
        SequencerReplica { is_head, last: 0 }
    }

    pub fn last(&self) -> u64 {
        self.last
    }

    pub fn grant(&mut self, tokens: &[Token]) -> Vec<(Token, u64)> {
        debug_assert!(self.is_head);
        tokens
            .iter()
            .map(|&t| {
                self.last += 1;
                (t, self.last)
            })
            .collect()
    }

    /// Non-head chain node: grants must extend the local counter densely.
    pub fn adopt(&mut self, grants: &[(Token, u64)]) -> Result<()> {
        for &(_, n) in grants {
            if n != self.last + 1 {
                return Err(Error::MalformedLog(format!(
                    "chain grant {n} does not follow {}",
                    self.last
                )));
            }
            self.last = n;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SeqPartition {
    pub dc: DcIndex,
    pub id: PartitionIndex,
    mode: SeqMode,
    num_dcs: usize,
    store: VersionStore,
    next_token: u64,
    waiting: HashMap<u64, UpdateRecord>,
    unsent: Vec<Token>,
}

impl SeqPartition {
    pub fn new(dc: DcIndex, id: PartitionIndex, num_dcs: usize, mode: SeqMode) -> Self {
        SeqPartition {
            dc,
            id,
            mode,
            num_dcs,
            store: VersionStore::new(),
            next_token: 0,
            waiting: HashMap::new(),
            unsent: Vec::new(),
        }
    }

    pub fn populate(&mut self, key: Key, value: Value) {
        self.store.populate(key, value, self.num_dcs);
    }

    pub fn store(&self) -> &VersionStore {
        &self.store
    }

    pub fn awaiting_grant(&self) -> usize {
        self.waiting.len()
    }

    pub fn handle_read(&self, key: Key) -> Result<ReadResult> {
        let v = self.store.get(key)?;
        Ok(ReadResult {
            value: v.value.clone(),
            vts: v.vts.clone(),
            writer: v.writer,
        })
    }

    /// Starts an update. The asynchronous flavour installs it right away and
    /// returns the installed record, whose vector lacks the sequence number.
    pub fn begin_update(
        &mut self,
        key: Key,
        value: Value,
        vclock: &VectorTimestamp,
    ) -> Result<(Token, Option<UpdateRecord>)> {
        if vclock.len() != self.num_dcs {
            return Err(Error::LengthMismatch {
                left: vclock.len(),
                right: self.num_dcs,
            });
        }
        self.next_token += 1;
        let token = (self.id, self.next_token);
        let record = UpdateRecord {
            key,
            value,
            vts: vclock.clone(),
            origin_dc: self.dc,
            origin_partition: self.id,
            uid: UpdateId {
                local_ts: HybridTimestamp(self.next_token),
                origin_partition: self.id,
                key,
            },
        };
        self.unsent.push(token);
        let installed = match self.mode {
            SeqMode::Sync => None,
            SeqMode::Async => {
                self.store.put_local(&record);
                Some(record.clone())
            }
        };
        self.waiting.insert(token.1, record);
        Ok((token, installed))
    }

    /// Sequencer requests not yet sent.
    pub fn take_requests(&mut self) -> Vec<Token> {
        std::mem::take(&mut self.unsent)
    }

    /// Applies a grant: the record gets its sequence number as local entry
    /// and is (re)installed locally. Returns the record to ship.
    pub fn complete(&mut self, token: Token, seq: u64) -> Option<UpdateRecord> {
        let mut record = self.waiting.remove(&token.1)?;
        record.vts.set(self.dc, HybridTimestamp(seq));
        let ours = self
            .store
            .get(record.key)
            .is_ok_and(|v| v.writer == Some(record.update_ref()));
        if self.mode == SeqMode::Sync || ours {
            self.store.put_local(&record);
        }
        Some(record)
    }

    pub fn apply_remote(&mut self, record: &UpdateRecord) -> bool {
        self.store.apply_lww(record)
    }
}

/// Remote side: per-origin dense sequence order plus cross-origin dependencies.
#[derive(Clone, Debug)]
pub struct SeqReceiver {
    dc: DcIndex,
    held: Vec<BTreeMap<u64, UpdateRecord>>,
    applied: VectorTimestamp,
    duplicates: u64,
}

impl SeqReceiver {
    pub fn new(dc: DcIndex, num_dcs: usize) -> Self {
        SeqReceiver {
            dc,
            held: vec![BTreeMap::new(); num_dcs],
            applied: VectorTimestamp::zero(num_dcs),
            duplicates: 0,
        }
    }

    pub fn applied(&self) -> &VectorTimestamp {
        &self.applied
    }

    pub fn held(&self) -> usize {
        self.held.iter().map(BTreeMap::len).sum()
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn receive(&mut self, record: UpdateRecord) -> Result<()> {
        let k = record.origin_dc;
        if k == self.dc {
            return Err(Error::LocalOrigin(k));
        }
        let seq = record.vts.get(k).value();
        if seq <= self.applied.get(k).value() || self.held[k].contains_key(&seq) {
            self.duplicates += 1;
            return Ok(());
        }
        self.held[k].insert(seq, record);
        Ok(())
    }

    fn ready(&self, k: DcIndex) -> bool {
        let next = self.applied.get(k).value() + 1;
        self.held[k]
            .get(&next)
            .is_some_and(|r| self.applied.dominates(&r.vts, &[self.dc, k]))
    }

    /// Everything applicable now, in apply order.
    pub fn drain(&mut self) -> Vec<UpdateRecord> {
        let mut out = Vec::new();
        'scan: loop {
            for k in 0..self.held.len() {
                if k != self.dc && self.ready(k) {
                    let (seq, r) = self.held[k].pop_first().expect("ready head");
                    self.applied.set(k, HybridTimestamp(seq));
                    out.push(r);
                    continue 'scan;
                }
            }
            return out;
        }
    }
}
