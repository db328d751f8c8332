//! Client session: the causal-history vector carried into every update.

use crate::clock::{HybridTimestamp, VectorTimestamp};
use crate::error::Result;
use crate::partition::{PartitionState, UpdateOutcome};
use crate::types::{DcIndex, Key, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SessionOp {
    Read { key: Key, vts: VectorTimestamp },
    Update { key: Key, vts: VectorTimestamp },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateRequest {
    pub key: Key,
    pub value: Value,
    pub vclock: VectorTimestamp,
}

#[derive(Clone, Debug)]
pub struct ClientState {
    vclock: VectorTimestamp,
    home_dc: DcIndex,
    session_log: Vec<SessionOp>,
    keep_log: bool,
}

impl ClientState {
    pub fn new(home_dc: DcIndex, num_dcs: usize) -> Self {
        ClientState {
            vclock: VectorTimestamp::zero(num_dcs),
            home_dc,
            session_log: Vec::new(),
            keep_log: true,
        }
    }

    /// Simulations record sessions elsewhere; skip the in-memory log.
    pub fn without_log(mut self) -> Self {
        self.keep_log = false;
        self
    }

    pub fn vclock(&self) -> &VectorTimestamp {
        &self.vclock
    }

    pub fn home_dc(&self) -> DcIndex {
        self.home_dc
    }

    pub fn session_log(&self) -> &[SessionOp] {
        &self.session_log
    }

    pub fn update_request(&self, key: Key, value: Value) -> UpdateRequest {
        UpdateRequest {
            key,
            value,
            vclock: self.vclock.clone(),
        }
    }

    /// Folds the version returned by a read into the causal history.
    pub fn complete_read(&mut self, key: Key, version_vts: &VectorTimestamp) -> Result<()> {
        self.vclock.merge_in_place(version_vts)?;
        if self.keep_log {
            self.session_log.push(SessionOp::Read {
                key,
                vts: version_vts.clone(),
            });
        }
        Ok(())
    }

    /// The assigned vector already dominates the old clock, so it replaces it.
    pub fn complete_update(&mut self, key: Key, assigned: VectorTimestamp) {
        debug_assert!(assigned.dominates(&self.vclock, &[]));
        if self.keep_log {
            self.session_log.push(SessionOp::Update {
                key,
                vts: assigned.clone(),
            });
        }
        self.vclock = assigned;
    }

    /// Read against a co-located partition, without a network in between.
    pub fn issue_read(&mut self, partition: &PartitionState, key: Key) -> Result<Value> {
        let r = partition.handle_read(key)?;
        self.complete_read(key, &r.vts)?;
        Ok(r.value)
    }

    pub fn issue_update(
        &mut self,
        partition: &mut PartitionState,
        key: Key,
        value: Value,
        now: HybridTimestamp,
    ) -> Result<UpdateOutcome> {
        let req = self.update_request(key, value);
        let out = partition.handle_update(req.key, req.value, &req.vclock, now)?;
        self.complete_update(key, out.vts.clone());
        Ok(out)
    }
}
