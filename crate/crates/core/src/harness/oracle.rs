//! Protocol-agnostic causal consistency checker.
//!
//! The checker sees only a log of session reads and writes and of the
//! instants updates become visible at each datacenter. The causal past of a
//! write is everything its session wrote or read before it, closed
//! transitively through the writes it read. Because a session's writes are
//! totally ordered, that past is summarized by one prefix length per
//! session, and a datacenter's visible set by the longest visible prefix
//! of each session.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DcIndex, UpdateRef};

pub type SessionId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OracleEvent {
    /// A session read a version; `None` is the initial value.
    Read {
        session: SessionId,
        observed: Option<UpdateRef>,
    },
    /// A session's update was installed, and is visible, at its origin.
    Write { session: SessionId, update: UpdateRef },
    /// A remote update became visible at `dc`.
    Apply { dc: DcIndex, update: UpdateRef },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub dc: DcIndex,
    pub update: UpdateRef,
    /// A causal predecessor of `update` not yet visible at `dc`.
    pub missing: UpdateRef,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub events: usize,
    pub writes: usize,
    pub applies: usize,
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Debug)]
struct WriteInfo {
    session: SessionId,
    index: u32,
    deps: Arc<[u32]>,
}

#[derive(Clone, Debug, Default)]
struct Visible {
    prefix: u32,
    ahead: BTreeSet<u32>,
}

impl Visible {
    fn insert(&mut self, index: u32) {
        if index == self.prefix {
            self.prefix += 1;
            while self.ahead.remove(&self.prefix) {
                self.prefix += 1;
            }
        } else if index > self.prefix {
            self.ahead.insert(index);
        }
    }
}

/// Incremental checker; feed events in log order.
#[derive(Clone, Debug, Default)]
pub struct CausalChecker {
    sessions: Vec<Vec<u32>>,
    session_writes: Vec<Vec<UpdateRef>>,
    writes: HashMap<UpdateRef, WriteInfo>,
    visible: HashMap<(DcIndex, SessionId), Visible>,
    verdict: Verdict,
}

impl CausalChecker {
    pub fn new() -> Self {
        Self::default()
    }

    fn session(&mut self, s: SessionId) -> &mut Vec<u32> {
        if s >= self.sessions.len() {
            self.sessions.resize(s + 1, Vec::new());
            self.session_writes.resize(s + 1, Vec::new());
        }
        &mut self.sessions[s]
    }

    fn info(&self, u: &UpdateRef) -> Result<&WriteInfo> {
        self.writes
            .get(u)
            .ok_or_else(|| Error::MalformedLog(format!("{u} used before it was written")))
    }

    pub fn observe(&mut self, event: &OracleEvent) -> Result<()> {
        self.verdict.events += 1;
        match *event {
            OracleEvent::Read { session, observed } => {
                self.session(session);
                if let Some(v) = observed {
                    let info = self.info(&v)?.clone();
                    let deps = self.session(session);
                    join(deps, &info.deps);
                    raise(deps, info.session, info.index + 1);
                }
            }
            OracleEvent::Write { session, update } => {
                if self.writes.contains_key(&update) {
                    return Err(Error::MalformedLog(format!("{update} written twice")));
                }
                let deps = self.session(session);
                let index = deps.get(session).copied().unwrap_or(0);
                let snapshot: Arc<[u32]> = deps.as_slice().into();
                raise(deps, session, index + 1);
                self.session_writes[session].push(update);
                self.writes.insert(
                    update,
                    WriteInfo {
                        session,
                        index,
                        deps: snapshot,
                    },
                );
                self.visible
                    .entry((update.dc, session))
                    .or_default()
                    .insert(index);
                self.verdict.writes += 1;
            }
            OracleEvent::Apply { dc, update } => {
                let info = self.info(&update)?.clone();
                for (s, &need) in info.deps.iter().enumerate() {
                    // The prefix length is also the first invisible index.
                    let prefix = self.visible.get(&(dc, s)).map_or(0, |v| v.prefix);
                    if prefix < need {
                        self.verdict.violations.push(Violation {
                            dc,
                            update,
                            missing: self.session_writes[s][prefix as usize],
                        });
                        break;
                    }
                }
                self.visible
                    .entry((dc, info.session))
                    .or_default()
                    .insert(info.index);
                self.verdict.applies += 1;
            }
        }
        Ok(())
    }

    pub fn verdict(&self) -> &Verdict {
        &self.verdict
    }

    pub fn finish(self) -> Verdict {
        self.verdict
    }
}

fn join(into: &mut Vec<u32>, other: &[u32]) {
    if into.len() < other.len() {
        into.resize(other.len(), 0);
    }
    for (a, &b) in into.iter_mut().zip(other) {
        *a = (*a).max(b);
    }
}

fn raise(deps: &mut Vec<u32>, session: SessionId, to: u32) {
    if deps.len() <= session {
        deps.resize(session + 1, 0);
    }
    deps[session] = deps[session].max(to);
}

/// Checks a complete log.
pub fn check_causal(log: &[OracleEvent]) -> Result<Verdict> {
    let mut c = CausalChecker::new();
    for e in log {
        c.observe(e)?;
    }
    Ok(c.finish())
}
