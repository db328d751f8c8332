//! Line-delimited JSON event trace.
//!
//! Oracle events are written in full so a persisted trace can be checked
//! again later; everything else is reduced to a short payload digest.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::oracle::OracleEvent;
use crate::types::Micros;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: Micros,
    pub node: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<OracleEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

pub fn digest(payload: &str) -> String {
    let d = Sha256::digest(payload.as_bytes());
    d.iter().take(8).fold(String::with_capacity(16), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, Default)]
pub struct TraceWriter {
    text: String,
    lines: usize,
}

impl TraceWriter {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, rec: &TraceRecord) {
        self.text
            .push_str(&serde_json::to_string(rec).expect("trace records serialize"));
        self.text.push('\n');
        self.lines += 1;
    }

    pub fn oracle(&mut self, t: Micros, node: &str, event: &OracleEvent) {
        let kind = match event {
            OracleEvent::Read { .. } => "read",
            OracleEvent::Write { .. } => "write",
            OracleEvent::Apply { .. } => "apply",
        };
        self.push(&TraceRecord {
            t,
            node: node.to_string(),
            kind: kind.to_string(),
            event: Some(event.clone()),
            digest: None,
        });
    }

    pub fn note(&mut self, t: Micros, node: &str, kind: &str, payload: &str) {
        self.push(&TraceRecord {
            t,
            node: node.to_string(),
            kind: kind.to_string(),
            event: None,
            digest: Some(digest(payload)),
        });
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn into_text(self) -> String {
        self.text
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::MalformedLog(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn oracle_events(records: &[TraceRecord]) -> Vec<OracleEvent> {
    records.iter().filter_map(|r| r.event.clone()).collect()
}
