use thiserror::Error;

use crate::types::Key;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("vector timestamp length mismatch ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("read miss on key {0}")]
    ReadMiss(Key),

    #[error("message from unknown partition {0}")]
    UnknownPartition(usize),

    #[error("datacenter {0} cannot receive its own updates as remote")]
    LocalOrigin(usize),

    #[error("event scheduled in the past (at {at}us, now {now}us)")]
    ScheduleInPast { at: u64, now: u64 },

    #[error("{0}")]
    Config(#[from] crate::harness::config::ConfigErrors),

    #[error("malformed log: {0}")]
    MalformedLog(String),
}
