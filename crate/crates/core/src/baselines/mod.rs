//! Comparison protocols: per-datacenter sequencers (synchronous, asynchronous
//! and chain-replicated) and global stabilization with scalar or vector
//! metadata. The eventually consistent baseline reuses the global
//! stabilization partition and skips the gating step.

pub mod gstab;
pub mod sequencer;

pub use gstab::{GStabPartition, GlobalStable, StabMode, Stabilizer};
pub use sequencer::{SeqMode, SeqPartition, SeqReceiver, SequencerReplica, Token};
