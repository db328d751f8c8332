//! Scalar and vector causality stamps.
//!
//! A [`HybridTimestamp`] is a plain 64-bit counter in simulated microseconds.
//! Partitions derive it from their physical clock and bump it logically when
//! the physical reading lags behind what causality requires, so the integer
//! order is the only order that matters.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct HybridTimestamp(pub u64);

impl HybridTimestamp {
    pub const ZERO: HybridTimestamp = HybridTimestamp(0);

    pub const fn new(value: u64) -> Self {
        HybridTimestamp(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    /// The smallest timestamp strictly greater than `self`.
    pub fn next(self) -> Self {
        HybridTimestamp(self.0 + 1)
    }

    pub fn saturating_add(self, micros: u64) -> Self {
        HybridTimestamp(self.0.saturating_add(micros))
    }
}

impl fmt::Display for HybridTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for HybridTimestamp {
    fn from(v: u64) -> Self {
        HybridTimestamp(v)
    }
}

/// One entry per datacenter. Length is fixed per deployment.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorTimestamp(Vec<HybridTimestamp>);

impl VectorTimestamp {
    pub fn zero(len: usize) -> Self {
        VectorTimestamp(vec![HybridTimestamp::ZERO; len])
    }

    pub fn from_entries<I, T>(entries: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<HybridTimestamp>,
    {
        VectorTimestamp(entries.into_iter().map(Into::into).collect())
    }

    /// Every entry set to `ts`. Used by the scalar-metadata baseline, where a
    /// single timestamp stands for the whole causal past.
    pub fn uniform(len: usize, ts: HybridTimestamp) -> Self {
        VectorTimestamp(vec![ts; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, dc: usize) -> HybridTimestamp {
        self.0[dc]
    }

    pub fn set(&mut self, dc: usize, ts: HybridTimestamp) {
        self.0[dc] = ts;
    }

    pub fn entries(&self) -> &[HybridTimestamp] {
        &self.0
    }

    pub fn max_entry(&self) -> HybridTimestamp {
        self.0.iter().copied().max().unwrap_or_default()
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }

    /// Entry-wise maximum.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.merge_in_place(other)?;
        Ok(out)
    }

    pub fn merge_in_place(&mut self, other: &Self) -> Result<()> {
        self.check_len(other)?;
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            *mine = (*mine).max(*theirs);
        }
        Ok(())
    }

    /// True iff `self[d] >= other[d]` for every `d` not listed in `skip`.
    ///
    /// Vectors of different lengths never dominate each other.
    pub fn dominates(&self, other: &Self, skip: &[usize]) -> bool {
        if self.len() != other.len() {
            return false;
        }
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .all(|(d, (a, b))| skip.contains(&d) || a >= b)
    }

    /// Sum of entries, used to linearize a batch of causally ordered vectors.
    pub fn weight(&self) -> u128 {
        self.0.iter().map(|t| t.0 as u128).sum()
    }
}

impl fmt::Display for VectorTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str("]")
    }
}
