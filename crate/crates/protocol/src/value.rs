//! Value domains for the store-collect object and the layers above it.

use crate::view::NodeId;
use std::collections::{BTreeMap, BTreeSet};

/// Value domain of the atomic snapshot object (and of lattice agreement,
/// which stores lattice values in snapshot cells).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum AsVal {
    Int(u64),
    Set(BTreeSet<u64>),
}

/// One node's register in the snapshot construction. This is the record type
/// stored in the underlying store-collect object by scans and updates.
///
/// `ssqno` advances at scan start (the scan announces itself by re-storing
/// the cell with only `ssqno` changed); `val`, `usqno`, `sview`, `scounts`
/// advance together in an update's final store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotCell {
    /// Last value written by this node's updates; `None` until the first
    /// update completes its final store.
    pub val: Option<AsVal>,
    /// Count of this node's updates reflected in `val`.
    pub usqno: u64,
    /// Count of this node's scans (top-level and embedded).
    pub ssqno: u64,
    /// The snapshot view collected by this node's latest completed update.
    pub sview: BTreeMap<NodeId, AsVal>,
    /// Scan sequence numbers of scans this node's latest update observed as
    /// in progress; a scanner finding its own number here may borrow `sview`.
    pub scounts: BTreeMap<NodeId, u64>,
}

impl SnapshotCell {
    pub fn bottom() -> Self {
        SnapshotCell {
            val: None,
            usqno: 0,
            ssqno: 0,
            sview: BTreeMap::new(),
            scounts: BTreeMap::new(),
        }
    }
}

impl Default for SnapshotCell {
    fn default() -> Self {
        Self::bottom()
    }
}

/// Value stored in the store-collect object. The protocol treats values as
/// opaque; the object layers each interpret only their own variant and
/// ignore foreign ones, so a mixed workload degrades gracefully instead of
/// corrupting state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Val {
    /// Opaque payload for plain store/collect workloads.
    Raw(String),
    /// Max-register value.
    Int(i64),
    /// Abort-flag value.
    Flag(bool),
    /// Add-set accumulation (a node stores its whole local set).
    Set(BTreeSet<i64>),
    /// Atomic-snapshot cell.
    Cell(SnapshotCell),
}

impl Val {
    pub fn as_cell(&self) -> Option<&SnapshotCell> {
        match self {
            Val::Cell(c) => Some(c),
            _ => None,
        }
    }
}
