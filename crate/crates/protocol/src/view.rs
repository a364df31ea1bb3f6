//! Views: per-node latest-value maps, with the merge operation and the
//! freshness order on views.

use crate::value::Val;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Dense node identifier. The simulator interns scenario node names to ids;
/// protocol code never sees names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One node's entry in a view: its latest known value and the store sequence
/// number that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewEntry {
    pub val: Arc<Val>,
    pub sqno: u64,
}

/// A set of (node, value, sqno) triples with unique node ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct View {
    entries: BTreeMap<NodeId, ViewEntry>,
}

impl View {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, p: NodeId) -> Option<&ViewEntry> {
        self.entries.get(&p)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &ViewEntry)> + '_ {
        self.entries.iter().map(|(p, e)| (*p, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Projection to per-node sequence numbers, the shape trace records use.
    pub fn sqnos(&self) -> BTreeMap<NodeId, u64> {
        self.entries.iter().map(|(p, e)| (*p, e.sqno)).collect()
    }

    /// Inserts one triple under merge semantics: kept only if fresher than
    /// the existing entry for the node.
    pub fn insert_triple(&mut self, p: NodeId, val: Arc<Val>, sqno: u64) {
        match self.entries.get_mut(&p) {
            Some(e) => {
                if sqno > e.sqno {
                    *e = ViewEntry { val, sqno };
                } else if sqno == e.sqno {
                    assert!(
                        Arc::ptr_eq(&e.val, &val) || e.val == val,
                        "two distinct values stored under one (node, sqno); \
                         per-node sequence numbers must be unique"
                    );
                }
            }
            None => {
                self.entries.insert(p, ViewEntry { val, sqno });
            }
        }
    }

    /// In-place merge: for every node id in `other`, keep the triple with the
    /// larger sequence number.
    pub fn merge_from(&mut self, other: &View) {
        for (p, e) in &other.entries {
            self.insert_triple(*p, Arc::clone(&e.val), e.sqno);
        }
    }

    /// The freshness order on views: `self ⪯ other` iff for every triple in
    /// `self` there is a triple for the same node in `other` whose store is
    /// the same or later. Stores by one node are totally ordered by sqno, so
    /// this reduces to per-node sqno dominance.
    pub fn leq(&self, other: &View) -> bool {
        self.entries.iter().all(|(p, e)| {
            other
                .entries
                .get(p)
                .is_some_and(|o| o.sqno >= e.sqno)
        })
    }
}

/// Merge of two views: every triple whose node id appears in exactly one
/// input, plus, for node ids in both, the triple with the larger sqno.
/// Both inputs are `⪯` the result.
pub fn merge(v1: &View, v2: &View) -> View {
    let mut out = v1.clone();
    out.merge_from(v2);
    out
}
