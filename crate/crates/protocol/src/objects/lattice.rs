//! Generalized lattice agreement on top of the atomic snapshot: a propose is
//! an update of the join of the node's inputs so far, followed by a scan
//! whose values are joined into the output.

use crate::value::AsVal;
use std::collections::BTreeSet;

/// Shipped lattice instantiations. The interface is the usual join-semilattice
/// triple (bottom, join, leq) over the snapshot value domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeKind {
    /// Finite sets of integers under union.
    SetUnion,
    /// Integers under max, with bottom 0.
    IntMax,
}

impl LatticeKind {
    pub fn name(self) -> &'static str {
        match self {
            LatticeKind::SetUnion => "set_union",
            LatticeKind::IntMax => "int_max",
        }
    }

    pub fn bottom(self) -> AsVal {
        match self {
            LatticeKind::SetUnion => AsVal::Set(BTreeSet::new()),
            LatticeKind::IntMax => AsVal::Int(0),
        }
    }

    pub fn join(self, a: &AsVal, b: &AsVal) -> AsVal {
        match (self, a, b) {
            (LatticeKind::SetUnion, AsVal::Set(x), AsVal::Set(y)) => {
                AsVal::Set(x.union(y).copied().collect())
            }
            (LatticeKind::IntMax, AsVal::Int(x), AsVal::Int(y)) => AsVal::Int(*x.max(y)),
            _ => panic!("lattice value does not belong to the {} lattice", self.name()),
        }
    }

    pub fn leq(self, a: &AsVal, b: &AsVal) -> bool {
        match (self, a, b) {
            (LatticeKind::SetUnion, AsVal::Set(x), AsVal::Set(y)) => x.is_subset(y),
            (LatticeKind::IntMax, AsVal::Int(x), AsVal::Int(y)) => x <= y,
            _ => panic!("lattice value does not belong to the {} lattice", self.name()),
        }
    }

    pub fn comparable(self, a: &AsVal, b: &AsVal) -> bool {
        self.leq(a, b) || self.leq(b, a)
    }

    /// Whether a snapshot value belongs to this lattice's domain. Proposals
    /// joining a scanned view skip foreign values (from unrelated updates
    /// sharing the snapshot) rather than treating them as corruption.
    pub fn admits(self, v: &AsVal) -> bool {
        matches!(
            (self, v),
            (LatticeKind::SetUnion, AsVal::Set(_)) | (LatticeKind::IntMax, AsVal::Int(_))
        )
    }

    /// Join over any number of values; the empty join is bottom.
    pub fn join_all<'a>(self, vals: impl IntoIterator<Item = &'a AsVal>) -> AsVal {
        vals.into_iter()
            .fold(self.bottom(), |acc, v| self.join(&acc, v))
    }
}
