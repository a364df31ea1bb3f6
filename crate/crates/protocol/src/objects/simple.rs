//! Simple regular objects on store-collect: max register, abort flag, set.
//! Writes are stores; reads are collects post-processed by the functions
//! here. Foreign value variants in a view (mixed workloads) are ignored.

use crate::value::Val;
use crate::view::View;
use std::collections::BTreeSet;

/// Max register read: largest integer in the view, 0 when none.
pub fn readmax_result(view: &View) -> i64 {
    view.iter()
        .filter_map(|(_, e)| match &*e.val {
            Val::Int(v) => Some(*v),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

/// Abort-flag check: true iff any node's flag is raised.
pub fn check_result(view: &View) -> bool {
    view.iter().any(|(_, e)| matches!(&*e.val, Val::Flag(true)))
}

/// Set read: union of every node's stored set.
pub fn readset_result(view: &View) -> BTreeSet<i64> {
    let mut out = BTreeSet::new();
    for (_, e) in view.iter() {
        if let Val::Set(s) = &*e.val {
            out.extend(s.iter().copied());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::NodeId;
    use std::sync::Arc;

    fn view(vals: &[(u32, Val)]) -> View {
        let mut v = View::new();
        for (i, (p, val)) in vals.iter().enumerate() {
            v.insert_triple(NodeId(*p), Arc::new(val.clone()), (i + 1) as u64);
        }
        v
    }

    #[test]
    fn readmax_empty_is_zero() {
        assert_eq!(readmax_result(&View::new()), 0);
    }

    #[test]
    fn readmax_takes_view_maximum() {
        let v = view(&[(1, Val::Int(3)), (2, Val::Int(7)), (3, Val::Int(5))]);
        assert_eq!(readmax_result(&v), 7);
    }

    #[test]
    fn check_sees_any_raised_flag() {
        assert!(!check_result(&View::new()));
        let v = view(&[(1, Val::Flag(false)), (2, Val::Flag(true))]);
        assert!(check_result(&v));
        let v = view(&[(1, Val::Flag(false))]);
        assert!(!check_result(&v));
    }

    #[test]
    fn readset_unions_per_node_sets() {
        let v = view(&[
            (1, Val::Set([1, 2].into())),
            (2, Val::Set([2, 3].into())),
        ]);
        assert_eq!(readset_result(&v), BTreeSet::from([1, 2, 3]));
        assert!(readset_result(&View::new()).is_empty());
    }

    #[test]
    fn foreign_variants_are_ignored() {
        let v = view(&[(1, Val::Raw("x".into())), (2, Val::Int(4))]);
        assert_eq!(readmax_result(&v), 4);
        assert!(!check_result(&v));
        assert!(readset_result(&v).is_empty());
    }
}
