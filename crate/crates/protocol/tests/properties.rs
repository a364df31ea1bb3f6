//! Property tests for the algebraic core: view merge laws, view order laws,
//! exact-rational parsing, threshold arithmetic, and membership unions.

use churnstore_protocol::membership::ChangesSet;
use churnstore_protocol::params::{
    counter_meets, phase_threshold, rat_from_decimal, rat_to_string,
};
use churnstore_protocol::value::Val;
use churnstore_protocol::view::{merge, NodeId, View};
use num::BigRational;
use proptest::prelude::*;
use std::sync::Arc;

/// Views whose triples are drawn from a small pool so merges collide often.
/// The value of a triple is a function of (node, sqno), matching the protocol
/// invariant that a node never reuses a sequence number.
fn arb_view() -> impl Strategy<Value = View> {
    prop::collection::btree_map(0u32..6, 1u64..8, 0..6).prop_map(|m| {
        let mut v = View::new();
        for (node, sqno) in m {
            let val = Val::Int((node as i64) * 1000 + sqno as i64);
            v.insert_triple(NodeId(node), Arc::new(val), sqno);
        }
        v
    })
}

fn arb_changes() -> impl Strategy<Value = ChangesSet> {
    (
        prop::collection::btree_set(0u32..8, 0..6),
        prop::collection::btree_set(0u32..8, 0..4),
        prop::collection::btree_set(0u32..8, 0..3),
    )
        .prop_map(|(enters, joins, leaves)| {
            let mut c = ChangesSet::new();
            for q in enters {
                c.add_enter(NodeId(q));
            }
            for q in joins {
                c.add_join(NodeId(q));
            }
            for q in leaves {
                // A leave is only ever recorded for a node that entered.
                c.add_enter(NodeId(q));
                c.add_leave(NodeId(q));
            }
            c
        })
}

proptest! {
    #[test]
    fn merge_is_commutative(a in arb_view(), b in arb_view()) {
        prop_assert_eq!(merge(&a, &b), merge(&b, &a));
    }

    #[test]
    fn merge_is_associative(a in arb_view(), b in arb_view(), c in arb_view()) {
        prop_assert_eq!(merge(&merge(&a, &b), &c), merge(&a, &merge(&b, &c)));
    }

    #[test]
    fn merge_is_idempotent(a in arb_view()) {
        prop_assert_eq!(merge(&a, &a), a);
    }

    #[test]
    fn merge_is_least_upper_bound(a in arb_view(), b in arb_view(), c in arb_view()) {
        let m = merge(&a, &b);
        prop_assert!(a.leq(&m));
        prop_assert!(b.leq(&m));
        // Any common upper bound dominates the merge.
        let ub = merge(&m, &c);
        prop_assert!(a.leq(&ub) && b.leq(&ub));
        prop_assert!(m.leq(&ub));
    }

    #[test]
    fn view_order_is_a_partial_order(a in arb_view(), b in arb_view(), c in arb_view()) {
        prop_assert!(a.leq(&a));
        if a.leq(&b) && b.leq(&a) {
            prop_assert_eq!(a.sqnos(), b.sqnos());
        }
        if a.leq(&b) && b.leq(&c) {
            prop_assert!(a.leq(&c));
        }
    }

    #[test]
    fn decimal_parse_round_trips(int in 0u64..1_000_000, frac in 0u32..1_000_000u32, neg in any::<bool>()) {
        let lit = format!("{}{}.{:06}", if neg { "-" } else { "" }, int, frac);
        let r = rat_from_decimal(&lit).unwrap();
        let back = rat_from_decimal(&rat_to_string(&r)).unwrap();
        prop_assert_eq!(r, back);
    }

    #[test]
    fn decimal_parse_agrees_with_integer_scaling(int in 0u64..10_000, frac in 0u32..100u32) {
        let lit = format!("{int}.{frac:02}");
        let r = rat_from_decimal(&lit).unwrap();
        let scaled = BigRational::new((int as i64 * 100 + frac as i64).into(), 100.into());
        prop_assert_eq!(r, scaled);
    }

    /// counter \u{2265} beta * members, exactly at the boundary, never below.
    #[test]
    fn threshold_meets_iff_scaled_comparison_holds(
        beta_hundredths in 1u32..=100,
        members in 0usize..60,
        counter in 0u64..60,
    ) {
        let beta = rat_from_decimal(&format!("0.{beta_hundredths:02}")).unwrap();
        let beta = if beta_hundredths == 100 { rat_from_decimal("1").unwrap() } else { beta };
        let th = phase_threshold(&beta, members);
        // th = max(1, beta*members); compare in integers: 100*counter vs beta_hundredths*members.
        let scaled_floor = u64::max(1 * 100, (beta_hundredths as u64) * members as u64);
        prop_assert_eq!(counter_meets(counter, &th), counter * 100 >= scaled_floor);
    }

    #[test]
    fn changes_union_laws(a in arb_changes(), b in arb_changes(), c in arb_changes()) {
        let mut ab = a.clone();
        ab.union_from(&b);
        let mut ba = b.clone();
        ba.union_from(&a);
        prop_assert_eq!(&ab, &ba);

        let mut ab_c = ab.clone();
        ab_c.union_from(&c);
        let mut bc = b.clone();
        bc.union_from(&c);
        let mut a_bc = a.clone();
        a_bc.union_from(&bc);
        prop_assert_eq!(&ab_c, &a_bc);

        let mut aa = a.clone();
        aa.union_from(&a);
        prop_assert_eq!(&aa, &a);

        // Members (joined, not left) are always present (entered, not left).
        let members: Vec<_> = aa.members().collect();
        for q in members {
            prop_assert!(aa.present().any(|p| p == q));
        }
    }
}
