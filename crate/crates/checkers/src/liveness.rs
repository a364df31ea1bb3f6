//! Latency bounds, given the churn assumptions hold.
//!
//! - Entrants join within 2D of entering.
//! - Every threshold-gated broadcast phase completes within 2D.
//! - Store operations and sub-operations complete within 2D; collects within
//!   4D (collect phase plus store-back phase).
//! - A scan's retry loop runs at most as many rounds as there are nodes in
//!   the system when its opening store completes: each extra round requires a
//!   concurrent update by a distinct node.
//!
//! A deadline is only enforceable if it lies within the recorded horizon and
//! the responsible node neither left nor crashed first; everything else is
//! exempt, not a violation. A completed action needs no exemption: it is
//! judged by its actual duration.

use crate::schedule::Schedule;
use crate::{Verdict, Violation};

/// Extra scan rounds tolerated beyond the system size. The loop structure
/// admits no extras, so the checker holds the line at zero.
const SCAN_ROUNDS_SLACK: u64 = 0;

pub fn check_liveness(sched: &Schedule) -> Verdict {
    let d = sched.d;
    let mut violations = Vec::new();

    // An unmet deadline only counts when the run recorded the whole window
    // and the node stayed up through it.
    let enforceable = |node: &str, deadline: u64| -> bool {
        deadline <= sched.horizon
            && sched.nodes.get(node).and_then(|l| l.depart_t()).is_none_or(|dep| dep > deadline)
    };

    for life in sched.nodes.values() {
        let Some((enter_t, enter_idx)) = life.enter else { continue };
        let deadline = enter_t + 2 * d;
        match life.joined {
            Some((join_t, join_idx)) => {
                if join_t > deadline {
                    violations.push(Violation::new(
                        vec![sched.line(enter_idx), sched.line(join_idx)],
                        format!(
                            "{} entered at {enter_t} and joined at {join_t}, \
                             past the {deadline} deadline",
                            life.name
                        ),
                    ));
                }
            }
            None => {
                if enforceable(&life.name, deadline) {
                    violations.push(Violation::new(
                        vec![sched.line(enter_idx)],
                        format!(
                            "{} entered at {enter_t} and never joined, though it \
                             stayed up past the {deadline} deadline",
                            life.name
                        ),
                    ));
                }
            }
        }
    }

    for p in &sched.phases {
        let deadline = p.start_t + 2 * d;
        match (p.end_t, p.end_idx) {
            (Some(end_t), Some(end_idx)) => {
                if end_t > deadline {
                    violations.push(Violation::new(
                        vec![sched.line(p.start_idx), sched.line(end_idx)],
                        format!(
                            "{} phase by {} started at {} took {} > 2D",
                            p.phase,
                            p.node,
                            p.start_t,
                            end_t - p.start_t
                        ),
                    ));
                }
            }
            _ => {
                if enforceable(&p.node, deadline) {
                    violations.push(Violation::new(
                        vec![sched.line(p.start_idx)],
                        format!(
                            "{} phase by {} started at {} never ended by its \
                             {deadline} deadline",
                            p.phase, p.node, p.start_t
                        ),
                    ));
                }
            }
        }
    }

    // (node, label, bound, inv_idx, inv_t, resp_idx, resp_t)
    type Item<'a> = (&'a str, String, u64, usize, u64, Option<usize>, Option<u64>);
    let mut items: Vec<Item> = Vec::new();
    for op in &sched.ops {
        let bound = match op.op.as_str() {
            "store" => 2 * d,
            "collect" => 4 * d,
            _ => continue,
        };
        items.push((
            &op.node,
            format!("{} op", op.op),
            bound,
            op.inv_idx,
            op.inv_t,
            op.resp_idx,
            op.resp_t,
        ));
    }
    for sub in &sched.subs {
        let bound = match sub.kind.as_str() {
            "store" => 2 * d,
            "collect" => 4 * d,
            _ => continue,
        };
        items.push((
            &sub.node,
            format!("{} sub ({})", sub.kind, sub.purpose),
            bound,
            sub.inv_idx,
            sub.inv_t,
            sub.resp_idx,
            sub.resp_t,
        ));
    }
    for (node, label, bound, inv_idx, inv_t, resp_idx, resp_t) in items {
        let deadline = inv_t + bound;
        match (resp_t, resp_idx) {
            (Some(rt), Some(ri)) => {
                if rt > deadline {
                    violations.push(Violation::new(
                        vec![sched.line(inv_idx), sched.line(ri)],
                        format!(
                            "{label} by {node} invoked at {inv_t} took {} > {bound}",
                            rt - inv_t
                        ),
                    ));
                }
            }
            _ => {
                if enforceable(node, deadline) {
                    violations.push(Violation::new(
                        vec![sched.line(inv_idx)],
                        format!(
                            "{label} by {node} invoked at {inv_t} never completed by \
                             its {deadline} deadline"
                        ),
                    ));
                }
            }
        }
    }

    for scan in &sched.scans {
        let Some(opening) = sched.sub_by_node_seq(&scan.node, scan.opening_sub) else {
            continue;
        };
        let Some(t) = opening.resp_t else { continue };
        let allowed = sched.n_at(t) + SCAN_ROUNDS_SLACK;
        if scan.rounds > allowed {
            violations.push(Violation::new(
                vec![sched.line(opening.inv_idx), sched.line(scan.idx)],
                format!(
                    "scan by {} ran {} retry rounds with only {} nodes in the \
                     system when its opening store completed",
                    scan.node, scan.rounds, allowed
                ),
            ));
        }
    }

    Verdict::new("liveness", violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{NodeLife, OpSpan, PhaseSpan, ScanSpan, SubSpan};
    use churnstore_sim::trace::RespData;
    use serde_json::json;
    use std::collections::BTreeMap;

    const D: u64 = 10;

    fn base() -> Schedule {
        let mut s = Schedule::synthetic(D, 1000);
        s.add_node("p");
        s
    }

    fn entrant(s: &mut Schedule, name: &str, enter_t: u64, joined_t: Option<u64>) {
        s.nodes.insert(
            name.to_string(),
            NodeLife {
                name: name.to_string(),
                initial: false,
                enter: Some((enter_t, 1)),
                joined: joined_t.map(|t| (t, 2)),
                leave: None,
                crash: None,
            },
        );
        s.reindex();
    }

    #[test]
    fn join_deadline_is_enter_plus_two_d() {
        let mut s = base();
        entrant(&mut s, "q", 100, Some(100 + 2 * D));
        assert!(check_liveness(&s).pass);

        entrant(&mut s, "q", 100, Some(100 + 2 * D + 1));
        let v = check_liveness(&s);
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("past the 120 deadline"));
    }

    #[test]
    fn unjoined_entrant_is_exempt_if_it_departed_or_the_run_ended() {
        // Left before the deadline: exempt.
        let mut s = base();
        entrant(&mut s, "q", 100, None);
        s.nodes.get_mut("q").unwrap().leave = Some((110, 3));
        s.reindex();
        assert!(check_liveness(&s).pass);

        // Crashed on the deadline: exempt (departure at the boundary).
        let mut s = base();
        entrant(&mut s, "q", 100, None);
        s.nodes.get_mut("q").unwrap().crash = Some((120, 3));
        s.reindex();
        assert!(check_liveness(&s).pass);

        // Deadline past the horizon: exempt.
        let mut s = base();
        entrant(&mut s, "q", 990, None);
        assert!(check_liveness(&s).pass);

        // Alive and in-horizon: violation.
        let mut s = base();
        entrant(&mut s, "q", 100, None);
        let v = check_liveness(&s);
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("never joined"));
    }

    fn op(node: &str, name: &str, inv_t: u64, resp_t: Option<u64>) -> OpSpan {
        OpSpan {
            node: node.into(),
            op: name.into(),
            args: json!({}),
            sqno: (name == "store").then_some(1),
            inv_idx: 5,
            inv_t,
            resp_idx: resp_t.map(|_| 9),
            resp_t,
            resp: resp_t.map(|_| match name {
                "store" => RespData::Store { sqno: 1 },
                _ => RespData::Collect { view: BTreeMap::new() },
            }),
        }
    }

    #[test]
    fn store_ops_get_two_d_and_collects_four() {
        let mut s = base();
        s.ops = vec![op("p", "store", 50, Some(50 + 2 * D)), op("p", "collect", 50, Some(50 + 4 * D))];
        assert!(check_liveness(&s).pass);

        s.ops = vec![op("p", "store", 50, Some(50 + 2 * D + 1))];
        let v = check_liveness(&s);
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("store op"));

        s.ops = vec![op("p", "collect", 50, Some(50 + 4 * D + 1))];
        assert!(!check_liveness(&s).pass);
    }

    #[test]
    fn sub_operations_are_bounded_like_operations() {
        let mut s = base();
        s.ops = vec![OpSpan {
            node: "p".into(),
            op: "update".into(),
            args: json!({}),
            inv_idx: 4,
            inv_t: 50,
            resp_idx: Some(20),
            resp_t: Some(120),
            resp: Some(RespData::Update),
            ..OpSpan::default()
        }];
        s.subs = vec![SubSpan {
            node: "p".into(),
            seq: 1,
            kind: "collect".into(),
            purpose: "scounts_collect".into(),
            sqno: None,
            inv_idx: 5,
            inv_t: 50,
            resp_idx: Some(8),
            resp_t: Some(50 + 4 * D + 1),
            view: Some(BTreeMap::new()),
            op_index: 0,
        }];
        s.reindex();
        let v = check_liveness(&s);
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("collect sub (scounts_collect)"));
    }

    #[test]
    fn pending_ops_violate_only_when_the_window_was_recorded_and_the_node_stayed() {
        // Alive, in-horizon, never completed: violation.
        let mut s = base();
        s.ops = vec![op("p", "store", 50, None)];
        assert!(!check_liveness(&s).pass);

        // Node crashed before the deadline: exempt.
        let mut s = base();
        s.nodes.get_mut("p").unwrap().crash = Some((60, 3));
        s.reindex();
        s.ops = vec![op("p", "store", 50, None)];
        assert!(check_liveness(&s).pass);

        // Deadline past the horizon: exempt.
        let mut s = base();
        s.ops = vec![op("p", "store", 990, None)];
        assert!(check_liveness(&s).pass);
    }

    #[test]
    fn phases_must_close_within_two_d() {
        let mut s = base();
        s.phases = vec![PhaseSpan {
            node: "p".into(),
            tag: 1,
            phase: "store".into(),
            start_idx: 5,
            start_t: 50,
            end_idx: Some(7),
            end_t: Some(50 + 2 * D),
            view: None,
        }];
        assert!(check_liveness(&s).pass);

        s.phases[0].end_t = Some(50 + 2 * D + 1);
        let v = check_liveness(&s);
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("store phase"));

        // Pending phase of a departed node: exempt.
        s.phases[0].end_t = None;
        s.phases[0].end_idx = None;
        s.nodes.get_mut("p").unwrap().leave = Some((55, 9));
        s.reindex();
        assert!(check_liveness(&s).pass);
    }

    #[test]
    fn scan_rounds_are_bounded_by_system_size() {
        let mut s = base();
        s.add_node("q");
        s.add_node("r");
        s.ops = vec![OpSpan {
            node: "p".into(),
            op: "scan".into(),
            args: json!({}),
            inv_idx: 3,
            inv_t: 40,
            resp_idx: Some(30),
            resp_t: Some(90),
            resp: Some(RespData::Scan { view: BTreeMap::new() }),
            ..OpSpan::default()
        }];
        s.subs = vec![SubSpan {
            node: "p".into(),
            seq: 7,
            kind: "store".into(),
            purpose: "opening_store".into(),
            sqno: Some(1),
            inv_idx: 4,
            inv_t: 40,
            resp_idx: Some(6),
            resp_t: Some(55),
            view: None,
            op_index: 0,
        }];
        let mut scan = ScanSpan {
            node: "p".into(),
            idx: 25,
            t: 88,
            ssqno: 1,
            embedded: false,
            mode: "direct".into(),
            source: None,
            source_ssqno: None,
            rounds: 3,
            opening_sub: 7,
            view: BTreeMap::new(),
            usqnos: Some(BTreeMap::new()),
            op_index: 0,
        };
        s.scans = vec![scan.clone()];
        s.reindex();
        assert!(check_liveness(&s).pass, "3 rounds with 3 nodes present");

        scan.rounds = 4;
        s.scans = vec![scan];
        let v = check_liveness(&s);
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("retry rounds"));
    }
}
