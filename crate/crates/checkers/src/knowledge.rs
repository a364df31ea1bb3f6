//! Information-propagation guarantees: how fast membership changes and
//! stored values spread, given the churn assumptions hold.
//!
//! Three checks, each against the recorded per-node state deltas:
//!
//! - present-changes: a broadcast membership change at time τ is known to
//!   every present node q by max(t_enter(q) + 2D, τ + D). Direct delivery
//!   takes D; a node that entered near or after the event instead learns it
//!   from the echoes answering its entry, within 2D of entering.
//! - joined-changes: a joined node knows, at any time t, every broadcast
//!   membership change up to t − 2D, and the initial membership outright.
//!   So a change at τ must be known by max(t_join(q), τ + 2D); an initial
//!   (τ = 0) event must be known the moment q joins.
//! - joined-stores: a store broadcast with view V at τ must be reflected in
//!   every joined node's local view by max(t_join(q), τ + 2D), entry by
//!   entry.
//!
//! Only broadcasts that actually went out count: a crash may truncate a
//! broadcast (or the trace may end before it), and nothing obliges other
//! nodes to learn what was never fully sent. Initial membership is common
//! knowledge by construction and needs no broadcast. A deadline is enforced
//! only if it lies within the horizon and q stayed up through it.

use crate::schedule::Schedule;
use crate::{Verdict, Violation};
use std::collections::BTreeMap;

/// When each node acquired each piece of knowledge, folded from its deltas.
struct Acquired {
    /// (kind, node) -> earliest (t, idx) a membership change appeared.
    changes: BTreeMap<(String, String), (u64, usize)>,
    /// node -> increasing (sqno, t, idx) milestones of the local view entry.
    lview: BTreeMap<String, Vec<(u64, u64, usize)>>,
}

impl Acquired {
    fn fold(sched: &Schedule, q: &str) -> Acquired {
        let mut changes = BTreeMap::new();
        let mut lview: BTreeMap<String, Vec<(u64, u64, usize)>> = BTreeMap::new();
        for delta in sched.state_deltas.get(q).map_or(&[][..], |v| v) {
            for (kind, node) in &delta.changes {
                changes
                    .entry((kind.clone(), node.clone()))
                    .or_insert((delta.t, delta.idx));
            }
            for (x, &sqno) in &delta.lview {
                let hist = lview.entry(x.clone()).or_default();
                if hist.last().is_none_or(|&(s, _, _)| s < sqno) {
                    hist.push((sqno, delta.t, delta.idx));
                }
            }
        }
        Acquired { changes, lview }
    }

    fn change_at(&self, kind: &str, node: &str) -> Option<(u64, usize)> {
        self.changes.get(&(kind.to_string(), node.to_string())).copied()
    }

    /// Earliest (t, idx) at which q's view held sqno >= k for x.
    fn view_at(&self, x: &str, k: u64) -> Option<(u64, usize)> {
        let hist = self.lview.get(x)?;
        let i = hist.partition_point(|&(s, _, _)| s < k);
        hist.get(i).map(|&(_, t, idx)| (t, idx))
    }
}

/// One membership change other nodes are obliged to learn.
struct ActiveEvent {
    kind: &'static str,
    node: String,
    t: u64,
    idx: usize,
    initial: bool,
}

fn active_events(sched: &Schedule) -> Vec<ActiveEvent> {
    let mut events = Vec::new();
    for life in sched.nodes.values() {
        let mut add = |kind: &'static str, stamp: Option<(u64, usize)>| {
            let Some((t, idx)) = stamp else { return };
            // Initial membership is common knowledge without a broadcast;
            // everything else counts only if its broadcast fully went out.
            let initial = life.initial && t == 0 && kind != "leave";
            if !initial {
                match sched.membership_sends.get(&(life.name.clone(), kind)) {
                    Some(send) if !send.truncated => {}
                    _ => return,
                }
            }
            events.push(ActiveEvent { kind, node: life.name.clone(), t, idx, initial });
        };
        add("enter", life.enter);
        add("join", life.joined);
        add("leave", life.leave);
    }
    events
}

pub fn check_knowledge(sched: &Schedule) -> Verdict {
    let d = sched.d;
    let mut violations = Vec::new();

    let acquired: BTreeMap<&str, Acquired> = sched
        .nodes
        .keys()
        .map(|q| (q.as_str(), Acquired::fold(sched, q)))
        .collect();

    let enforceable = |q: &str, deadline: u64| -> bool {
        deadline <= sched.horizon
            && sched.nodes.get(q).and_then(|l| l.depart_t()).is_none_or(|dep| dep > deadline)
    };

    let events = active_events(sched);

    for life in sched.nodes.values() {
        let q = &life.name;
        let Some((enter_q, _)) = life.enter else { continue };
        let acq = &acquired[q.as_str()];

        for e in &events {
            if e.node == *q {
                continue;
            }
            // Present-changes: every present node learns within D of the
            // event or 2D of its own entry, whichever is later.
            let required = (enter_q + 2 * d).max(e.t + d);
            let got = acq.change_at(e.kind, &e.node);
            if got.is_none_or(|(t, _)| t > required) && enforceable(q, required) {
                let mut lines = vec![sched.line(e.idx)];
                if let Some((_, idx)) = got {
                    lines.push(sched.line(idx));
                }
                violations.push(Violation::new(
                    lines,
                    format!(
                        "{} of {} at {} was not known to present node {q} by {required}{}",
                        e.kind,
                        e.node,
                        e.t,
                        got.map_or(String::new(), |(t, _)| format!(" (learned at {t})"))
                    ),
                ));
            }

            // Joined-changes: joined nodes know all changes 2D old, and the
            // initial membership from the moment they join.
            let Some((join_q, _)) = life.joined else { continue };
            let required =
                if e.initial { join_q } else { join_q.max(e.t + 2 * d) };
            if got.is_none_or(|(t, _)| t > required) && enforceable(q, required) {
                let mut lines = vec![sched.line(e.idx)];
                if let Some((_, idx)) = got {
                    lines.push(sched.line(idx));
                }
                violations.push(Violation::new(
                    lines,
                    format!(
                        "{} of {} at {} was not known to joined node {q} by {required}{}",
                        e.kind,
                        e.node,
                        e.t,
                        got.map_or(String::new(), |(t, _)| format!(" (learned at {t})"))
                    ),
                ));
            }
        }
    }

    // Joined-stores: each fully-broadcast store view must be absorbed into
    // every joined node's local view within 2D, or by join time for late
    // joiners.
    for send in &sched.store_sends {
        if send.truncated {
            continue;
        }
        for life in sched.nodes.values() {
            let q = &life.name;
            if *q == send.node {
                continue;
            }
            let Some((join_q, _)) = life.joined else { continue };
            let required = join_q.max(send.t + 2 * d);
            if !enforceable(q, required) {
                continue;
            }
            let acq = &acquired[q.as_str()];
            for (x, &k) in &send.view {
                let got = acq.view_at(x, k);
                if got.is_none_or(|(t, _)| t > required) {
                    let mut lines = vec![sched.line(send.idx)];
                    if let Some((_, idx)) = got {
                        lines.push(sched.line(idx));
                    }
                    violations.push(Violation::new(
                        lines,
                        format!(
                            "store broadcast by {} at {} carried sqno {k} for {x}, \
                             not reflected in joined node {q}'s view by {required}{}",
                            send.node,
                            send.t,
                            got.map_or(String::new(), |(t, _)| format!(" (reached at {t})"))
                        ),
                    ));
                }
            }
        }
    }

    Verdict::new("knowledge", violations)
}
