//! Regularity of the store/collect substrate.
//!
//! Every completed collect (top-level operation or sub-operation, uniformly)
//! must return a view that:
//!
//! 1. per node, is at least as fresh as the last store by that node that
//!    completed before the collect was invoked, and contains only sequence
//!    numbers actually assigned by a store invoked before the collect
//!    returned (no stale reads, no phantom reads);
//! 2. dominates every view returned by a collect that completed before this
//!    one was invoked (reads do not travel backwards).
//!
//! Stores that were still in flight at invocation time may or may not be
//! reflected; both outcomes are legal.

use crate::schedule::Schedule;
use crate::{Verdict, Violation};
use churnstore_sim::trace::RespData;
use std::collections::BTreeMap;

/// One store by a node, in per-node temporal order (= sqno order, since each
/// node runs one operation at a time and sequence numbers are assigned at
/// invocation).
struct StoreRec {
    sqno: u64,
    inv_idx: usize,
    resp_idx: Option<usize>,
}

/// One completed collect, top-level or sub.
struct CollectRec {
    node: String,
    inv_idx: usize,
    resp_idx: usize,
    view: BTreeMap<String, u64>,
}

pub fn check_regularity(sched: &Schedule) -> Verdict {
    let mut stores: BTreeMap<&str, Vec<StoreRec>> = BTreeMap::new();
    let mut collects: Vec<CollectRec> = Vec::new();

    for op in &sched.ops {
        if op.op == "store" {
            stores.entry(&op.node).or_default().push(StoreRec {
                sqno: op.sqno.expect("store op carries its sqno"),
                inv_idx: op.inv_idx,
                resp_idx: op.resp_idx,
            });
        }
        if let (Some(RespData::Collect { view }), Some(resp_idx)) = (&op.resp, op.resp_idx) {
            collects.push(CollectRec {
                node: op.node.clone(),
                inv_idx: op.inv_idx,
                resp_idx,
                view: view.clone(),
            });
        }
    }
    for sub in &sched.subs {
        if sub.kind == "store" {
            stores.entry(&sub.node).or_default().push(StoreRec {
                sqno: sub.sqno.expect("store sub carries its sqno"),
                inv_idx: sub.inv_idx,
                resp_idx: sub.resp_idx,
            });
        } else if let (Some(view), Some(resp_idx)) = (&sub.view, sub.resp_idx) {
            collects.push(CollectRec {
                node: sub.node.clone(),
                inv_idx: sub.inv_idx,
                resp_idx,
                view: view.clone(),
            });
        }
    }
    for recs in stores.values_mut() {
        recs.sort_by_key(|r| r.sqno);
    }
    collects.sort_by_key(|c| c.inv_idx);

    let mut violations = Vec::new();

    // Clause 1: against stores.
    for c in &collects {
        for (p, recs) in &stores {
            let k = c.view.get(*p).copied().unwrap_or(0);
            // First store by p completed before this collect began that the
            // returned view does not cover.
            let missed = recs
                .iter()
                .find(|r| r.sqno > k && r.resp_idx.is_some_and(|ri| ri < c.inv_idx));
            if let Some(m) = missed {
                violations.push(Violation::new(
                    vec![
                        sched.line(m.resp_idx.unwrap()),
                        sched.line(c.inv_idx),
                        sched.line(c.resp_idx),
                    ],
                    format!(
                        "collect by {} returned sqno {k} for {p}, but store {} by {p} \
                         completed before the collect was invoked",
                        c.node, m.sqno
                    ),
                ));
            }
            if k > 0 {
                let stored = recs.iter().any(|r| r.sqno == k && r.inv_idx < c.resp_idx);
                if !stored {
                    violations.push(Violation::new(
                        vec![sched.line(c.inv_idx), sched.line(c.resp_idx)],
                        format!(
                            "collect by {} returned sqno {k} for {p}, but no store by {p} \
                             with that sqno was invoked before the collect returned",
                            c.node
                        ),
                    ));
                }
            }
        }
        for (p, &k) in &c.view {
            if k > 0 && !stores.contains_key(p.as_str()) {
                violations.push(Violation::new(
                    vec![sched.line(c.inv_idx), sched.line(c.resp_idx)],
                    format!(
                        "collect by {} returned sqno {k} for {p}, but {p} never stored",
                        c.node
                    ),
                ));
            }
        }
    }

    // Clause 2: against earlier-completed collects, via a frontier holding
    // the per-node maximum sqno over all merged views, with the record index
    // of the collect that contributed it. A view dominates every earlier
    // view iff it dominates the frontier.
    let mut by_resp: Vec<usize> = (0..collects.len()).collect();
    by_resp.sort_by_key(|&i| collects[i].resp_idx);
    let mut next_done = 0;
    let mut frontier: BTreeMap<&str, (u64, usize)> = BTreeMap::new();
    for c in &collects {
        while next_done < by_resp.len() && collects[by_resp[next_done]].resp_idx < c.inv_idx {
            let done = &collects[by_resp[next_done]];
            for (p, &k) in &done.view {
                let e = frontier.entry(p).or_insert((0, done.resp_idx));
                if k > e.0 {
                    *e = (k, done.resp_idx);
                }
            }
            next_done += 1;
        }
        for (p, &(k, prov)) in &frontier {
            if c.view.get(*p).copied().unwrap_or(0) < k {
                violations.push(Violation::new(
                    vec![sched.line(prov), sched.line(c.inv_idx), sched.line(c.resp_idx)],
                    format!(
                        "collect by {} returned a view older for {p} (sqno {}) than a \
                         collect that completed before it was invoked (sqno {k})",
                        c.node,
                        c.view.get(*p).copied().unwrap_or(0)
                    ),
                ));
            }
        }
    }

    Verdict::new("regularity", violations)
}
