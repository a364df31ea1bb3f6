//! Atomic-snapshot linearizability.
//!
//! The checker reconstructs the snapshot history from the schedule:
//!
//! - updates are the final stores, numbered per node in order (a node's j-th
//!   final store writes its j-th update); the written value is the update
//!   argument, or for proposes the running join of that node's inputs;
//! - scans are the recorded scan outcomes. A direct outcome carries its
//!   per-node update counts; a borrowed outcome is resolved to the embedded
//!   scan of the source node whose result it adopted, which must exist,
//!   agree on the returned values, and be nested inside the borrower's
//!   window (what makes borrowing sound in the first place).
//!
//! Pre-checks: every scanned value must match the update that wrote it, and
//! all scan vectors must be pairwise comparable. Then the history is checked
//! against the sequential snapshot spec two ways: a constructive pass that
//! builds the only candidate order (scans by dominance, updates pinned
//! before the first scan that saw them) and validates real time in O(n²);
//! and, within budget, an exhaustive memoized search over all orders. The
//! verdict's mode field says which engines ran — a history too large for the
//! exhaustive pass is reported as constructive-only, never silently.
//!
//! Completed operations must linearize; pending updates whose final store
//! started may linearize (their effect may be visible) but need not.

use crate::schedule::Schedule;
use crate::{Verdict, Violation};
use churnstore_protocol::value::AsVal;
use serde_json::Value;
use std::collections::BTreeMap;

/// Largest history (updates + scans) the exhaustive search will take on.
pub const DEFAULT_EXHAUSTIVE_BUDGET: usize = 12;

/// Hard ceiling for the exhaustive mask table, whatever the caller asks for.
const EXHAUSTIVE_CEILING: usize = 20;

enum LinKind {
    Update { node: String, j: u64, value: AsVal },
    Scan { vector: BTreeMap<String, u64> },
}

struct LinOp {
    kind: LinKind,
    start_idx: usize,
    end_idx: Option<usize>,
    /// Whether the history must include this op (false for updates whose
    /// enclosing operation never returned).
    required: bool,
    /// Lines identifying the op in violation reports.
    lines: Vec<usize>,
}

fn parse_asval(v: &Value) -> Option<AsVal> {
    if let Some(n) = v.as_u64() {
        return Some(AsVal::Int(n));
    }
    Some(AsVal::Set(
        v.as_array()?.iter().map(|x| x.as_u64()).collect::<Option<_>>()?,
    ))
}

fn render(v: &AsVal) -> String {
    match v {
        AsVal::Int(n) => n.to_string(),
        AsVal::Set(s) => {
            format!("{{{}}}", s.iter().map(u64::to_string).collect::<Vec<_>>().join(", "))
        }
    }
}

/// The value a final store writes, from the enclosing op's arguments.
fn stored_value(op_name: &str, args: &Value, folded: Option<&AsVal>) -> Option<AsVal> {
    match op_name {
        "update" => {
            if let Some(vs) = args.get("values") {
                Some(AsVal::Set(
                    vs.as_array()?.iter().map(|x| x.as_u64()).collect::<Option<_>>()?,
                ))
            } else {
                Some(AsVal::Int(args.get("value")?.as_u64()?))
            }
        }
        "propose" => folded.cloned(),
        _ => None,
    }
}

/// Running join of each propose's inputs per node, keyed by op index: what
/// the propose's final store actually writes.
fn folded_propose_values(sched: &Schedule) -> BTreeMap<usize, AsVal> {
    let set_lattice = sched.meta.lattice != "int_max";
    let mut acc: BTreeMap<&str, AsVal> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for (i, op) in sched.ops.iter().enumerate() {
        if op.op != "propose" {
            continue;
        }
        let input = if set_lattice {
            op.args
                .get("values")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(|x| x.as_u64()).collect::<Option<_>>().map(AsVal::Set))
        } else {
            op.args.get("value").and_then(Value::as_u64).map(AsVal::Int)
        };
        let Some(input) = input else { continue };
        let folded = match (acc.get(op.node.as_str()), input) {
            (Some(AsVal::Set(a)), AsVal::Set(b)) => AsVal::Set(a.union(&b).copied().collect()),
            (Some(AsVal::Int(a)), AsVal::Int(b)) => AsVal::Int(*a.max(&b)),
            (_, v) => v,
        };
        acc.insert(&op.node, folded.clone());
        out.insert(i, folded);
    }
    out
}

/// Resolves a scan's update-count vector, following borrow chains. Memoized
/// by scan position; a failed resolution reports once and yields None.
fn resolve_vector(
    sched: &Schedule,
    embedded_by_node: &BTreeMap<&str, Vec<usize>>,
    i: usize,
    memo: &mut BTreeMap<usize, Option<BTreeMap<String, u64>>>,
    violations: &mut Vec<Violation>,
) -> Option<BTreeMap<String, u64>> {
    if let Some(cached) = memo.get(&i) {
        return cached.clone();
    }
    memo.insert(i, None); // breaks cycles; overwritten on success
    let scan = &sched.scans[i];
    let resolved = if scan.mode == "direct" {
        match &scan.usqnos {
            Some(u) => Some(u.clone()),
            None => {
                violations.push(Violation::new(
                    vec![sched.line(scan.idx)],
                    format!("direct scan by {} carries no update counts", scan.node),
                ));
                None
            }
        }
    } else {
        resolve_borrow(sched, embedded_by_node, i, memo, violations)
    };
    memo.insert(i, resolved.clone());
    resolved
}

fn scan_start_idx(sched: &Schedule, i: usize) -> Option<usize> {
    let scan = &sched.scans[i];
    sched.sub_by_node_seq(&scan.node, scan.opening_sub).map(|s| s.inv_idx)
}

fn resolve_borrow(
    sched: &Schedule,
    embedded_by_node: &BTreeMap<&str, Vec<usize>>,
    i: usize,
    memo: &mut BTreeMap<usize, Option<BTreeMap<String, u64>>>,
    violations: &mut Vec<Violation>,
) -> Option<BTreeMap<String, u64>> {
    let scan = &sched.scans[i];
    let fail = |violations: &mut Vec<Violation>, why: String| {
        violations.push(Violation::new(
            vec![sched.line(scan.idx)],
            format!("borrowed scan by {}: {why}", scan.node),
        ));
        None
    };
    let (Some(source), Some(source_ssqno)) = (&scan.source, scan.source_ssqno) else {
        return fail(violations, "no source recorded".into());
    };
    let Some(start_b) = scan_start_idx(sched, i) else {
        return fail(violations, "its opening store is missing".into());
    };
    // The adopted result must be an embedded scan of the source that began
    // no later than the collected cell state, returned the same values, and
    // ran inside the borrower's window.
    let candidates = embedded_by_node.get(source.as_str()).map_or(&[][..], |v| v);
    let mut best: Option<usize> = None;
    for &e in candidates {
        let es = &sched.scans[e];
        if es.ssqno > source_ssqno || es.view != scan.view || es.idx >= scan.idx {
            continue;
        }
        let Some(start_e) = scan_start_idx(sched, e) else { continue };
        if start_e <= start_b {
            continue;
        }
        if best.is_none_or(|b| sched.scans[b].ssqno < es.ssqno) {
            best = Some(e);
        }
    }
    match best {
        Some(e) => resolve_vector(sched, embedded_by_node, e, memo, violations),
        None => fail(
            violations,
            format!(
                "no embedded scan of {source} with the same result is nested \
                 inside the borrower's window (source scan count {source_ssqno})"
            ),
        ),
    }
}

pub fn check_snapshot(sched: &Schedule, exhaustive_budget: usize) -> Verdict {
    let (ops, scan_ops, mut violations) = extract_lin_ops(sched);
    if !violations.is_empty() {
        return Verdict::new("snapshot", violations);
    }

    let exhaustive_ran = ops.len() <= exhaustive_budget.min(EXHAUSTIVE_CEILING);
    let constructive = constructive_linearize(&ops, &scan_ops);
    let exhaustive = exhaustive_ran.then(|| exhaustive_linearizable(&ops));

    match (exhaustive, constructive) {
        (Some(true), _) | (None, Ok(())) => {}
        (Some(false), Err(v)) | (None, Err(v)) => violations.push(v),
        (Some(false), Ok(())) => violations.push(Violation::new(
            ops.iter().flat_map(|o| o.lines.clone()).collect(),
            "no order of the snapshot operations satisfies the sequential \
             spec and real time",
        )),
    }

    Verdict::new("snapshot", violations)
        .with_mode(if exhaustive_ran { "exhaustive+constructive" } else { "constructive" })
}

/// Runs both linearization engines and reports whether their answers match,
/// for differential testing. None when the pre-checks already failed (no
/// engine ran) or the history is too large for the exhaustive search.
pub fn engines_agree(sched: &Schedule, exhaustive_budget: usize) -> Option<bool> {
    let (ops, scan_ops, violations) = extract_lin_ops(sched);
    if !violations.is_empty() || ops.len() > exhaustive_budget.min(EXHAUSTIVE_CEILING) {
        return None;
    }
    Some(exhaustive_linearizable(&ops) == constructive_linearize(&ops, &scan_ops).is_ok())
}

/// Turns the schedule's updates and scans into interval-ordered operations,
/// resolving borrow chains and running the value and comparability
/// pre-checks that both engines assume.
fn extract_lin_ops(sched: &Schedule) -> (Vec<LinOp>, Vec<usize>, Vec<Violation>) {
    let mut violations = Vec::new();
    let mut ops: Vec<LinOp> = Vec::new();

    // Updates, numbered per node by final-store order.
    let folded = folded_propose_values(sched);
    let mut next_j: BTreeMap<&str, u64> = BTreeMap::new();
    let mut update_at: BTreeMap<(String, u64), usize> = BTreeMap::new();
    for sub in &sched.subs {
        if sub.purpose != "final_store" {
            continue;
        }
        let j = next_j.entry(&sub.node).or_insert(0);
        *j += 1;
        let op = &sched.ops[sub.op_index];
        let Some(value) = stored_value(&op.op, &op.args, folded.get(&sub.op_index)) else {
            violations.push(Violation::new(
                vec![sched.line(op.inv_idx), sched.line(sub.inv_idx)],
                format!(
                    "final store by {} inside a {} op with unusable arguments",
                    sub.node, op.op
                ),
            ));
            continue;
        };
        let mut lines = vec![sched.line(op.inv_idx)];
        lines.extend(sub.resp_idx.map(|r| sched.line(r)));
        update_at.insert((sub.node.clone(), *j), ops.len());
        ops.push(LinOp {
            kind: LinKind::Update { node: sub.node.clone(), j: *j, value },
            start_idx: op.inv_idx,
            end_idx: sub.resp_idx,
            required: op.resp_idx.is_some(),
            lines,
        });
    }

    // Scans, with borrow chains resolved.
    let mut embedded_by_node: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, scan) in sched.scans.iter().enumerate() {
        if scan.embedded {
            embedded_by_node.entry(&scan.node).or_default().push(i);
        }
    }
    let mut memo = BTreeMap::new();
    for i in 0..sched.scans.len() {
        let scan = &sched.scans[i];
        let Some(vector) = resolve_vector(sched, &embedded_by_node, i, &mut memo, &mut violations)
        else {
            continue;
        };
        let Some(start_idx) = scan_start_idx(sched, i) else {
            violations.push(Violation::new(
                vec![sched.line(scan.idx)],
                format!("scan by {} has no opening store", scan.node),
            ));
            continue;
        };

        // The returned values and the update counts must name the same
        // nodes, and each value must be what that node's update wrote.
        if !vector.keys().eq(scan.view.keys()) {
            violations.push(Violation::new(
                vec![sched.line(scan.idx)],
                format!("scan by {} returned values and counts for different nodes", scan.node),
            ));
            continue;
        }
        for (p, &j) in &vector {
            let seen = parse_asval(&scan.view[p]);
            let wrote = update_at
                .get(&(p.clone(), j))
                .map(|&u| match &ops[u].kind {
                    LinKind::Update { value, .. } => value.clone(),
                    LinKind::Scan { .. } => unreachable!(),
                });
            match (&seen, &wrote) {
                (Some(s), Some(w)) if s == w => {}
                (_, None) => violations.push(Violation::new(
                    vec![sched.line(scan.idx)],
                    format!("scan by {} returned update {j} of {p}, which never ran", scan.node),
                )),
                (Some(s), Some(w)) => violations.push(Violation::new(
                    vec![sched.line(scan.idx)],
                    format!(
                        "scan by {} returned {} for {p}, but update {j} of {p} wrote {}",
                        scan.node,
                        render(s),
                        render(w)
                    ),
                )),
                (None, _) => violations.push(Violation::new(
                    vec![sched.line(scan.idx)],
                    format!("scan by {} returned an unparseable value for {p}", scan.node),
                )),
            }
        }

        ops.push(LinOp {
            kind: LinKind::Scan { vector },
            start_idx,
            end_idx: Some(scan.idx),
            required: true,
            lines: vec![sched.line(start_idx), sched.line(scan.idx)],
        });
    }

    // Comparability: scan vectors must form a chain (missing node = 0).
    let scan_ops: Vec<usize> = ops
        .iter()
        .enumerate()
        .filter(|(_, o)| matches!(o.kind, LinKind::Scan { .. }))
        .map(|(i, _)| i)
        .collect();
    let vec_of = |i: usize| -> &BTreeMap<String, u64> {
        match &ops[i].kind {
            LinKind::Scan { vector } => vector,
            LinKind::Update { .. } => unreachable!(),
        }
    };
    for (a, &i) in scan_ops.iter().enumerate() {
        for &k in &scan_ops[a + 1..] {
            let (u, v) = (vec_of(i), vec_of(k));
            if !(vector_leq(u, v) || vector_leq(v, u)) {
                violations.push(Violation::new(
                    [ops[i].lines.clone(), ops[k].lines.clone()].concat(),
                    "two scans returned incomparable views; no single order of \
                     updates explains both",
                ));
            }
        }
    }

    (ops, scan_ops, violations)
}

fn vector_leq(a: &BTreeMap<String, u64>, b: &BTreeMap<String, u64>) -> bool {
    a.iter().all(|(p, x)| b.get(p).copied().unwrap_or(0) >= *x)
}

/// Builds the canonical order — scans by dominance, each preceded by the
/// updates it is first to observe, unobserved-but-required updates at the
/// end — and validates it against real time. Within each batch, start order
/// is conflict-free; across batches the construction is forced, so any
/// real-time conflict in it is a real violation.
fn constructive_linearize(ops: &[LinOp], scan_ops: &[usize]) -> Result<(), Violation> {
    let mut scans = scan_ops.to_vec();
    scans.sort_by_key(|&i| {
        let v = match &ops[i].kind {
            LinKind::Scan { vector } => vector.values().sum::<u64>(),
            LinKind::Update { .. } => unreachable!(),
        };
        (v, ops[i].end_idx)
    });

    let mut update_at: BTreeMap<(&str, u64), usize> = BTreeMap::new();
    for (i, op) in ops.iter().enumerate() {
        if let LinKind::Update { node, j, .. } = &op.kind {
            update_at.insert((node, *j), i);
        }
    }

    // Emits, per node, the updates from the emitted watermark up to the
    // target count, batch-sorted by start index (within one batch, start
    // order can never contradict real time).
    let mut emitted: BTreeMap<String, u64> = BTreeMap::new();
    let mut order: Vec<usize> = Vec::new();
    let emit_through = |target: &BTreeMap<String, u64>,
                            emitted: &mut BTreeMap<String, u64>,
                            order: &mut Vec<usize>| {
        let mut batch = Vec::new();
        for (p, &j_target) in target {
            let done = emitted.entry(p.clone()).or_insert(0);
            while *done < j_target {
                // Missing updates were already reported by the value
                // pre-check; stop at the last one that exists.
                let Some(&i) = update_at.get(&(p.as_str(), *done + 1)) else { break };
                batch.push(i);
                *done += 1;
            }
        }
        batch.sort_by_key(|&i| ops[i].start_idx);
        order.extend(batch);
    };

    for &s in &scans {
        let vector = match &ops[s].kind {
            LinKind::Scan { vector } => vector,
            LinKind::Update { .. } => unreachable!(),
        };
        emit_through(vector, &mut emitted, &mut order);
        order.push(s);
    }

    // Required updates nobody observed, with any pending predecessors they
    // need, in start order.
    let mut tail_target: BTreeMap<String, u64> = BTreeMap::new();
    for op in ops {
        if let LinKind::Update { node, j, .. } = &op.kind {
            if op.required {
                let e = tail_target.entry(node.clone()).or_insert(0);
                *e = (*e).max(*j);
            }
        }
    }
    emit_through(&tail_target, &mut emitted, &mut order);

    // Real-time validation: nothing may precede an op that finished before
    // it started.
    for (pos, &a) in order.iter().enumerate() {
        for &b in &order[pos + 1..] {
            if let Some(end_b) = ops[b].end_idx {
                if end_b < ops[a].start_idx {
                    return Err(Violation::new(
                        [ops[b].lines.clone(), ops[a].lines.clone()].concat(),
                        format!(
                            "{} finished before {} started, yet every order \
                             satisfying the scans puts it after",
                            describe(&ops[b]),
                            describe(&ops[a])
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn describe(op: &LinOp) -> String {
    match &op.kind {
        LinKind::Update { node, j, value } => {
            format!("update {j} of {node} (value {})", render(value))
        }
        LinKind::Scan { vector } => format!(
            "the scan returning {{{}}}",
            vector.iter().map(|(p, j)| format!("{p}:{j}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Memoized search over all orders: from each reached subset, try every op
/// whose real-time predecessors are in and whose step obeys the sequential
/// spec. Succeeds when some reached subset contains every required op.
fn exhaustive_linearizable(ops: &[LinOp]) -> bool {
    let n = ops.len();
    debug_assert!(n <= EXHAUSTIVE_CEILING);
    let mut required: u32 = 0;
    let mut pred: Vec<u32> = vec![0; n];
    for (i, op) in ops.iter().enumerate() {
        if op.required {
            required |= 1 << i;
        }
        for (u, other) in ops.iter().enumerate() {
            if other.end_idx.is_some_and(|e| e < op.start_idx) {
                pred[i] |= 1 << u;
            }
        }
    }

    let counts = |mask: u32| -> BTreeMap<&str, u64> {
        let mut c: BTreeMap<&str, u64> = BTreeMap::new();
        for (i, op) in ops.iter().enumerate() {
            if mask & (1 << i) != 0 {
                if let LinKind::Update { node, .. } = &op.kind {
                    *c.entry(node).or_insert(0) += 1;
                }
            }
        }
        c
    };
    let update_nodes: Vec<&str> = {
        let mut v: Vec<&str> = ops
            .iter()
            .filter_map(|o| match &o.kind {
                LinKind::Update { node, .. } => Some(node.as_str()),
                LinKind::Scan { .. } => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    };

    let mut visited = vec![false; 1usize << n];
    let mut stack = vec![0u32];
    visited[0] = true;
    while let Some(mask) = stack.pop() {
        if mask & required == required {
            return true;
        }
        let c = counts(mask);
        for (i, op) in ops.iter().enumerate() {
            if mask & (1 << i) != 0 || pred[i] & !mask != 0 {
                continue;
            }
            let enabled = match &op.kind {
                LinKind::Update { node, j, .. } => {
                    *j == c.get(node.as_str()).copied().unwrap_or(0) + 1
                }
                LinKind::Scan { vector } => update_nodes.iter().all(|p| {
                    vector.get(*p).copied().unwrap_or(0) == c.get(p).copied().unwrap_or(0)
                }),
            };
            if enabled && !visited[(mask | (1 << i)) as usize] {
                visited[(mask | (1 << i)) as usize] = true;
                stack.push(mask | (1 << i));
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{OpSpan, ScanSpan, SubSpan};
    use churnstore_sim::trace::RespData;
    use serde_json::json;

    /// Builds update and scan spans with explicit windows. Indices are
    /// supplied directly; only their order matters to the checker.
    struct H {
        s: Schedule,
        seq: BTreeMap<String, u64>,
    }

    impl H {
        fn new() -> H {
            let mut s = Schedule::synthetic(1, 1_000_000);
            for n in ["p", "q", "r"] {
                s.add_node(n);
            }
            H { s, seq: BTreeMap::new() }
        }

        fn next_seq(&mut self, node: &str) -> u64 {
            let e = self.seq.entry(node.to_string()).or_insert(0);
            *e += 1;
            *e
        }

        /// An update writing `value` with op window [inv, resp] and final
        /// store window [fs_inv, fs_resp]. `resp = None` leaves it pending.
        fn update(
            &mut self,
            node: &str,
            value: u64,
            inv: usize,
            fs_inv: usize,
            fs_resp: Option<usize>,
            resp: Option<usize>,
        ) {
            let oi = self.s.ops.len();
            self.s.ops.push(OpSpan {
                node: node.into(),
                op: "update".into(),
                args: json!({ "value": value }),
                sqno: None,
                inv_idx: inv,
                inv_t: inv as u64,
                resp_idx: resp,
                resp_t: resp.map(|r| r as u64),
                resp: resp.map(|_| RespData::Update),
            });
            let seq = self.next_seq(node);
            self.s.subs.push(SubSpan {
                node: node.into(),
                seq,
                kind: "store".into(),
                purpose: "final_store".into(),
                sqno: Some(seq),
                inv_idx: fs_inv,
                inv_t: fs_inv as u64,
                resp_idx: fs_resp,
                resp_t: fs_resp.map(|r| r as u64),
                view: None,
                op_index: oi,
            });
        }

        /// A completed direct scan: opening store invoked at `open`, note at
        /// `note`, seeing `seen` as (node, j, value) triples.
        fn scan(&mut self, node: &str, open: usize, note: usize, seen: &[(&str, u64, u64)]) {
            self.scan_op(node, open, note, seen, false);
        }

        fn scan_op(
            &mut self,
            node: &str,
            open: usize,
            note: usize,
            seen: &[(&str, u64, u64)],
            embedded: bool,
        ) {
            let oi = self.s.ops.len();
            self.s.ops.push(OpSpan {
                node: node.into(),
                op: "scan".into(),
                args: json!({}),
                sqno: None,
                inv_idx: open.saturating_sub(1),
                inv_t: open as u64 - 1,
                resp_idx: Some(note + 1),
                resp_t: Some(note as u64 + 1),
                resp: Some(RespData::Scan { view: BTreeMap::new() }),
            });
            let seq = self.next_seq(node);
            self.s.subs.push(SubSpan {
                node: node.into(),
                seq,
                kind: "store".into(),
                purpose: "opening_store".into(),
                sqno: Some(seq),
                inv_idx: open,
                inv_t: open as u64,
                resp_idx: Some(open + 1),
                resp_t: Some(open as u64 + 1),
                view: None,
                op_index: oi,
            });
            self.s.scans.push(ScanSpan {
                node: node.into(),
                idx: note,
                t: note as u64,
                ssqno: seq,
                embedded,
                mode: "direct".into(),
                source: None,
                source_ssqno: None,
                rounds: 0,
                opening_sub: seq,
                view: seen.iter().map(|(p, _, v)| (p.to_string(), json!(v))).collect(),
                usqnos: Some(seen.iter().map(|(p, j, _)| (p.to_string(), *j)).collect()),
                op_index: oi,
            });
        }

        fn done(mut self) -> Schedule {
            self.s.reindex();
            self.s
        }
    }

    fn check(s: &Schedule) -> Verdict {
        check_snapshot(s, DEFAULT_EXHAUSTIVE_BUDGET)
    }

    #[test]
    fn sequential_update_then_scan_passes_both_engines() {
        let mut h = H::new();
        h.update("p", 7, 10, 12, Some(14), Some(16));
        h.scan("q", 20, 26, &[("p", 1, 7)]);
        let v = check(&h.done());
        assert!(v.pass, "{:?}", v.violations);
        assert_eq!(v.mode.as_deref(), Some("exhaustive+constructive"));
    }

    #[test]
    fn completed_update_must_be_seen_by_later_scans() {
        let mut h = H::new();
        h.update("p", 7, 10, 12, Some(14), Some(16));
        h.scan("q", 20, 26, &[]);
        let v = check(&h.done());
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("finished before"));
    }

    #[test]
    fn scan_monotonicity_failures_are_caught() {
        // Both scans run concurrently with the update, but the first scan
        // finished before the second began, having seen MORE: unexplainable.
        let mut h = H::new();
        h.update("p", 7, 10, 40, Some(44), Some(46));
        h.scan("q", 12, 20, &[("p", 1, 7)]);
        h.scan("r", 24, 30, &[]);
        let v = check(&h.done());
        assert!(!v.pass);
        assert_eq!(v.mode.as_deref(), Some("exhaustive+constructive"));
    }

    #[test]
    fn concurrent_scan_may_or_may_not_see_the_update() {
        let mut h = H::new();
        h.update("p", 7, 10, 40, Some(44), Some(46));
        h.scan("q", 12, 20, &[]);
        h.scan("r", 24, 30, &[("p", 1, 7)]);
        let v = check(&h.done());
        assert!(v.pass, "{:?}", v.violations);
    }

    #[test]
    fn values_must_match_the_update_that_wrote_them() {
        let mut h = H::new();
        h.update("p", 7, 10, 12, Some(14), Some(16));
        h.scan("q", 20, 26, &[("p", 1, 9)]);
        let v = check(&h.done());
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("wrote 7"));
    }

    #[test]
    fn scans_cannot_see_updates_that_never_ran() {
        let mut h = H::new();
        h.update("p", 7, 10, 12, Some(14), Some(16));
        h.scan("q", 20, 26, &[("p", 2, 7)]);
        let v = check(&h.done());
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("never ran"));
    }

    #[test]
    fn pending_update_with_final_store_started_is_includable() {
        // The op never returned, but its final store went out and a scan saw
        // it: legal.
        let mut h = H::new();
        h.update("p", 7, 10, 12, None, None);
        h.scan("q", 20, 26, &[("p", 1, 7)]);
        let v = check(&h.done());
        assert!(v.pass, "{:?}", v.violations);

        // Equally legal for nobody to see it.
        let mut h = H::new();
        h.update("p", 7, 10, 12, None, None);
        h.scan("q", 20, 26, &[]);
        let v = check(&h.done());
        assert!(v.pass, "{:?}", v.violations);
    }

    #[test]
    fn incomparable_scans_fail_before_linearization() {
        let mut h = H::new();
        h.update("p", 7, 10, 12, Some(14), Some(16));
        h.update("q", 8, 11, 13, Some(15), Some(17));
        h.scan("r", 20, 26, &[("p", 1, 7)]);
        h.scan("r", 30, 36, &[("q", 1, 8)]);
        let v = check(&h.done());
        assert!(!v.pass);
        assert!(v.violations.iter().any(|x| x.explanation.contains("incomparable")));
    }

    #[test]
    fn borrowed_scans_adopt_a_nested_source_scan() {
        let mut h = H::new();
        // Borrower r opens at 10, note at 60.
        // Source q runs an update whose embedded scan is nested inside.
        h.update("q", 5, 12, 40, Some(44), Some(46));
        h.scan_op("q", 20, 30, &[], true); // q's embedded scan, vector {}
        let oi = h.s.ops.len();
        h.s.ops.push(OpSpan {
            node: "r".into(),
            op: "scan".into(),
            args: json!({}),
            sqno: None,
            inv_idx: 9,
            inv_t: 9,
            resp_idx: Some(61),
            resp_t: Some(61),
            resp: Some(RespData::Scan { view: BTreeMap::new() }),
        });
        h.s.subs.push(SubSpan {
            node: "r".into(),
            seq: 1,
            kind: "store".into(),
            purpose: "opening_store".into(),
            sqno: Some(1),
            inv_idx: 10,
            inv_t: 10,
            resp_idx: Some(11),
            resp_t: Some(11),
            view: None,
            op_index: oi,
        });
        h.s.scans.push(ScanSpan {
            node: "r".into(),
            idx: 60,
            t: 60,
            ssqno: 1,
            embedded: false,
            mode: "borrowed".into(),
            source: Some("q".into()),
            source_ssqno: Some(2),
            rounds: 2,
            opening_sub: 1,
            view: BTreeMap::new(),
            usqnos: None,
            op_index: oi,
        });
        let v = check(&h.done());
        assert!(v.pass, "{:?}", v.violations);

        // If the source's embedded scan had returned different values, the
        // borrow has no matching nested source and is rejected.
        let mut h2 = H::new();
        h2.update("q", 5, 12, 40, Some(44), Some(46));
        h2.scan_op("q", 20, 30, &[], true);
        let mut s = h2.done();
        s.scans.push(ScanSpan {
            node: "r".into(),
            idx: 60,
            t: 60,
            ssqno: 1,
            embedded: false,
            mode: "borrowed".into(),
            source: Some("q".into()),
            source_ssqno: Some(2),
            rounds: 2,
            opening_sub: 9,
            view: [("q".to_string(), json!(5))].into_iter().collect(),
            usqnos: None,
            op_index: 0,
        });
        s.subs.push(SubSpan {
            node: "r".into(),
            seq: 9,
            kind: "store".into(),
            purpose: "opening_store".into(),
            sqno: Some(9),
            inv_idx: 10,
            inv_t: 10,
            resp_idx: Some(11),
            resp_t: Some(11),
            view: None,
            op_index: 0,
        });
        s.reindex();
        let v = check_snapshot(&s, DEFAULT_EXHAUSTIVE_BUDGET);
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("borrowed scan by r"));
    }

    #[test]
    fn histories_beyond_the_budget_fall_back_to_constructive() {
        let mut h = H::new();
        let mut idx = 10;
        for i in 0..13 {
            let node = ["p", "q", "r"][i % 3];
            h.update(node, i as u64 + 1, idx, idx + 1, Some(idx + 2), Some(idx + 3));
            idx += 10;
        }
        let v = check(&h.done());
        assert!(v.pass, "{:?}", v.violations);
        assert_eq!(v.mode.as_deref(), Some("constructive"));
    }

    #[test]
    fn propose_final_stores_fold_the_nodes_inputs() {
        let mut h = H::new();
        // p proposes {1} then {2}; the second final store writes {1, 2}.
        for (inv, vals) in [(10usize, vec![1u64]), (30, vec![2])] {
            let oi = h.s.ops.len();
            h.s.ops.push(OpSpan {
                node: "p".into(),
                op: "propose".into(),
                args: json!({ "values": vals }),
                sqno: None,
                inv_idx: inv,
                inv_t: inv as u64,
                resp_idx: Some(inv + 8),
                resp_t: Some(inv as u64 + 8),
                resp: Some(RespData::Propose { value: json!(vals) }),
            });
            let seq = h.next_seq("p");
            h.s.subs.push(SubSpan {
                node: "p".into(),
                seq,
                kind: "store".into(),
                purpose: "final_store".into(),
                sqno: Some(seq),
                inv_idx: inv + 2,
                inv_t: inv as u64 + 2,
                resp_idx: Some(inv + 4),
                resp_t: Some(inv as u64 + 4),
                view: None,
                op_index: oi,
            });
        }
        // A scan after both sees the fold.
        let oi = h.s.ops.len();
        h.s.ops.push(OpSpan {
            node: "q".into(),
            op: "scan".into(),
            args: json!({}),
            sqno: None,
            inv_idx: 49,
            inv_t: 49,
            resp_idx: Some(57),
            resp_t: Some(57),
            resp: Some(RespData::Scan { view: BTreeMap::new() }),
        });
        let seq = h.next_seq("q");
        h.s.subs.push(SubSpan {
            node: "q".into(),
            seq,
            kind: "store".into(),
            purpose: "opening_store".into(),
            sqno: Some(seq),
            inv_idx: 50,
            inv_t: 50,
            resp_idx: Some(51),
            resp_t: Some(51),
            view: None,
            op_index: oi,
        });
        h.s.scans.push(ScanSpan {
            node: "q".into(),
            idx: 56,
            t: 56,
            ssqno: seq,
            embedded: false,
            mode: "direct".into(),
            source: None,
            source_ssqno: None,
            rounds: 0,
            opening_sub: seq,
            view: [("p".to_string(), json!([1, 2]))].into_iter().collect(),
            usqnos: Some([("p".to_string(), 2u64)].into_iter().collect()),
            op_index: oi,
        });
        let s = h.done();
        let v = check(&s);
        assert!(v.pass, "{:?}", v.violations);

        // A scan claiming the second store wrote only {2} fails the value
        // pre-check: the fold is what was stored.
        let mut s2 = s.clone();
        s2.scans[0].view = [("p".to_string(), json!([2]))].into_iter().collect();
        let v = check_snapshot(&s2, DEFAULT_EXHAUSTIVE_BUDGET);
        assert!(!v.pass);
        assert!(v.violations[0].explanation.contains("wrote {1, 2}"));
    }
}
