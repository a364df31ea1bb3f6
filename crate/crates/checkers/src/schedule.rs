//! Schedule extraction: folds a trace into the structured timelines the
//! property checkers consume.
//!
//! Extraction enforces the shape every checker relies on: per node, one
//! top-level operation at a time (alternating invocation and response), one
//! sub-operation at a time inside it, one open phase at a time. A trace
//! breaking those rules is rejected with an error, never reported as a
//! property violation.

use churnstore_sim::time::ticks_from_decimal;
use churnstore_sim::trace::{Body, Meta, MsgInfo, RespData, Trace};
use serde_json::Value;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("trace line {line}: {reason}")]
pub struct ScheduleError {
    pub line: usize,
    pub reason: String,
}

/// One top-level operation, pending if `resp_idx` is None.
#[derive(Debug, Clone, Default)]
pub struct OpSpan {
    pub node: String,
    pub op: String,
    pub args: Value,
    /// Store operations: the sequence number assigned to the stored value.
    pub sqno: Option<u64>,
    pub inv_idx: usize,
    pub inv_t: u64,
    pub resp_idx: Option<usize>,
    pub resp_t: Option<u64>,
    pub resp: Option<RespData>,
}

/// One store/collect sub-operation issued by a layered object.
#[derive(Debug, Clone, Default)]
pub struct SubSpan {
    pub node: String,
    /// Per-node sub-operation sequence number from the trace.
    pub seq: u64,
    /// "store" or "collect".
    pub kind: String,
    pub purpose: String,
    /// Store subs: the sequence number assigned to the stored value.
    pub sqno: Option<u64>,
    pub inv_idx: usize,
    pub inv_t: u64,
    pub resp_idx: Option<usize>,
    pub resp_t: Option<u64>,
    /// Collect subs: per-node sqnos of the returned view.
    pub view: Option<BTreeMap<String, u64>>,
    /// Index into `Schedule::ops` of the enclosing operation.
    pub op_index: usize,
}

/// One threshold-gated broadcast phase.
#[derive(Debug, Clone, Default)]
pub struct PhaseSpan {
    pub node: String,
    pub tag: u64,
    /// "store", "collect", or "store_back".
    pub phase: String,
    pub start_idx: usize,
    pub start_t: u64,
    pub end_idx: Option<usize>,
    pub end_t: Option<u64>,
    /// Store-kind phases: sqnos of the broadcast view.
    pub view: Option<BTreeMap<String, u64>>,
}

/// A completed scan, top-level or embedded in an update.
#[derive(Debug, Clone)]
pub struct ScanSpan {
    pub node: String,
    pub idx: usize,
    pub t: u64,
    pub ssqno: u64,
    pub embedded: bool,
    /// "direct" or "borrowed".
    pub mode: String,
    pub source: Option<String>,
    pub source_ssqno: Option<u64>,
    pub rounds: u64,
    /// Per-node sub seq of this scan's opening store.
    pub opening_sub: u64,
    pub view: BTreeMap<String, Value>,
    /// Direct scans only: update counts backing each view entry.
    pub usqnos: Option<BTreeMap<String, u64>>,
    pub op_index: usize,
}

/// Lifecycle milestones of one node, as (time, record index).
#[derive(Debug, Clone, Default)]
pub struct NodeLife {
    pub name: String,
    pub initial: bool,
    pub enter: Option<(u64, usize)>,
    pub joined: Option<(u64, usize)>,
    pub leave: Option<(u64, usize)>,
    pub crash: Option<(u64, usize)>,
}

impl NodeLife {
    /// When the node stopped participating, if ever.
    pub fn depart_t(&self) -> Option<u64> {
        match (self.leave, self.crash) {
            (Some((a, _)), Some((b, _))) => Some(a.min(b)),
            (Some((a, _)), None) | (None, Some((a, _))) => Some(a),
            (None, None) => None,
        }
    }

    /// Present on [enter, depart): entered and not yet left or crashed.
    pub fn present_at(&self, t: u64) -> bool {
        self.enter.is_some_and(|(e, _)| e <= t) && self.depart_t().is_none_or(|d| t < d)
    }
}

/// A store-kind broadcast (store op, sub store, or store-back), the unit the
/// knowledge checker tracks propagation of.
#[derive(Debug, Clone)]
pub struct StoreSend {
    pub node: String,
    pub idx: usize,
    pub t: u64,
    pub tag: u64,
    pub view: BTreeMap<String, u64>,
    pub truncated: bool,
}

/// One state-delta record: what the node newly learned at (t, idx).
#[derive(Debug, Clone)]
pub struct StateDelta {
    pub t: u64,
    pub idx: usize,
    pub joined_now: bool,
    pub changes: Vec<(String, String)>,
    pub lview: BTreeMap<String, u64>,
}

/// A membership broadcast (enter/join/leave) sent by its subject node.
#[derive(Debug, Clone, Copy)]
pub struct MembershipSend {
    pub idx: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub meta: Meta,
    pub d: u64,
    pub horizon: u64,
    pub nodes: BTreeMap<String, NodeLife>,
    pub ops: Vec<OpSpan>,
    pub subs: Vec<SubSpan>,
    pub phases: Vec<PhaseSpan>,
    pub scans: Vec<ScanSpan>,
    pub store_sends: Vec<StoreSend>,
    pub state_deltas: BTreeMap<String, Vec<StateDelta>>,
    /// Key: (node, "enter" | "join" | "leave").
    pub membership_sends: BTreeMap<(String, &'static str), MembershipSend>,
    /// Sorted times of enter records (initial nodes included at 0).
    enter_times: Vec<u64>,
    /// Sorted times of leave records. Crashed nodes stay counted as present.
    leave_times: Vec<u64>,
    /// (node, sub seq) -> index into `subs`.
    sub_index: BTreeMap<(String, u64), usize>,
}

impl Schedule {
    /// 1-based JSONL line number of a record index.
    pub fn line(&self, idx: usize) -> usize {
        idx + 1
    }

    /// System size at time t: nodes entered and not left by t, with crashed
    /// nodes still counted as present.
    pub fn n_at(&self, t: u64) -> u64 {
        let entered = self.enter_times.partition_point(|&e| e <= t) as u64;
        let left = self.leave_times.partition_point(|&l| l <= t) as u64;
        entered - left
    }

    pub fn sub_by_node_seq(&self, node: &str, seq: u64) -> Option<&SubSpan> {
        self.sub_index.get(&(node.to_string(), seq)).map(|&i| &self.subs[i])
    }

    pub fn extract(trace: &Trace) -> Result<Schedule, ScheduleError> {
        Extractor::new(trace)?.run(trace)
    }
}

fn err(idx: usize, reason: impl Into<String>) -> ScheduleError {
    ScheduleError { line: idx + 1, reason: reason.into() }
}

struct Extractor {
    meta: Meta,
    d: u64,
    horizon: u64,
    nodes: BTreeMap<String, NodeLife>,
    ops: Vec<OpSpan>,
    subs: Vec<SubSpan>,
    phases: Vec<PhaseSpan>,
    scans: Vec<ScanSpan>,
    store_sends: Vec<StoreSend>,
    state_deltas: BTreeMap<String, Vec<StateDelta>>,
    membership_sends: BTreeMap<(String, &'static str), MembershipSend>,
    open_op: BTreeMap<String, usize>,
    open_sub: BTreeMap<String, usize>,
    open_phase: BTreeMap<String, usize>,
}

impl Extractor {
    fn new(trace: &Trace) -> Result<Extractor, ScheduleError> {
        let meta = match trace.records.first().map(|r| &r.body) {
            Some(Body::Meta(m)) => (**m).clone(),
            _ => return Err(err(0, "trace does not start with a meta record")),
        };
        let d = ticks_from_decimal(&meta.d).map_err(|e| err(0, format!("bad meta d: {e}")))?;
        let horizon = ticks_from_decimal(&meta.horizon)
            .map_err(|e| err(0, format!("bad meta horizon: {e}")))?;
        if d == 0 {
            return Err(err(0, "meta d must be positive"));
        }
        Ok(Extractor {
            meta,
            d,
            horizon,
            nodes: BTreeMap::new(),
            ops: Vec::new(),
            subs: Vec::new(),
            phases: Vec::new(),
            scans: Vec::new(),
            store_sends: Vec::new(),
            state_deltas: BTreeMap::new(),
            membership_sends: BTreeMap::new(),
            open_op: BTreeMap::new(),
            open_sub: BTreeMap::new(),
            open_phase: BTreeMap::new(),
        })
    }

    fn life(&mut self, node: &str) -> &mut NodeLife {
        let initial = self.meta.initial_nodes.iter().any(|n| n == node);
        self.nodes.entry(node.to_string()).or_insert_with(|| NodeLife {
            name: node.to_string(),
            initial,
            ..NodeLife::default()
        })
    }

    fn run(mut self, trace: &Trace) -> Result<Schedule, ScheduleError> {
        for (idx, rec) in trace.records.iter().enumerate().skip(1) {
            let t = rec.t;
            if matches!(rec.body, Body::Meta(_)) {
                return Err(err(idx, "meta record after line 1"));
            }
            let Some(node) = rec.node.clone() else {
                return Err(err(idx, format!("{} record without a node", rec.body.kind())));
            };
            match &rec.body {
                Body::Meta(_) => unreachable!(),
                Body::Enter => self.lifecycle(idx, &node, t, "enter")?,
                Body::Joined => self.lifecycle(idx, &node, t, "joined")?,
                Body::Leave => self.lifecycle(idx, &node, t, "leave")?,
                Body::Crash => self.lifecycle(idx, &node, t, "crash")?,
                Body::Invoke { op, args, sqno } => {
                    if let Some(&open) = self.open_op.get(&node) {
                        return Err(err(
                            idx,
                            format!(
                                "{node} invokes {op} while op at line {} is open",
                                open + 1
                            ),
                        ));
                    }
                    self.open_op.insert(node.clone(), self.ops.len());
                    self.ops.push(OpSpan {
                        node,
                        op: op.clone(),
                        args: args.clone(),
                        sqno: *sqno,
                        inv_idx: idx,
                        inv_t: t,
                        ..OpSpan::default()
                    });
                }
                Body::Response(data) => {
                    let Some(oi) = self.open_op.remove(&node) else {
                        return Err(err(idx, format!("{node} responds with no open op")));
                    };
                    let op = &mut self.ops[oi];
                    if op.op != data.op() {
                        return Err(err(
                            idx,
                            format!("{node} responds {} to a {} op", data.op(), op.op),
                        ));
                    }
                    op.resp_idx = Some(idx);
                    op.resp_t = Some(t);
                    op.resp = Some(data.clone());
                }
                Body::SubInvoke { sub, kind, purpose, sqno } => {
                    let Some(&oi) = self.open_op.get(&node) else {
                        return Err(err(idx, format!("{node} sub-invoke outside any op")));
                    };
                    if let Some(&open) = self.open_sub.get(&node) {
                        return Err(err(
                            idx,
                            format!(
                                "{node} sub-invoke while sub at line {} is open",
                                self.subs[open].inv_idx + 1
                            ),
                        ));
                    }
                    self.open_sub.insert(node.clone(), self.subs.len());
                    self.subs.push(SubSpan {
                        node,
                        seq: *sub,
                        kind: kind.clone(),
                        purpose: purpose.clone(),
                        sqno: *sqno,
                        inv_idx: idx,
                        inv_t: t,
                        op_index: oi,
                        ..SubSpan::default()
                    });
                }
                Body::SubResponse { sub, ack_sqno, view } => {
                    let Some(si) = self.open_sub.remove(&node) else {
                        return Err(err(idx, format!("{node} sub-response with no open sub")));
                    };
                    let s = &mut self.subs[si];
                    if s.seq != *sub {
                        return Err(err(
                            idx,
                            format!("{node} sub-response for {} but sub {} is open", sub, s.seq),
                        ));
                    }
                    match (s.kind.as_str(), ack_sqno, view) {
                        ("store", Some(_), None) => {}
                        ("collect", None, Some(_)) => {}
                        _ => {
                            return Err(err(
                                idx,
                                format!("{node} sub-response shape does not match {} sub", s.kind),
                            ))
                        }
                    }
                    s.resp_idx = Some(idx);
                    s.resp_t = Some(t);
                    s.view = view.clone();
                }
                Body::PhaseStart { tag, phase, view } => {
                    if let Some(&open) = self.open_phase.get(&node) {
                        return Err(err(
                            idx,
                            format!(
                                "{node} starts a phase while phase at line {} is open",
                                self.phases[open].start_idx + 1
                            ),
                        ));
                    }
                    self.open_phase.insert(node.clone(), self.phases.len());
                    self.phases.push(PhaseSpan {
                        node,
                        tag: *tag,
                        phase: phase.clone(),
                        start_idx: idx,
                        start_t: t,
                        view: view.clone(),
                        ..PhaseSpan::default()
                    });
                }
                Body::PhaseEnd { tag, phase } => {
                    let Some(pi) = self.open_phase.remove(&node) else {
                        return Err(err(idx, format!("{node} ends a phase with none open")));
                    };
                    let p = &mut self.phases[pi];
                    if p.tag != *tag || p.phase != *phase {
                        return Err(err(
                            idx,
                            format!(
                                "{node} ends phase {phase}/{tag} but {}/{} is open",
                                p.phase, p.tag
                            ),
                        ));
                    }
                    p.end_idx = Some(idx);
                    p.end_t = Some(t);
                }
                Body::Scan {
                    ssqno,
                    embedded,
                    mode,
                    source,
                    source_ssqno,
                    rounds,
                    opening_sub,
                    view,
                    usqnos,
                } => {
                    let Some(&oi) = self.open_op.get(&node) else {
                        return Err(err(idx, format!("{node} scan record outside any op")));
                    };
                    self.scans.push(ScanSpan {
                        node,
                        idx,
                        t,
                        ssqno: *ssqno,
                        embedded: *embedded,
                        mode: mode.clone(),
                        source: source.clone(),
                        source_ssqno: *source_ssqno,
                        rounds: *rounds,
                        opening_sub: *opening_sub,
                        view: view.clone(),
                        usqnos: usqnos.clone(),
                        op_index: oi,
                    });
                }
                Body::Send { msg, truncated } => match msg {
                    MsgInfo::Store { tag, view } => self.store_sends.push(StoreSend {
                        node,
                        idx,
                        t,
                        tag: *tag,
                        view: view.clone(),
                        truncated: *truncated,
                    }),
                    MsgInfo::Enter { node: subject } if *subject == node => {
                        self.membership_sends
                            .entry((node, "enter"))
                            .or_insert(MembershipSend { idx, truncated: *truncated });
                    }
                    MsgInfo::Join { node: subject } if *subject == node => {
                        self.membership_sends
                            .entry((node, "join"))
                            .or_insert(MembershipSend { idx, truncated: *truncated });
                    }
                    MsgInfo::Leave { node: subject } if *subject == node => {
                        self.membership_sends
                            .entry((node, "leave"))
                            .or_insert(MembershipSend { idx, truncated: *truncated });
                    }
                    _ => {}
                },
                Body::State { joined, changes, lview } => {
                    self.state_deltas.entry(node).or_default().push(StateDelta {
                        t,
                        idx,
                        joined_now: *joined,
                        changes: changes.clone(),
                        lview: lview.clone(),
                    });
                }
                Body::Receive { .. } | Body::Skip { .. } => {}
            }
        }

        let mut enter_times: Vec<u64> = Vec::new();
        let mut leave_times: Vec<u64> = Vec::new();
        for life in self.nodes.values() {
            if let Some((t, _)) = life.enter {
                enter_times.push(t);
            }
            if let Some((t, _)) = life.leave {
                leave_times.push(t);
            }
        }
        enter_times.sort_unstable();
        leave_times.sort_unstable();

        let sub_index = self
            .subs
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.node.clone(), s.seq), i))
            .collect();

        Ok(Schedule {
            meta: self.meta,
            d: self.d,
            horizon: self.horizon,
            nodes: self.nodes,
            ops: self.ops,
            subs: self.subs,
            phases: self.phases,
            scans: self.scans,
            store_sends: self.store_sends,
            state_deltas: self.state_deltas,
            membership_sends: self.membership_sends,
            enter_times,
            leave_times,
            sub_index,
        })
    }

    fn lifecycle(
        &mut self,
        idx: usize,
        node: &str,
        t: u64,
        kind: &str,
    ) -> Result<(), ScheduleError> {
        let life = self.life(node);
        let slot = match kind {
            "enter" => &mut life.enter,
            "joined" => &mut life.joined,
            "leave" => &mut life.leave,
            "crash" => &mut life.crash,
            _ => unreachable!(),
        };
        if slot.is_some() {
            return Err(err(idx, format!("duplicate {kind} record for {node}")));
        }
        *slot = Some((t, idx));
        Ok(())
    }
}

#[cfg(test)]
impl Schedule {
    /// Empty schedule for hand-built checker tests. Callers fill the public
    /// collections directly and call `reindex` when lifecycle or sub data
    /// matters.
    pub(crate) fn synthetic(d: u64, horizon: u64) -> Schedule {
        Schedule {
            meta: Meta {
                version: 1,
                alpha: "0".into(),
                delta: "0.21".into(),
                gamma: "0.79".into(),
                beta: "0.79".into(),
                n_min: 2,
                d: "1".into(),
                initial_nodes: Vec::new(),
                delay_model: "uniform".into(),
                seed: 0,
                horizon: "100".into(),
                mutation: "none".into(),
                crash_delivery: "random".into(),
                lattice: "set_union".into(),
            },
            d,
            horizon,
            nodes: BTreeMap::new(),
            ops: Vec::new(),
            subs: Vec::new(),
            phases: Vec::new(),
            scans: Vec::new(),
            store_sends: Vec::new(),
            state_deltas: BTreeMap::new(),
            membership_sends: BTreeMap::new(),
            enter_times: Vec::new(),
            leave_times: Vec::new(),
            sub_index: BTreeMap::new(),
        }
    }

    /// Recomputes the derived indexes after direct edits to public fields.
    pub(crate) fn reindex(&mut self) {
        self.enter_times = self.nodes.values().filter_map(|l| l.enter.map(|(t, _)| t)).collect();
        self.enter_times.sort_unstable();
        self.leave_times = self.nodes.values().filter_map(|l| l.leave.map(|(t, _)| t)).collect();
        self.leave_times.sort_unstable();
        self.sub_index = self
            .subs
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.node.clone(), s.seq), i))
            .collect();
    }

    /// Registers a node alive for the whole run.
    pub(crate) fn add_node(&mut self, name: &str) {
        self.nodes.insert(
            name.to_string(),
            NodeLife {
                name: name.to_string(),
                initial: true,
                enter: Some((0, 0)),
                joined: Some((0, 0)),
                leave: None,
                crash: None,
            },
        );
        self.reindex();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use churnstore_sim::{run, Scenario};

    fn sample_trace() -> Trace {
        let s = Scenario::from_json_str(
            r#"{
                "initial_nodes": ["a", "b", "c", "e", "f"],
                "params": {"alpha": 0.2},
                "churn": [
                    {"t": 4, "kind": "enter", "node": "d"},
                    {"t": 12, "kind": "leave", "node": "b"}
                ],
                "workload": [
                    {"t": 2, "node": "a", "op": "update", "args": {"value": 7}},
                    {"t": 8, "node": "c", "op": "scan", "args": {}},
                    {"t": 9, "node": "b", "op": "store", "args": {"value": "x"}}
                ],
                "seed": 7,
                "horizon": 30
            }"#,
        )
        .unwrap();
        run(&s)
    }

    #[test]
    fn extraction_builds_consistent_spans() {
        let trace = sample_trace();
        let sched = Schedule::extract(&trace).unwrap();

        assert_eq!(sched.d, 1_000_000);
        assert_eq!(sched.nodes.len(), 6);
        assert!(sched.nodes["a"].initial);
        assert!(!sched.nodes["d"].initial);
        assert_eq!(sched.nodes["a"].enter.unwrap().0, 0);
        assert_eq!(sched.nodes["a"].joined.unwrap().0, 0);
        assert!(sched.nodes["d"].joined.unwrap().0 <= 4 * 1_000_000 + 2 * sched.d);
        assert_eq!(sched.nodes["b"].depart_t(), Some(12 * 1_000_000));

        // Three invoked ops, all completed.
        assert_eq!(sched.ops.len(), 3);
        assert!(sched.ops.iter().all(|o| o.resp_idx.is_some()));
        let update = &sched.ops[0];
        assert_eq!(update.op, "update");
        assert!(update.resp_idx.unwrap() > update.inv_idx);

        // The update ran collect(scounts), store(opening), collects, store(final).
        let upd_subs: Vec<&SubSpan> =
            sched.subs.iter().filter(|s| s.op_index == 0).collect();
        assert_eq!(upd_subs[0].purpose, "scounts_collect");
        assert_eq!(upd_subs[1].purpose, "opening_store");
        assert_eq!(upd_subs.last().unwrap().purpose, "final_store");
        assert!(upd_subs.iter().all(|s| s.resp_idx.is_some()));

        // Sub lookups resolve scan opening stores.
        for scan in &sched.scans {
            let sub = sched.sub_by_node_seq(&scan.node, scan.opening_sub).unwrap();
            assert_eq!(sub.purpose, "opening_store");
            assert!(sub.inv_idx < scan.idx);
        }
        // One embedded scan (in the update), one top-level.
        assert_eq!(sched.scans.len(), 2);
        assert!(sched.scans[0].embedded);
        assert!(!sched.scans[1].embedded);

        // Phases all closed, and store phases carry views.
        assert!(sched.phases.iter().all(|p| p.end_idx.is_some()));
        assert!(sched
            .phases
            .iter()
            .filter(|p| p.phase != "collect")
            .all(|p| p.view.is_some()));

        // Population count follows enter/leave records.
        assert_eq!(sched.n_at(0), 5);
        assert_eq!(sched.n_at(4 * 1_000_000), 6);
        assert_eq!(sched.n_at(12 * 1_000_000), 5);

        // Membership broadcasts of the entrant and leaver were captured.
        assert!(sched.membership_sends.contains_key(&("d".to_string(), "enter")));
        assert!(sched.membership_sends.contains_key(&("d".to_string(), "join")));
        assert!(sched.membership_sends.contains_key(&("b".to_string(), "leave")));
        assert!(!sched.membership_sends.contains_key(&("a".to_string(), "enter")));

        // State deltas exist for every node and start with initial knowledge.
        let a0 = &sched.state_deltas["a"][0];
        assert!(a0.joined_now);
        assert_eq!(a0.t, 0);
        assert!(a0.changes.iter().any(|(k, n)| k == "enter" && n == "a"));
    }

    #[test]
    fn malformed_traces_are_rejected_not_reported() {
        let trace = sample_trace();
        let mut broken = trace.clone();
        // Drop the meta record.
        broken.records.remove(0);
        let e = Schedule::extract(&broken).unwrap_err();
        assert!(e.reason.contains("meta"), "{e}");

        // Duplicate response: find a response record and duplicate it.
        let mut dup = trace.clone();
        let ri = dup
            .records
            .iter()
            .position(|r| matches!(r.body, Body::Response(_)))
            .unwrap();
        let copy = dup.records[ri].clone();
        dup.records.insert(ri + 1, copy);
        let e = Schedule::extract(&dup).unwrap_err();
        assert!(e.reason.contains("no open op"), "{e}");
    }
}
