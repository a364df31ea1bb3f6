//! Deterministic event loop.
//!
//! Events (churn directives, workload invocations, message deliveries) are
//! keyed by (time, sequence) in a BTreeMap, so processing order is a pure
//! function of the scenario including its seed. Broadcasts are delivered to
//! every node that is active at the send instant and still active at the
//! delivery instant, with per-copy delays drawn from the scenario's delay
//! model and clamped so per-sender FIFO order holds at every receiver.
//!
//! A crash truncates the node's most recent broadcast batch: copies not yet
//! delivered survive by a seeded coin flip (or not at all), and the send
//! record is retroactively flagged `truncated` if at least one copy was
//! withheld. Broadcasts from earlier steps are never truncated; their
//! deliveries were already scheduled and in flight.
//!
//! The workload driver enforces well-formedness itself: an invocation at a
//! node that is absent, not yet joined, or still busy with a previous
//! operation is skipped and logged as a `skip` record. Events scheduled
//! after the horizon never run; operations still pending at the horizon are
//! simply left without a response record.

use crate::scenario::{
    mutation_name, parse_op, ChurnKind, CrashDelivery, DelayModel, Scenario,
};
use crate::time::ticks_to_decimal;
use churnstore_protocol::membership::EventKind;
use churnstore_protocol::message::Message;
use churnstore_protocol::node::{
    Node, NodeNote, Response, StepOutput, SubKind, SubResult, Trigger,
};
use churnstore_protocol::objects::snapshot::ScanMode;
use churnstore_protocol::params::rat_to_string;
use churnstore_protocol::store_collect::ScNote;
use churnstore_protocol::value::AsVal;
use churnstore_protocol::{NodeId, View};
use crate::trace::{Body, Meta, MsgInfo, Record, RespData, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pending,
    Active,
    Left,
    Crashed,
}

enum Ev {
    Churn(ChurnKind, u32),
    Invoke(u32, usize),
    Deliver { to: u32, from: u32, msg: Arc<Message> },
}

struct Sim<'a> {
    sc: &'a Scenario,
    d: u64,
    names: Vec<String>,
    nodes: BTreeMap<u32, Node>,
    status: Vec<Status>,
    digests: Vec<churnstore_protocol::node::StateDigest>,
    queue: BTreeMap<(u64, u64), Ev>,
    seq: u64,
    last_recv: BTreeMap<(u32, u32), u64>,
    last_batch: BTreeMap<u32, Vec<(usize, Vec<(u64, u64)>)>>,
    rng: ChaCha12Rng,
    records: Vec<Record>,
}

fn nid(p: u32) -> NodeId {
    NodeId(p)
}

fn empty_digest() -> churnstore_protocol::node::StateDigest {
    churnstore_protocol::node::StateDigest {
        is_joined: false,
        changes: Vec::new(),
        lview: BTreeMap::new(),
    }
}

fn event_kind_name(k: EventKind) -> &'static str {
    match k {
        EventKind::Enter => "enter",
        EventKind::Join => "join",
        EventKind::Leave => "leave",
    }
}

fn asval_json(v: &AsVal) -> Value {
    match v {
        AsVal::Int(n) => json!(n),
        AsVal::Set(s) => json!(s.iter().collect::<Vec<_>>()),
    }
}

/// Runs a scenario to its horizon. Deterministic in the scenario (including
/// seed); lifecycle-impossible churn directives (entering twice, leaving
/// while absent) are ignored, matching what the validator flags.
pub fn run(scenario: &Scenario) -> Trace {
    let names = scenario.all_node_names();
    let id_of: BTreeMap<String, u32> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i as u32))
        .collect();
    let mut sim = Sim {
        sc: scenario,
        d: scenario.params.d_ticks,
        status: vec![Status::Pending; names.len()],
        digests: vec![empty_digest(); names.len()],
        names,
        nodes: BTreeMap::new(),
        queue: BTreeMap::new(),
        seq: 0,
        last_recv: BTreeMap::new(),
        last_batch: BTreeMap::new(),
        rng: ChaCha12Rng::seed_from_u64(scenario.seed),
        records: Vec::new(),
    };
    sim.records.push(Record {
        t: 0,
        node: None,
        body: Body::Meta(Box::new(Meta {
            version: 1,
            alpha: rat_to_string(&scenario.params.alpha),
            delta: rat_to_string(&scenario.params.delta),
            gamma: rat_to_string(&scenario.params.gamma),
            beta: rat_to_string(&scenario.params.beta),
            n_min: scenario.params.n_min,
            d: ticks_to_decimal(scenario.params.d_ticks),
            initial_nodes: scenario.initial_nodes.clone(),
            delay_model: scenario.delay_model.describe(),
            seed: scenario.seed,
            horizon: ticks_to_decimal(scenario.horizon),
            mutation: mutation_name(scenario.mutation).into(),
            crash_delivery: scenario.crash_delivery.name().into(),
            lattice: scenario.lattice.name().into(),
        })),
    });

    let s0: BTreeSet<NodeId> = scenario
        .initial_nodes
        .iter()
        .map(|n| nid(id_of[n.as_str()]))
        .collect();
    for name in &scenario.initial_nodes {
        let p = id_of[name.as_str()];
        sim.status[p as usize] = Status::Active;
        sim.nodes.insert(
            p,
            Node::new_initial(nid(p), scenario.params.protocol(), scenario.lattice, scenario.mutation, &s0),
        );
        sim.push(0, Some(p), Body::Enter);
        sim.push(0, Some(p), Body::Joined);
        sim.delta(0, p);
    }

    for e in &scenario.churn {
        if e.t > scenario.horizon {
            continue;
        }
        if let Some(&p) = id_of.get(e.node.as_str()) {
            let key = (e.t, sim.next_seq());
            sim.queue.insert(key, Ev::Churn(e.kind, p));
        }
    }
    for (i, w) in scenario.workload.iter().enumerate() {
        if w.t > scenario.horizon {
            continue;
        }
        if let Some(&p) = id_of.get(w.node.as_str()) {
            let key = (w.t, sim.next_seq());
            sim.queue.insert(key, Ev::Invoke(p, i));
        }
    }

    while let Some((&key, _)) = sim.queue.first_key_value() {
        if key.0 > scenario.horizon {
            break;
        }
        let ev = sim.queue.remove(&key).unwrap();
        sim.handle(key.0, ev);
    }

    Trace { records: sim.records }
}

impl<'a> Sim<'a> {
    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn name(&self, p: NodeId) -> String {
        self.names[p.0 as usize].clone()
    }

    fn push(&mut self, t: u64, p: Option<u32>, body: Body) {
        self.records.push(Record {
            t,
            node: p.map(|p| self.names[p as usize].clone()),
            body,
        });
    }

    fn handle(&mut self, t: u64, ev: Ev) {
        match ev {
            Ev::Churn(ChurnKind::Enter, p) => {
                if self.status[p as usize] != Status::Pending {
                    return;
                }
                self.status[p as usize] = Status::Active;
                self.nodes.insert(
                    p,
                    Node::new_entrant(
                        nid(p),
                        self.sc.params.protocol(),
                        self.sc.lattice,
                        self.sc.mutation,
                    ),
                );
                self.push(t, Some(p), Body::Enter);
                let out = self.nodes.get_mut(&p).unwrap().step(Trigger::Enter);
                self.finish_step(t, p, out);
            }
            Ev::Churn(ChurnKind::Leave, p) => {
                if self.status[p as usize] != Status::Active {
                    return;
                }
                let out = self.nodes.get_mut(&p).unwrap().step(Trigger::Leave);
                self.finish_step(t, p, out);
                self.push(t, Some(p), Body::Leave);
                self.status[p as usize] = Status::Left;
            }
            Ev::Churn(ChurnKind::Crash, p) => {
                if self.status[p as usize] != Status::Active {
                    return;
                }
                self.status[p as usize] = Status::Crashed;
                self.truncate(p);
                self.push(t, Some(p), Body::Crash);
            }
            Ev::Deliver { to, from, msg } => {
                if self.status[to as usize] != Status::Active {
                    return;
                }
                let info = self.msg_info(&msg);
                self.push(
                    t,
                    Some(to),
                    Body::Receive {
                        from: self.names[from as usize].clone(),
                        msg: info.kind().into(),
                        tag: info.tag(),
                    },
                );
                let out = self.nodes.get_mut(&to).unwrap().step(Trigger::Receive(msg));
                self.finish_step(t, to, out);
            }
            Ev::Invoke(p, widx) => {
                let w = &self.sc.workload[widx];
                let op = w.op.clone();
                let skip = |reason: &str| Body::Skip { op: op.clone(), reason: reason.into() };
                if self.status[p as usize] != Status::Active {
                    let b = skip("not_present");
                    self.push(t, Some(p), b);
                    return;
                }
                let node = &self.nodes[&p];
                if !node.is_joined() {
                    let b = skip("not_joined");
                    self.push(t, Some(p), b);
                    return;
                }
                if !node.idle() {
                    let b = skip("busy");
                    self.push(t, Some(p), b);
                    return;
                }
                let req = match parse_op(&w.op, &w.args, self.sc.lattice) {
                    Ok(req) => req,
                    Err(e) => {
                        let b = skip(&format!("bad_args: {e}"));
                        self.push(t, Some(p), b);
                        return;
                    }
                };
                let args = w.args.clone();
                let out = self.nodes.get_mut(&p).unwrap().step(Trigger::Invoke(req));
                let sqno = if op == "store" { self.store_sqno(p, &out) } else { None };
                self.push(t, Some(p), Body::Invoke { op, args, sqno });
                self.finish_step(t, p, out);
            }
        }
    }

    /// Sequence number the node assigned to a just-invoked top-level store,
    /// read off its own triple in the broadcast view.
    fn store_sqno(&self, p: u32, out: &StepOutput) -> Option<u64> {
        out.broadcasts.iter().find_map(|m| match &**m {
            Message::Store { rview, sender, .. } if *sender == nid(p) => {
                rview.get(nid(p)).map(|e| e.sqno)
            }
            _ => None,
        })
    }

    fn finish_step(&mut self, t: u64, p: u32, out: StepOutput) {
        for note in &out.notes {
            let b = self.note_body(note);
            self.push(t, Some(p), b);
        }
        self.delta(t, p);
        self.sends(t, p, out.broadcasts);
        if let Some(r) = out.response {
            let b = self.resp_body(r);
            self.push(t, Some(p), b);
        }
    }

    /// Emits the change in the node's protocol-visible state since its last
    /// state record. Knowledge and lview only grow, so deltas reconstruct the
    /// full state at any instant.
    fn delta(&mut self, t: u64, p: u32) {
        let new = self.nodes[&p].digest();
        let old = &self.digests[p as usize];
        if new == *old {
            return;
        }
        let joined_now = new.is_joined && !old.is_joined;
        let old_changes: BTreeSet<&(EventKind, NodeId)> = old.changes.iter().collect();
        let changes: Vec<(String, String)> = new
            .changes
            .iter()
            .filter(|c| !old_changes.contains(c))
            .map(|(k, q)| (event_kind_name(*k).to_string(), self.name(*q)))
            .collect();
        let mut lview = BTreeMap::new();
        for (q, s) in &new.lview {
            if old.lview.get(q) != Some(s) {
                lview.insert(self.name(*q), *s);
            }
        }
        self.push(t, Some(p), Body::State { joined: joined_now, changes, lview });
        self.digests[p as usize] = new;
    }

    fn sends(&mut self, t: u64, p: u32, msgs: Vec<Arc<Message>>) {
        let mut batch = Vec::with_capacity(msgs.len());
        let receivers: Vec<u32> = (0..self.status.len() as u32)
            .filter(|&q| self.status[q as usize] == Status::Active)
            .collect();
        for msg in msgs {
            let rec_idx = self.records.len();
            let info = self.msg_info(&msg);
            self.push(t, Some(p), Body::Send { msg: info, truncated: false });
            let mut keys = Vec::with_capacity(receivers.len());
            for &q in &receivers {
                let delay = match self.sc.delay_model {
                    DelayModel::Uniform => self.rng.gen_range(1..=self.d),
                    DelayModel::Fixed(t0) => t0,
                    DelayModel::AdversarialMax => self.d,
                };
                let fifo = self.last_recv.get(&(p, q)).copied().unwrap_or(0);
                let rt = (t + delay).max(fifo);
                self.last_recv.insert((p, q), rt);
                let key = (rt, self.next_seq());
                self.queue.insert(key, Ev::Deliver { to: q, from: p, msg: msg.clone() });
                keys.push(key);
            }
            batch.push((rec_idx, keys));
        }
        // Reset even when this step broadcast nothing: only the most recent
        // step's messages count as "immediately followed by" a crash.
        self.last_batch.insert(p, batch);
    }

    fn truncate(&mut self, p: u32) {
        let Some(batch) = self.last_batch.remove(&p) else { return };
        for (rec_idx, keys) in batch {
            let mut dropped = false;
            for key in keys {
                if !self.queue.contains_key(&key) {
                    continue;
                }
                let keep = match self.sc.crash_delivery {
                    CrashDelivery::None => false,
                    CrashDelivery::Random => self.rng.gen_range(0..2) == 1,
                };
                if !keep {
                    self.queue.remove(&key);
                    dropped = true;
                }
            }
            if dropped {
                if let Body::Send { truncated, .. } = &mut self.records[rec_idx].body {
                    *truncated = true;
                }
            }
        }
    }

    fn sqno_names(&self, m: &BTreeMap<NodeId, u64>) -> BTreeMap<String, u64> {
        m.iter().map(|(q, s)| (self.name(*q), *s)).collect()
    }

    fn view_sqnos(&self, v: &View) -> BTreeMap<String, u64> {
        self.sqno_names(&v.sqnos())
    }

    fn msg_info(&self, msg: &Message) -> MsgInfo {
        match msg {
            Message::Enter { node } => MsgInfo::Enter { node: self.name(*node) },
            Message::EnterEcho { is_joined, dest, .. } => MsgInfo::EnterEcho {
                dest: self.name(*dest),
                is_joined: *is_joined,
            },
            Message::Join { node } => MsgInfo::Join { node: self.name(*node) },
            Message::JoinEcho { node } => MsgInfo::JoinEcho { node: self.name(*node) },
            Message::Leave { node } => MsgInfo::Leave { node: self.name(*node) },
            Message::LeaveEcho { node } => MsgInfo::LeaveEcho { node: self.name(*node) },
            Message::Store { rview, tag, .. } => MsgInfo::Store {
                tag: *tag,
                view: self.view_sqnos(rview),
            },
            Message::StoreAck { tag, dest } => MsgInfo::StoreAck {
                tag: *tag,
                dest: self.name(*dest),
            },
            Message::CollectQuery { tag, .. } => MsgInfo::CollectQuery { tag: *tag },
            Message::CollectReply { tag, dest, .. } => MsgInfo::CollectReply {
                tag: *tag,
                dest: self.name(*dest),
            },
            Message::StoreEcho { .. } => MsgInfo::StoreEcho,
        }
    }

    fn note_body(&self, note: &NodeNote) -> Body {
        match note {
            NodeNote::Phase(ScNote::PhaseStart { tag, kind, view }) => Body::PhaseStart {
                tag: *tag,
                phase: kind.name().into(),
                view: view.as_ref().map(|v| self.sqno_names(v)),
            },
            NodeNote::Phase(ScNote::PhaseEnd { tag, kind }) => Body::PhaseEnd {
                tag: *tag,
                phase: kind.name().into(),
            },
            NodeNote::SubInvoke { seq, kind, purpose, sqno } => Body::SubInvoke {
                sub: *seq,
                kind: match kind {
                    SubKind::Store => "store".into(),
                    SubKind::Collect => "collect".into(),
                },
                purpose: (*purpose).into(),
                sqno: *sqno,
            },
            NodeNote::SubResponse { seq, result } => match result {
                SubResult::Ack { sqno } => Body::SubResponse {
                    sub: *seq,
                    ack_sqno: Some(*sqno),
                    view: None,
                },
                SubResult::View { sqnos } => Body::SubResponse {
                    sub: *seq,
                    ack_sqno: None,
                    view: Some(self.sqno_names(sqnos)),
                },
            },
            NodeNote::Scan { outcome, opening_sub } => {
                let (mode, source, source_ssqno) = match &outcome.mode {
                    ScanMode::Direct => ("direct", None, None),
                    ScanMode::Borrowed { source, source_ssqno } => {
                        ("borrowed", Some(self.name(*source)), Some(*source_ssqno))
                    }
                };
                Body::Scan {
                    ssqno: outcome.ssqno,
                    embedded: outcome.embedded,
                    mode: mode.into(),
                    source,
                    source_ssqno,
                    rounds: outcome.rounds_unsuccessful,
                    opening_sub: *opening_sub,
                    view: outcome
                        .view
                        .iter()
                        .map(|(q, v)| (self.name(*q), asval_json(v)))
                        .collect(),
                    usqnos: match outcome.mode {
                        ScanMode::Direct => Some(self.sqno_names(&outcome.usqnos)),
                        ScanMode::Borrowed { .. } => None,
                    },
                }
            }
        }
    }

    fn resp_body(&self, r: Response) -> Body {
        match r {
            Response::Joined => Body::Joined,
            Response::StoreDone { sqno } => Body::Response(RespData::Store { sqno }),
            Response::CollectDone { view } => {
                Body::Response(RespData::Collect { view: self.view_sqnos(&view) })
            }
            Response::UpdateDone => Body::Response(RespData::Update),
            Response::ScanDone { view } => Body::Response(RespData::Scan {
                view: view.iter().map(|(q, v)| (self.name(*q), asval_json(v))).collect(),
            }),
            Response::ProposeDone { value } => {
                Body::Response(RespData::Propose { value: asval_json(&value) })
            }
            Response::WriteMaxDone => Body::Response(RespData::WriteMax),
            Response::ReadMaxDone { value } => Body::Response(RespData::ReadMax { value }),
            Response::AbortDone => Body::Response(RespData::Abort),
            Response::CheckDone { value } => Body::Response(RespData::Check { value }),
            Response::AddSetDone => Body::Response(RespData::AddSet),
            Response::ReadSetDone { value } => Body::Response(RespData::ReadSet {
                values: value.into_iter().collect(),
            }),
        }
    }
}
