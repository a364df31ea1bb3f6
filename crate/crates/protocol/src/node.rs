//! One protocol node: membership, store-collect client and server, and the
//! layered objects, composed behind a single step function.
//!
//! The node is a pure state machine. A driver (simulator or test harness)
//! feeds it [`Trigger`]s and distributes the broadcasts it emits; the node
//! never sees time, the network, or other nodes. Layered operations (scan,
//! update, propose, and the simple objects) run as chains of store/collect
//! sub-operations; [`NodeNote`]s report each phase, sub-operation, and
//! completed scan so a trace of a run carries everything the offline
//! checkers need.

use crate::membership::{self, EventKind, MembershipState, MembershipStep};
use crate::message::Message;
use crate::objects::lattice::LatticeKind;
use crate::objects::simple;
use crate::objects::snapshot::{
    self, CollectPurpose, ScanOutcome, ScanState, SnapAction, SnapshotState, StorePurpose,
    UpdateState,
};
use crate::params::ProtocolParams;
use crate::store_collect::{self, ClientState, ScNote, ScStep, SubDone};
use crate::value::{AsVal, Val};
use crate::view::{NodeId, View};
use crate::Mutation;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// External stimulus for one step.
#[derive(Debug, Clone)]
pub enum Trigger {
    /// This node enters the system.
    Enter,
    /// This node announces departure (the driver stops stepping it after).
    Leave,
    /// A broadcast message arrives.
    Receive(Arc<Message>),
    /// The application invokes an operation (node must be joined and idle).
    Invoke(OpRequest),
}

/// Operations invocable on a joined node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpRequest {
    Store(Val),
    Collect,
    Update(AsVal),
    Scan,
    Propose(AsVal),
    WriteMax(i64),
    ReadMax,
    Abort,
    Check,
    AddSet(i64),
    ReadSet,
}

impl OpRequest {
    pub fn name(&self) -> &'static str {
        match self {
            OpRequest::Store(_) => "store",
            OpRequest::Collect => "collect",
            OpRequest::Update(_) => "update",
            OpRequest::Scan => "scan",
            OpRequest::Propose(_) => "propose",
            OpRequest::WriteMax(_) => "writemax",
            OpRequest::ReadMax => "readmax",
            OpRequest::Abort => "abort",
            OpRequest::Check => "check",
            OpRequest::AddSet(_) => "addset",
            OpRequest::ReadSet => "readset",
        }
    }
}

/// Completion of a top-level event: either the join step of an entrant or
/// the result of an invoked operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Joined,
    StoreDone { sqno: u64 },
    CollectDone { view: View },
    UpdateDone,
    ScanDone { view: BTreeMap<NodeId, AsVal> },
    ProposeDone { value: AsVal },
    WriteMaxDone,
    ReadMaxDone { value: i64 },
    AbortDone,
    CheckDone { value: bool },
    AddSetDone,
    ReadSetDone { value: BTreeSet<i64> },
}

/// Kind of a store-collect sub-operation issued by a layered object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubKind {
    Store,
    Collect,
}

/// Result of a sub-operation, reduced to what traces carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubResult {
    Ack { sqno: u64 },
    View { sqnos: BTreeMap<NodeId, u64> },
}

/// Trace-worthy happenings of one step, in occurrence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeNote {
    /// A store or collect phase started or reached its quorum.
    Phase(ScNote),
    /// A layered object issued a store/collect sub-operation. `sqno` is the
    /// sequence number a store assigned to its value.
    SubInvoke {
        seq: u64,
        kind: SubKind,
        purpose: &'static str,
        sqno: Option<u64>,
    },
    /// The sub-operation `seq` completed.
    SubResponse { seq: u64, result: SubResult },
    /// A scan (top-level or embedded in an update) terminated. `opening_sub`
    /// is the sub-operation sequence number of its opening store.
    Scan {
        outcome: ScanOutcome,
        opening_sub: u64,
    },
}

/// Everything one step produced.
#[derive(Debug, Default)]
pub struct StepOutput {
    pub broadcasts: Vec<Arc<Message>>,
    pub response: Option<Response>,
    pub notes: Vec<NodeNote>,
}

/// Comparable summary of the protocol-visible state, for trace records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateDigest {
    pub is_joined: bool,
    pub changes: Vec<(EventKind, NodeId)>,
    pub lview: BTreeMap<NodeId, u64>,
}

/// The top-level operation awaiting its current sub-operation.
#[derive(Debug)]
enum PendingOp {
    Store,
    Collect,
    WriteMax,
    ReadMax,
    Abort,
    Check,
    AddSet,
    ReadSet,
    Update(UpdateState),
    Scan(ScanState),
    ProposeUpdate(UpdateState),
    ProposeScan(ScanState),
}

/// Which layered flow a snapshot action belongs to.
enum SnapOwner {
    Update(UpdateState),
    Scan(ScanState),
    ProposeUpdate(UpdateState),
    ProposeScan(ScanState),
}

impl SnapOwner {
    fn into_pending(self) -> PendingOp {
        match self {
            SnapOwner::Update(u) => PendingOp::Update(u),
            SnapOwner::Scan(s) => PendingOp::Scan(s),
            SnapOwner::ProposeUpdate(u) => PendingOp::ProposeUpdate(u),
            SnapOwner::ProposeScan(s) => PendingOp::ProposeScan(s),
        }
    }
}

#[derive(Debug)]
pub struct Node {
    pub id: NodeId,
    pub params: ProtocolParams,
    pub lattice: LatticeKind,
    pub mutation: Mutation,
    pub membership: MembershipState,
    pub client: ClientState,
    pub lview: View,
    pub snap: SnapshotState,
    /// Elements this node has added to the shared set.
    lset: BTreeSet<i64>,
    /// Join of this node's lattice inputs so far.
    latval: AsVal,
    pending: Option<PendingOp>,
    sub_seq: u64,
    /// Sub-operation currently in flight, if the pending op is layered.
    current_sub: Option<u64>,
    /// Opening store of the scan currently in flight.
    opening_sub: Option<u64>,
}

impl Node {
    /// A founding member: joined from the start, knows the whole initial set.
    pub fn new_initial(
        id: NodeId,
        params: ProtocolParams,
        lattice: LatticeKind,
        mutation: Mutation,
        s0: &BTreeSet<NodeId>,
    ) -> Node {
        Node::with_membership(id, params, lattice, mutation, MembershipState::initial(s0))
    }

    /// A node about to enter: empty knowledge until its Enter step.
    pub fn new_entrant(
        id: NodeId,
        params: ProtocolParams,
        lattice: LatticeKind,
        mutation: Mutation,
    ) -> Node {
        Node::with_membership(id, params, lattice, mutation, MembershipState::entrant())
    }

    fn with_membership(
        id: NodeId,
        params: ProtocolParams,
        lattice: LatticeKind,
        mutation: Mutation,
        membership: MembershipState,
    ) -> Node {
        Node {
            id,
            params,
            lattice,
            mutation,
            membership,
            client: ClientState::new(),
            lview: View::new(),
            snap: SnapshotState::default(),
            lset: BTreeSet::new(),
            latval: lattice.bottom(),
            pending: None,
            sub_seq: 0,
            current_sub: None,
            opening_sub: None,
        }
    }

    pub fn is_joined(&self) -> bool {
        self.membership.is_joined
    }

    /// No operation in flight.
    pub fn idle(&self) -> bool {
        self.pending.is_none()
    }

    pub fn digest(&self) -> StateDigest {
        StateDigest {
            is_joined: self.membership.is_joined,
            changes: self.membership.changes.events().collect(),
            lview: self.lview.sqnos(),
        }
    }

    pub fn step(&mut self, trigger: Trigger) -> StepOutput {
        let mut out = StepOutput::default();
        match trigger {
            Trigger::Enter => {
                let st = membership::on_enter(&mut self.membership, self.id);
                self.absorb_membership(st, &mut out);
            }
            Trigger::Leave => {
                let st = membership::on_leave(self.id);
                self.absorb_membership(st, &mut out);
            }
            Trigger::Receive(msg) => self.receive(&msg, &mut out),
            Trigger::Invoke(req) => self.invoke(req, &mut out),
        }
        out
    }

    fn absorb_membership(&mut self, st: MembershipStep, out: &mut StepOutput) {
        if st.joined_now {
            out.response = Some(Response::Joined);
        }
        out.broadcasts.extend(st.broadcasts);
    }

    fn receive(&mut self, msg: &Message, out: &mut StepOutput) {
        match msg {
            Message::Enter { node } => {
                let st = membership::on_receive_enter(&mut self.membership, &self.lview, *node);
                self.absorb_membership(st, out);
            }
            Message::EnterEcho { changes, rview, is_joined, dest } => {
                let st = membership::on_receive_enter_echo(
                    &mut self.membership,
                    &mut self.lview,
                    &self.params.gamma,
                    self.id,
                    changes,
                    rview,
                    *is_joined,
                    *dest,
                );
                self.absorb_membership(st, out);
            }
            Message::Join { node } => {
                let st = membership::on_receive_join(&mut self.membership, *node);
                self.absorb_membership(st, out);
            }
            Message::JoinEcho { node } => {
                let st = membership::on_receive_join_echo(&mut self.membership, *node);
                self.absorb_membership(st, out);
            }
            Message::Leave { node } => {
                let st = membership::on_receive_leave(&mut self.membership, *node);
                self.absorb_membership(st, out);
            }
            Message::LeaveEcho { node } => {
                let st = membership::on_receive_leave_echo(&mut self.membership, *node);
                self.absorb_membership(st, out);
            }
            Message::Store { rview, tag, sender } => {
                let sc = store_collect::server_handle_store(
                    &self.membership,
                    &mut self.lview,
                    rview,
                    *tag,
                    *sender,
                    self.mutation,
                );
                out.broadcasts.extend(sc.broadcasts);
            }
            Message::StoreEcho { rview } => {
                store_collect::server_handle_store_echo(&mut self.lview, rview);
            }
            Message::CollectQuery { tag, sender } => {
                let sc = store_collect::server_handle_collect_query(
                    &self.membership,
                    &self.lview,
                    *tag,
                    *sender,
                );
                out.broadcasts.extend(sc.broadcasts);
            }
            Message::StoreAck { tag, dest } => {
                let sc = store_collect::handle_store_ack(&mut self.client, self.id, *tag, *dest);
                self.finish_sc(sc, out);
            }
            Message::CollectReply { rview, tag, dest } => {
                let sc = store_collect::handle_collect_reply(
                    &mut self.client,
                    &self.membership,
                    &mut self.lview,
                    &self.params.beta,
                    self.id,
                    rview,
                    *tag,
                    *dest,
                    self.mutation,
                );
                self.finish_sc(sc, out);
            }
        }
    }

    /// Absorbs a client step and, if it completed the current store/collect,
    /// routes the completion into whatever operation was waiting on it.
    fn finish_sc(&mut self, sc: ScStep, out: &mut StepOutput) {
        out.broadcasts.extend(sc.broadcasts);
        out.notes.extend(sc.notes.into_iter().map(NodeNote::Phase));
        if let Some(done) = sc.done {
            if let Some(seq) = self.current_sub.take() {
                let result = match &done {
                    SubDone::Ack => SubResult::Ack { sqno: self.client.sqno },
                    SubDone::View(v) => SubResult::View { sqnos: v.sqnos() },
                };
                out.notes.push(NodeNote::SubResponse { seq, result });
            }
            self.route_completion(done, out);
        }
    }

    fn route_completion(&mut self, done: SubDone, out: &mut StepOutput) {
        let pending = self.pending.take().expect("completion without a pending operation");
        match pending {
            PendingOp::Store => {
                out.response = Some(Response::StoreDone { sqno: self.client.sqno });
            }
            PendingOp::Collect => {
                out.response = Some(Response::CollectDone { view: expect_view(done) });
            }
            PendingOp::WriteMax => out.response = Some(Response::WriteMaxDone),
            PendingOp::Abort => out.response = Some(Response::AbortDone),
            PendingOp::AddSet => out.response = Some(Response::AddSetDone),
            PendingOp::ReadMax => {
                let value = simple::readmax_result(&expect_view(done));
                out.response = Some(Response::ReadMaxDone { value });
            }
            PendingOp::Check => {
                let value = simple::check_result(&expect_view(done));
                out.response = Some(Response::CheckDone { value });
            }
            PendingOp::ReadSet => {
                let value = simple::readset_result(&expect_view(done));
                out.response = Some(Response::ReadSetDone { value });
            }
            PendingOp::Update(mut u) => {
                let act = snapshot::update_on_sub(&mut u, &mut self.snap, self.id, done);
                self.apply_snap(act, SnapOwner::Update(u), out);
            }
            PendingOp::Scan(mut s) => {
                let act = snapshot::scan_on_sub(&mut s, self.id, done);
                self.apply_snap(act, SnapOwner::Scan(s), out);
            }
            PendingOp::ProposeUpdate(mut u) => {
                let act = snapshot::update_on_sub(&mut u, &mut self.snap, self.id, done);
                self.apply_snap(act, SnapOwner::ProposeUpdate(u), out);
            }
            PendingOp::ProposeScan(mut s) => {
                let act = snapshot::scan_on_sub(&mut s, self.id, done);
                self.apply_snap(act, SnapOwner::ProposeScan(s), out);
            }
        }
    }

    fn apply_snap(&mut self, act: SnapAction, owner: SnapOwner, out: &mut StepOutput) {
        match act {
            SnapAction::Store { val, purpose, completed_scan } => {
                if let Some(outcome) = completed_scan {
                    let opening_sub = self
                        .opening_sub
                        .take()
                        .expect("embedded scan recorded its opening store");
                    out.notes.push(NodeNote::Scan { outcome, opening_sub });
                }
                let name = match purpose {
                    StorePurpose::Opening => "opening_store",
                    StorePurpose::Final => "final_store",
                };
                self.begin_sub_store(name, val, out);
                if purpose == StorePurpose::Opening {
                    self.opening_sub = self.current_sub;
                }
                self.pending = Some(owner.into_pending());
            }
            SnapAction::Collect { purpose } => {
                let name = match purpose {
                    CollectPurpose::Scounts => "scounts_collect",
                    CollectPurpose::ScanLoop => "scan_collect",
                };
                self.begin_sub_collect(name, out);
                self.pending = Some(owner.into_pending());
            }
            SnapAction::ScanDone(outcome) => {
                let opening_sub = self
                    .opening_sub
                    .take()
                    .expect("scan recorded its opening store");
                out.notes.push(NodeNote::Scan {
                    outcome: outcome.clone(),
                    opening_sub,
                });
                match owner {
                    SnapOwner::Scan(_) => {
                        out.response = Some(Response::ScanDone { view: outcome.view });
                    }
                    SnapOwner::ProposeScan(_) => {
                        let value = self
                            .lattice
                            .join_all(outcome.view.values().filter(|v| self.lattice.admits(v)));
                        out.response = Some(Response::ProposeDone { value });
                    }
                    _ => unreachable!("embedded scans complete inside the update flow"),
                }
            }
            SnapAction::UpdateDone => match owner {
                SnapOwner::Update(_) => out.response = Some(Response::UpdateDone),
                SnapOwner::ProposeUpdate(_) => {
                    // Update half done; scan half begins.
                    let (scan, opening) = snapshot::scan_begin(&mut self.snap, false);
                    self.begin_sub_store("opening_store", opening, out);
                    self.opening_sub = self.current_sub;
                    self.pending = Some(PendingOp::ProposeScan(scan));
                }
                _ => unreachable!("scan owners never produce UpdateDone"),
            },
        }
    }

    fn invoke(&mut self, req: OpRequest, out: &mut StepOutput) {
        debug_assert!(
            self.pending.is_none() && self.client.idle(),
            "driver invokes one operation at a time"
        );
        debug_assert!(self.membership.is_joined, "driver invokes only at joined nodes");
        match req {
            OpRequest::Store(v) => {
                self.pending = Some(PendingOp::Store);
                self.begin_plain_store(v, out);
            }
            OpRequest::Collect => {
                self.pending = Some(PendingOp::Collect);
                self.begin_plain_collect(out);
            }
            OpRequest::WriteMax(x) => {
                self.pending = Some(PendingOp::WriteMax);
                self.begin_sub_store("write", Val::Int(x), out);
            }
            OpRequest::ReadMax => {
                self.pending = Some(PendingOp::ReadMax);
                self.begin_sub_collect("read", out);
            }
            OpRequest::Abort => {
                self.pending = Some(PendingOp::Abort);
                self.begin_sub_store("write", Val::Flag(true), out);
            }
            OpRequest::Check => {
                self.pending = Some(PendingOp::Check);
                self.begin_sub_collect("read", out);
            }
            OpRequest::AddSet(x) => {
                self.lset.insert(x);
                self.pending = Some(PendingOp::AddSet);
                self.begin_sub_store("write", Val::Set(self.lset.clone()), out);
            }
            OpRequest::ReadSet => {
                self.pending = Some(PendingOp::ReadSet);
                self.begin_sub_collect("read", out);
            }
            OpRequest::Update(v) => {
                let (u, act) = snapshot::update_begin(v);
                self.apply_snap(act, SnapOwner::Update(u), out);
            }
            OpRequest::Scan => {
                let (scan, opening) = snapshot::scan_begin(&mut self.snap, false);
                self.begin_sub_store("opening_store", opening, out);
                self.opening_sub = self.current_sub;
                self.pending = Some(PendingOp::Scan(scan));
            }
            OpRequest::Propose(v) => {
                self.latval = self.lattice.join(&self.latval, &v);
                let (u, act) = snapshot::update_begin(self.latval.clone());
                self.apply_snap(act, SnapOwner::ProposeUpdate(u), out);
            }
        }
    }

    fn next_sub(&mut self) -> u64 {
        self.sub_seq += 1;
        self.sub_seq
    }

    fn begin_plain_store(&mut self, val: Val, out: &mut StepOutput) {
        self.current_sub = None;
        let sc = store_collect::invoke_store(
            &mut self.client,
            &self.membership,
            &mut self.lview,
            &self.params.beta,
            self.id,
            Arc::new(val),
        );
        out.broadcasts.extend(sc.broadcasts);
        out.notes.extend(sc.notes.into_iter().map(NodeNote::Phase));
    }

    fn begin_plain_collect(&mut self, out: &mut StepOutput) {
        self.current_sub = None;
        let sc = store_collect::invoke_collect(
            &mut self.client,
            &self.membership,
            &self.params.beta,
            self.id,
        );
        out.broadcasts.extend(sc.broadcasts);
        out.notes.extend(sc.notes.into_iter().map(NodeNote::Phase));
    }

    fn begin_sub_store(&mut self, purpose: &'static str, val: Val, out: &mut StepOutput) {
        let sc = store_collect::invoke_store(
            &mut self.client,
            &self.membership,
            &mut self.lview,
            &self.params.beta,
            self.id,
            Arc::new(val),
        );
        let seq = self.next_sub();
        self.current_sub = Some(seq);
        out.notes.push(NodeNote::SubInvoke {
            seq,
            kind: SubKind::Store,
            purpose,
            sqno: Some(self.client.sqno),
        });
        out.broadcasts.extend(sc.broadcasts);
        out.notes.extend(sc.notes.into_iter().map(NodeNote::Phase));
    }

    fn begin_sub_collect(&mut self, purpose: &'static str, out: &mut StepOutput) {
        let sc = store_collect::invoke_collect(
            &mut self.client,
            &self.membership,
            &self.params.beta,
            self.id,
        );
        let seq = self.next_sub();
        self.current_sub = Some(seq);
        out.notes.push(NodeNote::SubInvoke {
            seq,
            kind: SubKind::Collect,
            purpose,
            sqno: None,
        });
        out.broadcasts.extend(sc.broadcasts);
        out.notes.extend(sc.notes.into_iter().map(NodeNote::Phase));
    }
}

fn expect_view(done: SubDone) -> View {
    match done {
        SubDone::View(v) => v,
        SubDone::Ack => unreachable!("collect completions carry a view"),
    }
}
