//! Store-collect client and server: threshold-gated broadcast phases.
//!
//! A store operation is one store phase. A collect operation is a collect
//! phase followed by a store-back phase that re-stores the merged view
//! before returning it, laundering in-flight values so that later collects
//! cannot miss what this one returned.

use crate::membership::MembershipState;
use crate::message::Message;
use crate::params::{counter_meets, phase_threshold, Rat};
use crate::value::Val;
use crate::view::{NodeId, View};
use crate::Mutation;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Operation type of the pending client operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpType {
    None,
    Collect,
    Store,
}

/// Which phase the client is in. Acks and replies are accepted only in the
/// phases that expect them, so a stray late reply can never count toward a
/// store-back quorum (the operation tag alone would not distinguish them:
/// both phases of a collect share one tag).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientPhase {
    Idle,
    CollectPhase,
    StoreBack,
    StoreOp,
}

/// Phase kind as recorded in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Collect,
    StoreBack,
    StoreOp,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::Collect => "collect",
            PhaseKind::StoreBack => "store_back",
            PhaseKind::StoreOp => "store",
        }
    }

    pub fn is_store(self) -> bool {
        !matches!(self, PhaseKind::Collect)
    }
}

/// Store-collect client state of one node.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub optype: OpType,
    pub tag: u64,
    pub threshold: Rat,
    pub counter: u64,
    pub sqno: u64,
    pub phase: ClientPhase,
    /// Snapshot of the view broadcast by the store-back phase; this is what
    /// the collect returns. Returning the live view instead could leak
    /// values absorbed after the store-back broadcast, which a later collect
    /// has no obligation to see.
    returning_view: Option<View>,
}

impl ClientState {
    pub fn new() -> Self {
        ClientState {
            optype: OpType::None,
            tag: 0,
            threshold: Rat::from_integer(1.into()),
            counter: 0,
            sqno: 0,
            phase: ClientPhase::Idle,
            returning_view: None,
        }
    }

    pub fn idle(&self) -> bool {
        self.phase == ClientPhase::Idle
    }
}

impl Default for ClientState {
    fn default() -> Self {
        Self::new()
    }
}

/// Trace-worthy transitions emitted by client steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScNote {
    PhaseStart {
        tag: u64,
        kind: PhaseKind,
        /// For store-kind phases: the per-node sqnos of the broadcast view,
        /// which is exactly the information the phase propagates.
        view: Option<BTreeMap<NodeId, u64>>,
    },
    PhaseEnd {
        tag: u64,
        kind: PhaseKind,
    },
}

/// Completion of a client operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubDone {
    /// Store completed.
    Ack,
    /// Collect completed with this view.
    View(View),
}

/// Output of one client or server step.
#[derive(Debug, Default)]
pub struct ScStep {
    pub broadcasts: Vec<Arc<Message>>,
    pub notes: Vec<ScNote>,
    pub done: Option<SubDone>,
}

/// Store invocation: assign the next sqno, fold the new triple into the
/// local view, and open a store phase carrying that view.
pub fn invoke_store(
    client: &mut ClientState,
    membership: &MembershipState,
    lview: &mut View,
    beta: &Rat,
    me: NodeId,
    v: Arc<Val>,
) -> ScStep {
    debug_assert!(client.idle(), "caller enforces one pending operation");
    client.optype = OpType::Store;
    client.tag += 1;
    client.sqno += 1;
    lview.insert_triple(me, v, client.sqno);
    client.threshold = phase_threshold(beta, membership.changes.members_count());
    client.counter = 0;
    client.phase = ClientPhase::StoreOp;
    let rview = Arc::new(lview.clone());
    let sqnos = rview.sqnos();
    ScStep {
        broadcasts: vec![Arc::new(Message::Store {
            rview,
            tag: client.tag,
            sender: me,
        })],
        notes: vec![ScNote::PhaseStart {
            tag: client.tag,
            kind: PhaseKind::StoreOp,
            view: Some(sqnos),
        }],
        done: None,
    }
}

/// Collect invocation: open a collect phase.
pub fn invoke_collect(
    client: &mut ClientState,
    membership: &MembershipState,
    beta: &Rat,
    me: NodeId,
) -> ScStep {
    debug_assert!(client.idle(), "caller enforces one pending operation");
    client.optype = OpType::Collect;
    client.tag += 1;
    client.threshold = phase_threshold(beta, membership.changes.members_count());
    client.counter = 0;
    client.phase = ClientPhase::CollectPhase;
    ScStep {
        broadcasts: vec![Arc::new(Message::CollectQuery {
            tag: client.tag,
            sender: me,
        })],
        notes: vec![ScNote::PhaseStart {
            tag: client.tag,
            kind: PhaseKind::Collect,
            view: None,
        }],
        done: None,
    }
}

/// Store-ack receipt. Counted only when addressed here, tagged with the
/// current operation, and a store-kind phase is actually open.
pub fn handle_store_ack(
    client: &mut ClientState,
    me: NodeId,
    tag: u64,
    dest: NodeId,
) -> ScStep {
    let mut out = ScStep::default();
    if dest != me || tag != client.tag {
        return out;
    }
    let kind = match client.phase {
        ClientPhase::StoreOp => PhaseKind::StoreOp,
        ClientPhase::StoreBack => PhaseKind::StoreBack,
        _ => return out,
    };
    client.counter += 1;
    if counter_meets(client.counter, &client.threshold) {
        client.phase = ClientPhase::Idle;
        out.notes.push(ScNote::PhaseEnd {
            tag: client.tag,
            kind,
        });
        out.done = Some(match client.optype {
            OpType::Store => SubDone::Ack,
            OpType::Collect => SubDone::View(
                client
                    .returning_view
                    .take()
                    .expect("store-back phase recorded its view"),
            ),
            OpType::None => unreachable!("phase open without an operation"),
        });
        client.optype = OpType::None;
    }
    out
}

/// Collect-reply receipt. Merges the reply and, at quorum, recomputes the
/// threshold against current membership (absorbing observed churn) and opens
/// the store-back phase under the same tag.
pub fn handle_collect_reply(
    client: &mut ClientState,
    membership: &MembershipState,
    lview: &mut View,
    beta: &Rat,
    me: NodeId,
    rview: &View,
    tag: u64,
    dest: NodeId,
    mutation: Mutation,
) -> ScStep {
    let mut out = ScStep::default();
    if dest != me || tag != client.tag || client.phase != ClientPhase::CollectPhase {
        return out;
    }
    lview.merge_from(rview);
    client.counter += 1;
    if counter_meets(client.counter, &client.threshold) {
        out.notes.push(ScNote::PhaseEnd {
            tag: client.tag,
            kind: PhaseKind::Collect,
        });
        if mutation == Mutation::SkipStoreBack {
            client.phase = ClientPhase::Idle;
            client.optype = OpType::None;
            out.done = Some(SubDone::View(lview.clone()));
            return out;
        }
        client.threshold = phase_threshold(beta, membership.changes.members_count());
        client.counter = 0;
        client.phase = ClientPhase::StoreBack;
        client.returning_view = Some(lview.clone());
        let rview = Arc::new(lview.clone());
        let sqnos = rview.sqnos();
        out.broadcasts.push(Arc::new(Message::Store {
            rview,
            tag: client.tag,
            sender: me,
        }));
        out.notes.push(ScNote::PhaseStart {
            tag: client.tag,
            kind: PhaseKind::StoreBack,
            view: Some(sqnos),
        });
    }
    out
}

/// Server handling of a store broadcast: merge unconditionally, acknowledge
/// only once joined, and always relay the merged view as a store-echo (the
/// echo is how in-flight information reaches nodes the original broadcast
/// missed).
pub fn server_handle_store(
    membership: &MembershipState,
    lview: &mut View,
    rview: &View,
    tag: u64,
    sender: NodeId,
    mutation: Mutation,
) -> ScStep {
    let mut out = ScStep::default();
    lview.merge_from(rview);
    if membership.is_joined {
        out.broadcasts.push(Arc::new(Message::StoreAck { tag, dest: sender }));
    }
    if mutation != Mutation::DropStoreEcho {
        out.broadcasts.push(Arc::new(Message::StoreEcho {
            rview: Arc::new(lview.clone()),
        }));
    }
    out
}

/// Server handling of a collect query: joined servers reply with their view.
pub fn server_handle_collect_query(
    membership: &MembershipState,
    lview: &View,
    tag: u64,
    sender: NodeId,
) -> ScStep {
    let mut out = ScStep::default();
    if membership.is_joined {
        out.broadcasts.push(Arc::new(Message::CollectReply {
            rview: Arc::new(lview.clone()),
            tag,
            dest: sender,
        }));
    }
    out
}

/// Server handling of a store-echo: merge only.
pub fn server_handle_store_echo(lview: &mut View, rview: &View) -> ScStep {
    lview.merge_from(rview);
    ScStep::default()
}
