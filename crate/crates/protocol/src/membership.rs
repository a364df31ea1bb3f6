//! Common churn-management code: the Changes set, the enter/join/leave echo
//! protocol, and the join threshold rule.

use crate::message::Message;
use crate::params::{counter_meets, join_threshold, Rat};
use crate::view::{NodeId, View};
use std::collections::BTreeSet;
use std::sync::Arc;

/// Kind of a membership event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Enter,
    Join,
    Leave,
}

/// Set of membership events known to a node, deduplicated by (kind, node).
///
/// Invariant: `join(q)` present implies `enter(q)` present; every insertion
/// site for joins also inserts the enter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChangesSet {
    enters: BTreeSet<NodeId>,
    joins: BTreeSet<NodeId>,
    leaves: BTreeSet<NodeId>,
}

impl ChangesSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_enter(&mut self, q: NodeId) {
        self.enters.insert(q);
    }

    /// Records join(q), and enter(q) with it to maintain the pairing
    /// invariant.
    pub fn add_join(&mut self, q: NodeId) {
        self.joins.insert(q);
        self.enters.insert(q);
    }

    pub fn add_leave(&mut self, q: NodeId) {
        self.leaves.insert(q);
    }

    pub fn union_from(&mut self, other: &ChangesSet) {
        self.enters.extend(other.enters.iter().copied());
        self.joins.extend(other.joins.iter().copied());
        self.leaves.extend(other.leaves.iter().copied());
    }

    pub fn contains(&self, kind: EventKind, q: NodeId) -> bool {
        match kind {
            EventKind::Enter => self.enters.contains(&q),
            EventKind::Join => self.joins.contains(&q),
            EventKind::Leave => self.leaves.contains(&q),
        }
    }

    /// Present = entered and not left.
    pub fn present(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.enters
            .iter()
            .copied()
            .filter(move |q| !self.leaves.contains(q))
    }

    /// Members = joined and not left.
    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.joins
            .iter()
            .copied()
            .filter(move |q| !self.leaves.contains(q))
    }

    pub fn present_count(&self) -> usize {
        self.present().count()
    }

    pub fn members_count(&self) -> usize {
        self.members().count()
    }

    /// All events as (kind, node) pairs, for state digests.
    pub fn events(&self) -> impl Iterator<Item = (EventKind, NodeId)> + '_ {
        let e = self.enters.iter().map(|q| (EventKind::Enter, *q));
        let j = self.joins.iter().map(|q| (EventKind::Join, *q));
        let l = self.leaves.iter().map(|q| (EventKind::Leave, *q));
        e.chain(j).chain(l)
    }
}

/// Churn-management state of one node.
#[derive(Debug, Clone)]
pub struct MembershipState {
    pub changes: ChangesSet,
    pub is_joined: bool,
    /// Set once, on the first echo from an already-joined node; `None` plays
    /// the role of the unset sentinel.
    pub join_threshold: Option<Rat>,
    pub join_counter: u64,
}

impl MembershipState {
    /// State for a node in the initial system: joined from time zero and
    /// aware of every initial node's enter and join.
    pub fn initial(s0: &BTreeSet<NodeId>) -> Self {
        let mut changes = ChangesSet::new();
        for q in s0 {
            changes.add_join(*q);
        }
        MembershipState {
            changes,
            is_joined: true,
            join_threshold: None,
            join_counter: 0,
        }
    }

    /// State for a node that enters later.
    pub fn entrant() -> Self {
        MembershipState {
            changes: ChangesSet::new(),
            is_joined: false,
            join_threshold: None,
            join_counter: 0,
        }
    }
}

/// Outcome of a membership handler: messages to broadcast, and whether the
/// node just joined (emits the Joined response upstream).
#[derive(Debug, Default)]
pub struct MembershipStep {
    pub broadcasts: Vec<Arc<Message>>,
    pub joined_now: bool,
}

/// Enter event at this node: record own enter, announce it.
pub fn on_enter(m: &mut MembershipState, me: NodeId) -> MembershipStep {
    m.changes.add_enter(me);
    MembershipStep {
        broadcasts: vec![Arc::new(Message::Enter { node: me })],
        joined_now: false,
    }
}

/// Receipt of an Enter announcement: record it and echo back the local
/// knowledge (Changes, view, joined bit) addressed to the enterer.
pub fn on_receive_enter(
    m: &mut MembershipState,
    lview: &View,
    q: NodeId,
) -> MembershipStep {
    m.changes.add_enter(q);
    MembershipStep {
        broadcasts: vec![Arc::new(Message::EnterEcho {
            changes: Arc::new(m.changes.clone()),
            rview: Arc::new(lview.clone()),
            is_joined: m.is_joined,
            dest: q,
        })],
        joined_now: false,
    }
}

/// Receipt of an EnterEcho. The merge of the carried view and the union of
/// the carried Changes apply at every receiver; the join logic applies only
/// at the addressed, not-yet-joined node.
///
/// The join rule: the first echo from a joined sender fixes
/// `join_threshold = gamma * |Present|` (not recomputed later even if
/// Present grows); every addressed echo increments `join_counter`, including
/// those from not-yet-joined senders; the node joins when the counter meets
/// a set threshold.
pub fn on_receive_enter_echo(
    m: &mut MembershipState,
    lview: &mut View,
    gamma: &Rat,
    me: NodeId,
    changes: &ChangesSet,
    rview: &View,
    sender_joined: bool,
    dest: NodeId,
) -> MembershipStep {
    lview.merge_from(rview);
    m.changes.union_from(changes);
    let mut out = MembershipStep::default();
    if !m.is_joined && dest == me {
        if sender_joined && m.join_threshold.is_none() {
            m.join_threshold = Some(join_threshold(gamma, m.changes.present_count()));
        }
        m.join_counter += 1;
        if let Some(th) = &m.join_threshold {
            if counter_meets(m.join_counter, th) {
                m.is_joined = true;
                m.changes.add_join(me);
                out.broadcasts.push(Arc::new(Message::Join { node: me }));
                out.joined_now = true;
            }
        }
    }
    out
}

/// Receipt of a Join announcement: record join (and enter), relay an echo.
pub fn on_receive_join(m: &mut MembershipState, q: NodeId) -> MembershipStep {
    m.changes.add_join(q);
    MembershipStep {
        broadcasts: vec![Arc::new(Message::JoinEcho { node: q })],
        joined_now: false,
    }
}

/// Receipt of a JoinEcho: record join (and enter); no further relay.
pub fn on_receive_join_echo(m: &mut MembershipState, q: NodeId) -> MembershipStep {
    m.changes.add_join(q);
    MembershipStep::default()
}

/// Leave event at this node: announce and halt (the caller stops stepping
/// this node afterwards).
pub fn on_leave(me: NodeId) -> MembershipStep {
    MembershipStep {
        broadcasts: vec![Arc::new(Message::Leave { node: me })],
        joined_now: false,
    }
}

/// Receipt of a Leave announcement: record it, relay an echo.
pub fn on_receive_leave(m: &mut MembershipState, q: NodeId) -> MembershipStep {
    m.changes.add_leave(q);
    MembershipStep {
        broadcasts: vec![Arc::new(Message::LeaveEcho { node: q })],
        joined_now: false,
    }
}

/// Receipt of a LeaveEcho: record it; no further relay.
pub fn on_receive_leave_echo(m: &mut MembershipState, q: NodeId) -> MembershipStep {
    m.changes.add_leave(q);
    MembershipStep::default()
}
