//! Protocol messages. Everything is a broadcast; directed messages carry the
//! intended recipient id and all other nodes ignore them.

use crate::membership::ChangesSet;
use crate::view::{NodeId, View};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// Announces that `node` has entered the system.
    Enter { node: NodeId },
    /// Reply to an Enter announcement, carrying the sender's knowledge.
    EnterEcho {
        changes: Arc<ChangesSet>,
        rview: Arc<View>,
        is_joined: bool,
        dest: NodeId,
    },
    /// Announces that `node` has joined.
    Join { node: NodeId },
    /// Relay of a Join announcement.
    JoinEcho { node: NodeId },
    /// Announces that `node` is leaving.
    Leave { node: NodeId },
    /// Relay of a Leave announcement.
    LeaveEcho { node: NodeId },
    /// Client store broadcast (opens a store or store-back phase).
    Store {
        rview: Arc<View>,
        tag: u64,
        sender: NodeId,
    },
    /// Server acknowledgment of a Store, directed at the storing client.
    StoreAck { tag: u64, dest: NodeId },
    /// Client collect broadcast (opens a collect phase).
    CollectQuery { tag: u64, sender: NodeId },
    /// Server reply to a collect query, directed at the querying client.
    CollectReply {
        rview: Arc<View>,
        tag: u64,
        dest: NodeId,
    },
    /// Unconditional server relay of its merged view after a Store.
    StoreEcho { rview: Arc<View> },
}

impl Message {
    /// Wire-format kind name, used in trace records.
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Enter { .. } => "enter",
            Message::EnterEcho { .. } => "enter-echo",
            Message::Join { .. } => "join",
            Message::JoinEcho { .. } => "join-echo",
            Message::Leave { .. } => "leave",
            Message::LeaveEcho { .. } => "leave-echo",
            Message::Store { .. } => "store",
            Message::StoreAck { .. } => "store-ack",
            Message::CollectQuery { .. } => "collect-query",
            Message::CollectReply { .. } => "collect-reply",
            Message::StoreEcho { .. } => "store-echo",
        }
    }
}
