//! Store-collect protocol for systems with continuous churn, and the shared
//! objects layered on it.
//!
//! The crate is pure state machines: no clocks, no I/O, no threads. A node is
//! driven entirely by [`node::Trigger`]s (enter, leave, message receipt,
//! operation invocation) and responds with broadcasts and completed results.
//! Everything time- or network-related lives in the simulator crate.
//!
//! Layers, bottom up:
//! - [`membership`]: enter/join/leave bookkeeping with echo-counted joining.
//! - [`store_collect`]: the store and collect phases over joined quorums.
//! - [`objects`]: atomic snapshot, lattice agreement, max register, abort
//!   flag, and add-only set, all expressed as store/collect continuations.
//! - [`node`]: one struct composing the layers behind a single step function.

pub mod membership;
pub mod message;
pub mod node;
pub mod objects;
pub mod params;
pub mod store_collect;
pub mod value;
pub mod view;

/// Fault injections used by negative-control tests. `None` is the faithful
/// protocol; the others each disable one mechanism the safety argument needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Servers acknowledge stores but never re-broadcast them, so a view can
    /// stop spreading once the storing client crashes mid-broadcast.
    DropStoreEcho,
    /// Collects return their live local view at quorum instead of writing the
    /// result back, so a later collect may miss what this one returned.
    SkipStoreBack,
}

pub use params::{ProtocolParams, Rat};
pub use view::{merge, NodeId, View, ViewEntry};
