//! Deterministic discrete-event simulator for the churn-tolerant store
//! protocol: virtual time, bounded FIFO broadcast delivery, crash-truncated
//! broadcasts, churn scheduling, and a workload driver, producing JSONL
//! traces that the offline checkers consume.

pub mod engine;
pub mod generate;
pub mod scenario;
pub mod time;
pub mod trace;

pub use engine::run;
pub use scenario::{Scenario, ValidationReport};
pub use trace::Trace;
