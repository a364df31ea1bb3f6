//! Offline verifiers for simulation traces.
//!
//! Each checker is a pure function from an extracted [`Schedule`] to a
//! [`Verdict`]; verdicts depend only on the trace bytes. Record indices are
//! reported as 1-based JSONL line numbers so a violation can be chased back
//! into the trace file directly.

pub mod knowledge;
pub mod lattice;
pub mod liveness;
pub mod regularity;
pub mod schedule;
pub mod snapshot;

pub use schedule::{Schedule, ScheduleError};

use serde_json::{json, Value};
use std::collections::BTreeMap;

/// Cap on violations retained per verdict. Mutated runs can produce
/// thousands of structurally identical findings; pass/fail needs one.
pub const MAX_VIOLATIONS: usize = 50;

/// One checker finding, anchored to the trace lines that witness it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub witness_lines: Vec<usize>,
    pub explanation: String,
}

impl Violation {
    pub fn new(witness_lines: Vec<usize>, explanation: impl Into<String>) -> Violation {
        Violation { witness_lines, explanation: explanation.into() }
    }
}

/// Result of one property check over one trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub property: String,
    pub pass: bool,
    /// How the verdict was reached, when a property has several engines
    /// (e.g. exhaustive vs constructive linearizability).
    pub mode: Option<String>,
    pub violations: Vec<Violation>,
    /// Total found, which exceeds `violations.len()` once the cap bites.
    pub total_violations: usize,
}

impl Verdict {
    pub fn new(property: impl Into<String>, violations: Vec<Violation>) -> Verdict {
        let total = violations.len();
        let mut kept = violations;
        kept.truncate(MAX_VIOLATIONS);
        Verdict {
            property: property.into(),
            pass: total == 0,
            mode: None,
            violations: kept,
            total_violations: total,
        }
    }

    pub fn with_mode(mut self, mode: impl Into<String>) -> Verdict {
        self.mode = Some(mode.into());
        self
    }

    pub fn to_json(&self) -> Value {
        let violations: Vec<Value> = self
            .violations
            .iter()
            .map(|v| {
                json!({
                    "witness_line_numbers": v.witness_lines,
                    "explanation": v.explanation,
                })
            })
            .collect();
        let mut o = json!({
            "property": self.property,
            "pass": self.pass,
            "violations": violations,
        });
        let obj = o.as_object_mut().unwrap();
        if let Some(mode) = &self.mode {
            obj.insert("mode".into(), json!(mode));
        }
        if self.total_violations > self.violations.len() {
            obj.insert("total_violations".into(), json!(self.total_violations));
        }
        o
    }
}

/// View order on per-node sequence numbers: v1 is no fresher than v2 at
/// every node. Views carry one value per (node, sqno), so comparing sqnos
/// compares the values themselves.
pub fn view_leq(v1: &BTreeMap<String, u64>, v2: &BTreeMap<String, u64>) -> bool {
    v1.iter().all(|(p, a)| v2.get(p).is_some_and(|b| a <= b))
}

/// All properties the suite can check on one trace.
pub fn check_all(trace: &churnstore_sim::Trace) -> Result<Vec<Verdict>, ScheduleError> {
    let schedule = Schedule::extract(trace)?;
    Ok(vec![
        regularity::check_regularity(&schedule),
        snapshot::check_snapshot(&schedule, snapshot::DEFAULT_EXHAUSTIVE_BUDGET),
        lattice::check_lattice(&schedule),
        liveness::check_liveness(&schedule),
        knowledge::check_knowledge(&schedule),
    ])
}
