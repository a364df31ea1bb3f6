//! Seeded fuzzing: generate conforming scenarios, simulate each one, run
//! every checker, and shrink failing scenarios to small witnesses.
//!
//! Shrinking is deterministic delta debugging over the scenario's churn
//! events and then its workload items, at increasing granularity. Removing
//! an enter event also removes everything that depends on the entrant (its
//! later churn and its operations), and every candidate is re-validated so
//! the shrunk scenario still conforms to the churn assumptions. A removal
//! is kept only when one of the originally failing properties still fails.

use std::collections::BTreeSet;

use churnstore_checkers::{check_all, Verdict};
use churnstore_protocol::objects::lattice::LatticeKind;
use churnstore_protocol::Mutation;
use churnstore_sim::generate::{generate_scenario, GenSpec};
use churnstore_sim::scenario::{ChurnKind, DelayModel, ModelParams, OpProfile, Scenario};
use churnstore_sim::time::TICKS_PER_UNIT;

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub runs: u64,
    pub seed: u64,
    /// Inclusive range for the initial system size.
    pub nodes: (u64, u64),
    pub ops: u64,
    pub churn_events: u64,
    pub horizon: u64,
    pub profile: OpProfile,
    /// Rotated across runs.
    pub delay_models: Vec<DelayModel>,
    /// Rotated across runs when the profile proposes to lattices.
    pub lattices: Vec<LatticeKind>,
    pub mutation: Mutation,
    pub params: ModelParams,
}

impl FuzzConfig {
    pub fn new(seed: u64) -> FuzzConfig {
        let template = GenSpec::new(0);
        FuzzConfig {
            runs: 10,
            seed,
            nodes: template.nodes,
            ops: template.ops,
            churn_events: template.churn_events,
            horizon: template.horizon,
            profile: OpProfile::StoreCollect,
            delay_models: vec![
                DelayModel::Uniform,
                DelayModel::Fixed(TICKS_PER_UNIT / 2),
                DelayModel::AdversarialMax,
            ],
            lattices: vec![LatticeKind::SetUnion, LatticeKind::IntMax],
            mutation: Mutation::None,
            params: template.params,
        }
    }

    /// The generator spec for run `i`, deterministic in the config.
    pub fn spec_for(&self, i: u64) -> GenSpec {
        let mut spec = GenSpec::new(self.seed.wrapping_add(i));
        spec.params = self.params.clone();
        spec.nodes = self.nodes;
        spec.ops = self.ops;
        spec.churn_events = self.churn_events;
        spec.horizon = self.horizon;
        spec.profile = self.profile;
        spec.delay_model = self.delay_models[(i % self.delay_models.len() as u64) as usize];
        spec.lattice = self.lattices[(i % self.lattices.len() as u64) as usize];
        spec.mutation = self.mutation;
        spec
    }
}

/// One simulated-and-checked scenario.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub index: u64,
    pub seed: u64,
    pub scenario: Scenario,
    pub verdicts: Vec<Verdict>,
}

impl RunReport {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn failing_properties(&self) -> BTreeSet<String> {
        self.verdicts.iter().filter(|v| !v.pass).map(|v| v.property.clone()).collect()
    }
}

/// Simulates and checks one generated scenario.
pub fn run_one(spec: &GenSpec, index: u64) -> Result<RunReport, String> {
    let scenario = generate_scenario(spec)?;
    let report = check_scenario(&scenario)?;
    Ok(RunReport { index, seed: spec.seed, scenario, verdicts: report })
}

/// Simulates and checks a concrete scenario.
pub fn check_scenario(scenario: &Scenario) -> Result<Vec<Verdict>, String> {
    let trace = churnstore_sim::run(scenario);
    check_all(&trace).map_err(|e| e.to_string())
}

/// Runs the whole campaign. Errors only on configurations the generator
/// cannot satisfy at all; checker findings are collected, not errors.
pub fn fuzz(cfg: &FuzzConfig) -> Result<Vec<RunReport>, String> {
    (0..cfg.runs).map(|i| run_one(&cfg.spec_for(i), i)).collect()
}

/// Result of shrinking one failing scenario.
#[derive(Debug, Clone)]
pub struct ShrinkResult {
    pub scenario: Scenario,
    /// Candidate scenarios simulated while shrinking.
    pub evaluations: u64,
    /// The properties that still fail on the shrunk scenario.
    pub failing: BTreeSet<String>,
}

/// Copies the scenario without the churn events at `drop` positions, also
/// dropping everything that depends on a dropped entrant.
fn without_churn(s: &Scenario, drop: &BTreeSet<usize>) -> Scenario {
    let dropped_entrants: BTreeSet<&str> = s
        .churn
        .iter()
        .enumerate()
        .filter(|(i, e)| drop.contains(i) && e.kind == ChurnKind::Enter)
        .map(|(_, e)| e.node.as_str())
        .collect();
    let mut out = s.clone();
    out.churn = s
        .churn
        .iter()
        .enumerate()
        .filter(|(i, e)| !drop.contains(i) && !dropped_entrants.contains(e.node.as_str()))
        .map(|(_, e)| e.clone())
        .collect();
    out.workload = s
        .workload
        .iter()
        .filter(|w| !dropped_entrants.contains(w.node.as_str()))
        .cloned()
        .collect();
    out
}

/// Copies the scenario without the workload items at `drop` positions.
fn without_workload(s: &Scenario, drop: &BTreeSet<usize>) -> Scenario {
    let mut out = s.clone();
    out.workload = s
        .workload
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, w)| w.clone())
        .collect();
    out
}

/// Deterministic delta debugging on one list dimension: tries dropping
/// chunks at doubling granularity, keeping any candidate that validates and
/// still fails one of the target properties.
fn ddmin_dimension(
    mut current: Scenario,
    failing: &BTreeSet<String>,
    len_of: impl Fn(&Scenario) -> usize,
    drop_fn: impl Fn(&Scenario, &BTreeSet<usize>) -> Scenario,
    evaluations: &mut u64,
    max_evals: u64,
) -> Scenario {
    let still_fails = |candidate: &Scenario, evaluations: &mut u64| -> bool {
        if !candidate.validate().pass() {
            return false;
        }
        *evaluations += 1;
        match check_scenario(candidate) {
            Ok(verdicts) => verdicts.iter().any(|v| !v.pass && failing.contains(&v.property)),
            Err(_) => false,
        }
    };

    let mut chunks = 2usize;
    while len_of(&current) > 0 && *evaluations < max_evals {
        let n = len_of(&current);
        let size = n.div_ceil(chunks);
        let mut shrunk = false;
        for start in (0..n).step_by(size.max(1)) {
            if *evaluations >= max_evals {
                break;
            }
            let drop: BTreeSet<usize> = (start..(start + size).min(n)).collect();
            if drop.len() == n && chunks == 2 && n > 1 {
                // Dropping everything is covered by the final singleton
                // passes; skip the degenerate whole-list candidate early on.
                continue;
            }
            let candidate = drop_fn(&current, &drop);
            if still_fails(&candidate, evaluations) {
                current = candidate;
                shrunk = true;
                break;
            }
        }
        if shrunk {
            chunks = 2;
        } else if size <= 1 {
            break;
        } else {
            chunks = (chunks * 2).min(len_of(&current).max(1));
        }
    }
    current
}

/// Shrinks a failing scenario to a smaller one that still fails at least
/// one of the given properties: churn events first, then workload items.
pub fn shrink_failure(
    scenario: &Scenario,
    failing: &BTreeSet<String>,
    max_evals: u64,
) -> ShrinkResult {
    let mut evaluations = 0;
    let after_churn = ddmin_dimension(
        scenario.clone(),
        failing,
        |s| s.churn.len(),
        without_churn,
        &mut evaluations,
        max_evals,
    );
    let shrunk = ddmin_dimension(
        after_churn,
        failing,
        |s| s.workload.len(),
        without_workload,
        &mut evaluations,
        max_evals,
    );
    let final_failing = check_scenario(&shrunk)
        .map(|vs| {
            vs.iter().filter(|v| !v.pass).map(|v| v.property.clone()).collect::<BTreeSet<_>>()
        })
        .unwrap_or_default();
    evaluations += 1;
    ShrinkResult { scenario: shrunk, evaluations, failing: final_failing }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_campaign_reports_all_passes() {
        let mut cfg = FuzzConfig::new(11);
        cfg.runs = 3;
        cfg.ops = 12;
        cfg.churn_events = 2;
        let reports = fuzz(&cfg).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert!(r.pass(), "run {} failed: {:?}", r.index, r.failing_properties());
            assert_eq!(r.verdicts.len(), 5);
        }
    }

    #[test]
    fn campaigns_are_deterministic() {
        let mut cfg = FuzzConfig::new(12);
        cfg.runs = 2;
        cfg.ops = 8;
        let a = fuzz(&cfg).unwrap();
        let b = fuzz(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.scenario, y.scenario);
            let jx: Vec<_> = x.verdicts.iter().map(|v| v.to_json()).collect();
            let jy: Vec<_> = y.verdicts.iter().map(|v| v.to_json()).collect();
            assert_eq!(jx, jy);
        }
    }

    #[test]
    fn starved_quorums_fail_and_shrink_to_smaller_witnesses() {
        // A phase threshold far below the feasible region floors at one
        // ack, so a store can complete while its broadcast is still in
        // flight to everyone else. A collect invoked right after such a
        // completion can freeze its view before the broadcast lands, so a
        // dense workload on few nodes eventually returns a stale view. The
        // seed is frozen on a campaign whose 14th run does exactly that.
        let mut cfg = FuzzConfig::new(77);
        cfg.runs = 14;
        cfg.ops = 60;
        cfg.nodes = (5, 7);
        cfg.churn_events = 0;
        cfg.params.beta = churnstore_protocol::params::rat_from_decimal("0.12").unwrap();
        cfg.delay_models = vec![DelayModel::Uniform];
        let reports = fuzz(&cfg).unwrap();
        let failing = reports.iter().find(|r| !r.pass());
        let Some(report) = failing else {
            panic!("no failing run with a starved quorum");
        };

        let shrunk = shrink_failure(&report.scenario, &report.failing_properties(), 60);
        assert!(!shrunk.failing.is_empty(), "shrunk scenario no longer fails");
        assert!(
            shrunk.scenario.workload.len() <= report.scenario.workload.len()
                && shrunk.scenario.churn.len() <= report.scenario.churn.len()
        );
        assert!(shrunk.scenario.validate().pass());
        assert!(shrunk
            .failing
            .iter()
            .any(|p| report.failing_properties().contains(p)));
    }

    #[test]
    fn dropping_an_entrant_drops_its_dependents() {
        let mut cfg = FuzzConfig::new(14);
        cfg.runs = 1;
        cfg.churn_events = 4;
        cfg.ops = 20;
        let scenario = generate_scenario(&cfg.spec_for(0)).unwrap();
        let enter_idx = scenario.churn.iter().position(|e| e.kind == ChurnKind::Enter);
        let Some(i) = enter_idx else { return };
        let victim = scenario.churn[i].node.clone();
        let out = without_churn(&scenario, &BTreeSet::from([i]));
        assert!(out.churn.iter().all(|e| e.node != victim));
        assert!(out.workload.iter().all(|w| w.node != victim));
        assert!(out.churn.len() < scenario.churn.len());
    }
}
