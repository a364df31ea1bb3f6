//! Differential testing of the two snapshot linearization engines: on every
//! history small enough for the exhaustive search, the constructive
//! linearization must reach the same answer, on clean and mutated runs alike.

use churnstore_checkers::{snapshot, Schedule};
use churnstore_protocol::Mutation;
use churnstore_sim::generate::{generate_scenario, GenSpec};
use churnstore_sim::run;
use churnstore_sim::scenario::{DelayModel, OpProfile};

fn small_snapshot_spec(seed: u64, mutation: Mutation) -> GenSpec {
    let mut spec = GenSpec::new(seed);
    spec.churn_events = 0;
    spec.ops = 5;
    spec.nodes = (4, 6);
    spec.profile = OpProfile::Snapshot;
    spec.delay_model = match seed % 3 {
        0 => DelayModel::Uniform,
        1 => DelayModel::Fixed(spec.params.d_ticks / 2),
        _ => DelayModel::AdversarialMax,
    };
    spec.mutation = mutation;
    spec
}

#[test]
fn engines_agree_on_clean_runs() {
    let mut decided = 0;
    for seed in 0..70u64 {
        let s = generate_scenario(&small_snapshot_spec(seed, Mutation::None)).unwrap();
        let trace = run(&s);
        let sched = Schedule::extract(&trace).unwrap();
        match snapshot::engines_agree(&sched, snapshot::DEFAULT_EXHAUSTIVE_BUDGET) {
            Some(true) => decided += 1,
            Some(false) => panic!("seed {seed}: engines disagree"),
            None => {}
        }
    }
    assert!(decided >= 50, "only {decided} runs were exhaustively checkable");
}

#[test]
fn engines_agree_on_mutated_runs() {
    let mut decided = 0;
    for seed in 0..30u64 {
        for mutation in [Mutation::DropStoreEcho, Mutation::SkipStoreBack] {
            let s = generate_scenario(&small_snapshot_spec(seed, mutation)).unwrap();
            let trace = run(&s);
            let sched = Schedule::extract(&trace).unwrap();
            match snapshot::engines_agree(&sched, snapshot::DEFAULT_EXHAUSTIVE_BUDGET) {
                Some(true) => decided += 1,
                Some(false) => panic!("seed {seed} {mutation:?}: engines disagree"),
                None => {}
            }
        }
    }
    assert!(decided >= 30, "only {decided} mutated runs were exhaustively checkable");
}
