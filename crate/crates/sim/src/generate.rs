//! Random scenario generation that passes validation by construction.
//!
//! Churn placement keeps every pair of scheduled events at least 3D apart,
//! so any D-window holds at most one enter/leave and the derived growth and
//! departure bounds hold with slack. Budgets are tracked exactly: an event
//! is only placed where `alpha * N` (taken just before the event) admits it,
//! leaves never push the size below a floor, and crashes stay within
//! `delta * floor`, which bounds `delta * N(t)` for every later t since the
//! size never drops below the floor.
//!
//! Departures (leaves and crashes) are additionally kept 8D apart. Phase
//! thresholds are frozen when the phase opens, and at small sizes the margin
//! is a single node (`ceil(0.79 * N) == N - 1` for `5 <= N <= 8`), so two
//! departures straddling one phase would starve it forever. A phase spans at
//! most 4D and a departure can void acks sent up to D earlier, so an 8D gap
//! guarantees every phase loses at most one acker and still completes.

use crate::scenario::{
    expand_random, ChurnEvent, ChurnKind, CrashDelivery, DelayModel, ModelParams, OpProfile,
    RandomWorkload, Scenario,
};
use churnstore_protocol::objects::lattice::LatticeKind;
use churnstore_protocol::params::{rat_from_decimal, Rat};
use churnstore_protocol::Mutation;
use num::bigint::BigInt;
use num::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone)]
pub struct GenSpec {
    pub params: ModelParams,
    /// Inclusive range for the initial system size.
    pub nodes: (u64, u64),
    /// Target operation count (the expander may place fewer).
    pub ops: u64,
    /// Target churn event count (placement may fall short, never over).
    pub churn_events: u64,
    pub horizon: u64,
    pub profile: OpProfile,
    pub delay_model: DelayModel,
    pub mutation: Mutation,
    pub crash_delivery: CrashDelivery,
    pub lattice: LatticeKind,
    pub seed: u64,
}

impl GenSpec {
    /// Fuzzing defaults: 5-20 nodes, light churn, a store/collect workload.
    /// `alpha` is raised to 0.25 so single events clear the churn window
    /// check at small sizes; it describes the schedule, and the protocol
    /// itself reads only gamma and beta.
    pub fn new(seed: u64) -> GenSpec {
        let mut params = ModelParams::defaults();
        params.alpha = rat_from_decimal("0.25").unwrap();
        GenSpec {
            params,
            nodes: (5, 20),
            ops: 40,
            churn_events: 6,
            horizon: 40 * crate::time::TICKS_PER_UNIT,
            profile: OpProfile::StoreCollect,
            delay_model: DelayModel::Uniform,
            mutation: Mutation::None,
            crash_delivery: CrashDelivery::Random,
            lattice: LatticeKind::SetUnion,
            seed,
        }
    }
}

fn rat(n: u64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Emits a scenario that passes `validate_scenario`, deterministically in
/// the spec seed. Fails only when the spec demands churn that the alpha
/// budget or the horizon cannot admit at all.
pub fn generate_scenario(spec: &GenSpec) -> Result<Scenario, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let d = spec.params.d_ticks;
    let n0 = rng.gen_range(spec.nodes.0..=spec.nodes.1);
    let initial: Vec<String> = (0..n0).map(|i| format!("n{i}")).collect();
    let floor = spec.params.n_min.max(n0.min(5));
    let crash_budget = (&spec.params.delta * rat(floor))
        .floor()
        .to_integer()
        .to_u64()
        .unwrap_or(0);

    let lo_t = 3 * d;
    let hi_t = spec.horizon.saturating_sub(5 * d);
    let one = Rat::one();

    let mut times: Vec<u64> = Vec::new();
    if hi_t >= lo_t {
        for _ in 0..spec.churn_events {
            for _attempt in 0..30 {
                let t = rng.gen_range(lo_t..=hi_t);
                let clear = times.iter().all(|&u| u.abs_diff(t) >= 3 * d);
                if clear {
                    times.push(t);
                    break;
                }
            }
        }
    }
    times.sort_unstable();

    let mut events: Vec<ChurnEvent> = Vec::new();
    let mut pool: Vec<String> = initial.clone();
    let mut departures: Vec<u64> = Vec::new();
    let mut n = n0;
    let mut crashed = 0u64;
    let mut entrants = 0u64;
    for t in times {
        let churn_ok = rat(1) <= &spec.params.alpha * rat(n);
        let dep_clear = departures.iter().all(|&u| u.abs_diff(t) >= 8 * d);
        let enter_ok = churn_ok;
        let leave_ok = churn_ok
            && dep_clear
            && n > floor
            && !pool.is_empty()
            && rat(crashed) <= &spec.params.delta * rat(n - 1);
        let crash_ok = crashed < crash_budget && dep_clear && !pool.is_empty();
        let preferred = match rng.gen_range(0..10) {
            0..=4 => ChurnKind::Enter,
            5..=7 => ChurnKind::Leave,
            _ => ChurnKind::Crash,
        };
        let allowed = |k: ChurnKind| match k {
            ChurnKind::Enter => enter_ok,
            ChurnKind::Leave => leave_ok,
            ChurnKind::Crash => crash_ok,
        };
        let kind = if allowed(preferred) {
            preferred
        } else if enter_ok {
            ChurnKind::Enter
        } else if leave_ok {
            ChurnKind::Leave
        } else if crash_ok {
            ChurnKind::Crash
        } else {
            continue;
        };
        match kind {
            ChurnKind::Enter => {
                let name = format!("e{entrants}");
                entrants += 1;
                n += 1;
                pool.push(name.clone());
                events.push(ChurnEvent { t, kind, node: name });
            }
            ChurnKind::Leave => {
                let victim = pool.remove(rng.gen_range(0..pool.len()));
                n -= 1;
                departures.push(t);
                events.push(ChurnEvent { t, kind, node: victim });
            }
            ChurnKind::Crash => {
                let victim = pool.remove(rng.gen_range(0..pool.len()));
                crashed += 1;
                departures.push(t);
                events.push(ChurnEvent { t, kind, node: victim });
            }
        }
    }

    if spec.churn_events > 0 && events.is_empty() {
        let alpha_too_small = &spec.params.alpha * rat(n0) < one;
        if alpha_too_small || hi_t < lo_t {
            return Err(format!(
                "churn requested but none can be placed: alpha*N0 = {} and the horizon leaves [{}, {}]",
                churnstore_protocol::params::rat_to_string(&(&spec.params.alpha * rat(n0))),
                crate::time::ticks_to_decimal(lo_t),
                crate::time::ticks_to_decimal(hi_t.min(spec.horizon)),
            ));
        }
    }

    let mut scenario = Scenario {
        params: spec.params.clone(),
        initial_nodes: initial,
        churn: events,
        workload: Vec::new(),
        delay_model: spec.delay_model,
        seed: spec.seed,
        horizon: spec.horizon,
        mutation: spec.mutation,
        crash_delivery: spec.crash_delivery,
        lattice: spec.lattice,
    };
    let wspec = RandomWorkload {
        ops: spec.ops,
        profile: spec.profile,
        from: 0,
        until: hi_t.max(lo_t.min(spec.horizon)),
        seed: rng.gen(),
    };
    scenario.workload = expand_random(&wspec, &scenario);
    Ok(scenario)
}
