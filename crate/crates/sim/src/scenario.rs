//! Scenario model: parameters, churn schedule, workload, and validation.
//!
//! A scenario file is JSON with fields
//! `{params, initial_nodes, churn, workload, delay_model, seed, horizon}`
//! plus optional `mutation`, `crash_delivery`, and `lattice`. All numbers are
//! read exactly: parameter fractions become big rationals and times become
//! integer ticks, so `0.79` means 79/100 and never the nearest double.
//!
//! Churn events scheduled after the horizon are legal and simply never run;
//! the validator flags only schedules that are structurally ill-formed or
//! that break the churn/size/failure assumptions.

use crate::time::{ticks_from_decimal, ticks_to_decimal, TICKS_PER_UNIT};
use churnstore_protocol::node::OpRequest;
use churnstore_protocol::objects::lattice::LatticeKind;
use churnstore_protocol::params::{rat_from_decimal, rat_to_decimal, rat_to_string};
use churnstore_protocol::value::{AsVal, Val};
use churnstore_protocol::{Mutation, ProtocolParams, Rat};
use num::bigint::BigInt;
use num::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde_json::{json, Map, Number, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("scenario: {0}")]
pub struct ScenarioError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError(msg.into()))
}

/// Full model parameters: the protocol-visible fractions plus the system-size
/// floor and the delay bound, which only the simulator may read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelParams {
    pub alpha: Rat,
    pub delta: Rat,
    pub gamma: Rat,
    pub beta: Rat,
    pub n_min: u64,
    pub d_ticks: u64,
}

impl ModelParams {
    pub fn defaults() -> Self {
        let r = |s: &str| rat_from_decimal(s).unwrap();
        ModelParams {
            alpha: r("0"),
            delta: r("0.21"),
            gamma: r("0.79"),
            beta: r("0.79"),
            n_min: 2,
            d_ticks: TICKS_PER_UNIT,
        }
    }

    pub fn d_rat(&self) -> Rat {
        Rat::new(BigInt::from(self.d_ticks), BigInt::from(TICKS_PER_UNIT))
    }

    /// The subset handed to protocol state machines (never includes d).
    pub fn protocol(&self) -> ProtocolParams {
        ProtocolParams::new(
            self.alpha.clone(),
            self.delta.clone(),
            self.gamma.clone(),
            self.beta.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChurnKind {
    Enter,
    Leave,
    Crash,
}

impl ChurnKind {
    pub fn name(self) -> &'static str {
        match self {
            ChurnKind::Enter => "enter",
            ChurnKind::Leave => "leave",
            ChurnKind::Crash => "crash",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "enter" => Some(ChurnKind::Enter),
            "leave" => Some(ChurnKind::Leave),
            "crash" => Some(ChurnKind::Crash),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChurnEvent {
    pub t: u64,
    pub kind: ChurnKind,
    pub node: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkItem {
    pub t: u64,
    pub node: String,
    pub op: String,
    pub args: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayModel {
    /// Integer tick delay drawn uniformly from (0, D].
    Uniform,
    /// Every message takes exactly this many ticks (must be in (0, D]).
    Fixed(u64),
    /// Every message takes exactly D.
    AdversarialMax,
}

impl DelayModel {
    pub fn describe(&self) -> String {
        match self {
            DelayModel::Uniform => "uniform".into(),
            DelayModel::Fixed(t) => format!("fixed:{}", ticks_to_decimal(*t)),
            DelayModel::AdversarialMax => "adversarial-max".into(),
        }
    }

    fn to_json(self) -> Value {
        match self {
            DelayModel::Uniform => json!("uniform"),
            DelayModel::Fixed(t) => json!({ "fixed": dec_number(&ticks_to_decimal(t)) }),
            DelayModel::AdversarialMax => json!("adversarial-max"),
        }
    }
}

/// What happens to the copies of a broadcast whose sender crashes at the send
/// instant: each copy survives by a seeded coin flip, or none survive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrashDelivery {
    #[default]
    Random,
    None,
}

impl CrashDelivery {
    pub fn name(self) -> &'static str {
        match self {
            CrashDelivery::Random => "random",
            CrashDelivery::None => "none",
        }
    }
}

pub fn mutation_name(m: Mutation) -> &'static str {
    match m {
        Mutation::None => "none",
        Mutation::DropStoreEcho => "drop_store_echo",
        Mutation::SkipStoreBack => "skip_store_back",
    }
}

pub fn parse_mutation(s: &str) -> Option<Mutation> {
    match s.replace('-', "_").as_str() {
        "none" => Some(Mutation::None),
        "drop_store_echo" => Some(Mutation::DropStoreEcho),
        "skip_store_back" => Some(Mutation::SkipStoreBack),
        _ => None,
    }
}

pub fn parse_lattice(s: &str) -> Option<LatticeKind> {
    match s.replace('-', "_").as_str() {
        "set_union" => Some(LatticeKind::SetUnion),
        "int_max" => Some(LatticeKind::IntMax),
        _ => None,
    }
}

/// Parses a rational given as a decimal (`0.79`) or a fraction (`79/100`).
pub fn parse_rat_flexible(s: &str) -> Result<Rat, String> {
    if let Some((n, d)) = s.split_once('/') {
        let n = BigInt::from_str(n.trim()).map_err(|e| format!("bad numerator {n:?}: {e}"))?;
        let d = BigInt::from_str(d.trim()).map_err(|e| format!("bad denominator {d:?}: {e}"))?;
        if d.is_zero() {
            return Err("zero denominator".into());
        }
        Ok(Rat::new(n, d))
    } else {
        rat_from_decimal(s).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ModelParams,
    pub initial_nodes: Vec<String>,
    pub churn: Vec<ChurnEvent>,
    pub workload: Vec<WorkItem>,
    pub delay_model: DelayModel,
    pub seed: u64,
    pub horizon: u64,
    pub mutation: Mutation,
    pub crash_delivery: CrashDelivery,
    pub lattice: LatticeKind,
}

/// One operation drawn from the random-workload expander.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpProfile {
    /// Plain store/collect traffic on the base object.
    StoreCollect,
    /// Snapshot updates and scans.
    Snapshot,
    /// Lattice-agreement proposes.
    Lattice,
    /// Max-register, abort-flag, and add-only-set traffic.
    Simple,
}

impl OpProfile {
    pub fn name(self) -> &'static str {
        match self {
            OpProfile::StoreCollect => "store_collect",
            OpProfile::Snapshot => "snapshot",
            OpProfile::Lattice => "lattice",
            OpProfile::Simple => "simple",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.replace('-', "_").as_str() {
            "store_collect" => Some(OpProfile::StoreCollect),
            "snapshot" => Some(OpProfile::Snapshot),
            "lattice" => Some(OpProfile::Lattice),
            "simple" => Some(OpProfile::Simple),
            _ => None,
        }
    }
}

pub const OP_NAMES: &[&str] = &[
    "store", "collect", "update", "scan", "propose", "writemax", "readmax", "abort", "check",
    "addset", "readset",
];

/// Interprets one workload entry as a protocol operation request.
pub fn parse_op(op: &str, args: &Value, lattice: LatticeKind) -> Result<OpRequest, String> {
    let obj = args
        .as_object()
        .ok_or_else(|| format!("args for {op:?} must be an object"))?;
    let get = |k: &str| obj.get(k).ok_or_else(|| format!("{op} needs field {k:?}"));
    let get_i64 = |k: &str| -> Result<i64, String> {
        get(k)?.as_i64().ok_or_else(|| format!("{op}.{k} must be an integer"))
    };
    let get_u64 = |k: &str| -> Result<u64, String> {
        get(k)?.as_u64().ok_or_else(|| format!("{op}.{k} must be a nonnegative integer"))
    };
    let get_set = |k: &str| -> Result<BTreeSet<u64>, String> {
        get(k)?
            .as_array()
            .ok_or_else(|| format!("{op}.{k} must be an array"))?
            .iter()
            .map(|v| v.as_u64().ok_or_else(|| format!("{op}.{k} elements must be nonnegative integers")))
            .collect()
    };
    Ok(match op {
        "store" => {
            let v = get("value")?;
            let text = match v {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                _ => return Err("store.value must be a string or number".into()),
            };
            OpRequest::Store(Val::Raw(text))
        }
        "collect" => OpRequest::Collect,
        "update" => {
            if obj.contains_key("values") {
                OpRequest::Update(AsVal::Set(get_set("values")?))
            } else {
                OpRequest::Update(AsVal::Int(get_u64("value")?))
            }
        }
        "scan" => OpRequest::Scan,
        "propose" => match lattice {
            LatticeKind::IntMax => OpRequest::Propose(AsVal::Int(get_u64("value")?)),
            LatticeKind::SetUnion => OpRequest::Propose(AsVal::Set(get_set("values")?)),
        },
        "writemax" => OpRequest::WriteMax(get_i64("value")?),
        "readmax" => OpRequest::ReadMax,
        "abort" => OpRequest::Abort,
        "check" => OpRequest::Check,
        "addset" => OpRequest::AddSet(get_i64("value")?),
        "readset" => OpRequest::ReadSet,
        other => return Err(format!("unknown op {other:?}")),
    })
}

// JSON extraction helpers. serde_json is built with arbitrary_precision, so
// Number::to_string returns the literal digits from the file.

fn as_object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>, ScenarioError> {
    match v.as_object() {
        Some(o) => Ok(o),
        None => err(format!("{what} must be a JSON object")),
    }
}

fn number_text(v: &Value, what: &str) -> Result<String, ScenarioError> {
    match v {
        Value::Number(n) => Ok(n.to_string()),
        Value::String(s) => Ok(s.clone()),
        _ => err(format!("{what} must be a number")),
    }
}

fn rat_field(o: &Map<String, Value>, k: &str, default: &Rat) -> Result<Rat, ScenarioError> {
    match o.get(k) {
        None => Ok(default.clone()),
        Some(v) => {
            let text = number_text(v, k)?;
            parse_rat_flexible(&text).map_err(|e| ScenarioError(format!("{k}: {e}")))
        }
    }
}

fn ticks_field(o: &Map<String, Value>, k: &str) -> Result<u64, ScenarioError> {
    let v = o.get(k).ok_or_else(|| ScenarioError(format!("missing field {k:?}")))?;
    let text = number_text(v, k)?;
    ticks_from_decimal(&text).map_err(|e| ScenarioError(format!("{k}: {e}")))
}

fn u64_field(o: &Map<String, Value>, k: &str, default: u64) -> Result<u64, ScenarioError> {
    match o.get(k) {
        None => Ok(default),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| ScenarioError(format!("{k} must be a nonnegative integer"))),
    }
}

fn str_field<'a>(o: &'a Map<String, Value>, k: &str) -> Result<&'a str, ScenarioError> {
    o.get(k)
        .and_then(Value::as_str)
        .ok_or_else(|| ScenarioError(format!("missing or non-string field {k:?}")))
}

fn dec_number(s: &str) -> Value {
    Number::from_str(s).map(Value::Number).unwrap_or_else(|_| json!(s))
}

fn rat_json(r: &Rat) -> Value {
    match rat_to_decimal(r) {
        Some(d) => dec_number(&d),
        None => json!(rat_to_string(r)),
    }
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Scenario, ScenarioError> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| ScenarioError(format!("bad JSON: {e}")))?;
        Scenario::from_value(&v)
    }

    pub fn from_value(v: &Value) -> Result<Scenario, ScenarioError> {
        let o = as_object(v, "scenario")?;
        let defaults = ModelParams::defaults();
        let params = match o.get("params") {
            None => defaults,
            Some(pv) => {
                let p = as_object(pv, "params")?;
                ModelParams {
                    alpha: rat_field(p, "alpha", &defaults.alpha)?,
                    delta: rat_field(p, "delta", &defaults.delta)?,
                    gamma: rat_field(p, "gamma", &defaults.gamma)?,
                    beta: rat_field(p, "beta", &defaults.beta)?,
                    n_min: u64_field(p, "n_min", defaults.n_min)?,
                    d_ticks: if p.contains_key("d") {
                        ticks_field(p, "d")?
                    } else {
                        defaults.d_ticks
                    },
                }
            }
        };

        let initial_nodes: Vec<String> = o
            .get("initial_nodes")
            .and_then(Value::as_array)
            .ok_or_else(|| ScenarioError("missing array field \"initial_nodes\"".into()))?
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ScenarioError("initial_nodes entries must be strings".into()))
            })
            .collect::<Result<_, _>>()?;

        let mut churn = Vec::new();
        if let Some(cv) = o.get("churn") {
            let list = cv
                .as_array()
                .ok_or_else(|| ScenarioError("churn must be an array".into()))?;
            for (i, ev) in list.iter().enumerate() {
                let eo = as_object(ev, "churn event")?;
                let kind_name = str_field(eo, "kind")?;
                let kind = ChurnKind::parse(kind_name)
                    .ok_or_else(|| ScenarioError(format!("churn[{i}]: unknown kind {kind_name:?}")))?;
                churn.push(ChurnEvent {
                    t: ticks_field(eo, "t")
                        .map_err(|e| ScenarioError(format!("churn[{i}]: {e}")))?,
                    kind,
                    node: str_field(eo, "node")?.to_string(),
                });
            }
        }

        let horizon = ticks_field(o, "horizon")?;
        let seed = u64_field(o, "seed", 0)?;

        let delay_model = match o.get("delay_model") {
            None => DelayModel::Uniform,
            Some(Value::String(s)) => match s.replace('_', "-").as_str() {
                "uniform" => DelayModel::Uniform,
                "adversarial-max" => DelayModel::AdversarialMax,
                other => return err(format!("unknown delay_model {other:?}")),
            },
            Some(Value::Object(m)) => {
                let v = m
                    .get("fixed")
                    .ok_or_else(|| ScenarioError("delay_model object must have key \"fixed\"".into()))?;
                let text = number_text(v, "delay_model.fixed")?;
                DelayModel::Fixed(
                    ticks_from_decimal(&text)
                        .map_err(|e| ScenarioError(format!("delay_model.fixed: {e}")))?,
                )
            }
            Some(_) => return err("delay_model must be a string or {\"fixed\": d0}"),
        };

        let mutation = match o.get("mutation") {
            None => Mutation::None,
            Some(v) => {
                let s = v
                    .as_str()
                    .ok_or_else(|| ScenarioError("mutation must be a string".into()))?;
                parse_mutation(s).ok_or_else(|| ScenarioError(format!("unknown mutation {s:?}")))?
            }
        };
        let crash_delivery = match o.get("crash_delivery") {
            None => CrashDelivery::Random,
            Some(v) => match v.as_str() {
                Some("random") => CrashDelivery::Random,
                Some("none") => CrashDelivery::None,
                _ => return err("crash_delivery must be \"random\" or \"none\""),
            },
        };
        let lattice = match o.get("lattice") {
            None => LatticeKind::SetUnion,
            Some(v) => {
                let s = v
                    .as_str()
                    .ok_or_else(|| ScenarioError("lattice must be a string".into()))?;
                parse_lattice(s).ok_or_else(|| ScenarioError(format!("unknown lattice {s:?}")))?
            }
        };

        let mut scenario = Scenario {
            params,
            initial_nodes,
            churn,
            workload: Vec::new(),
            delay_model,
            seed,
            horizon,
            mutation,
            crash_delivery,
            lattice,
        };

        scenario.workload = match o.get("workload") {
            None => Vec::new(),
            Some(Value::Array(list)) => {
                let mut items = Vec::new();
                for (i, wv) in list.iter().enumerate() {
                    let wo = as_object(wv, "workload entry")?;
                    items.push(WorkItem {
                        t: ticks_field(wo, "t")
                            .map_err(|e| ScenarioError(format!("workload[{i}]: {e}")))?,
                        node: str_field(wo, "node")?.to_string(),
                        op: str_field(wo, "op")?.to_string(),
                        args: wo.get("args").cloned().unwrap_or_else(|| json!({})),
                    });
                }
                items
            }
            Some(Value::Object(m)) if m.contains_key("random") => {
                let spec = RandomWorkload::from_value(m.get("random").unwrap(), &scenario)?;
                expand_random(&spec, &scenario)
            }
            Some(_) => return err("workload must be an array or {\"random\": {...}}"),
        };

        Ok(scenario)
    }

    /// Renders back to the scenario-file JSON shape. Random workload specs
    /// are rendered as their concrete expansion so a saved scenario replays
    /// identically even if the expander changes.
    pub fn to_json_value(&self) -> Value {
        let churn: Vec<Value> = self
            .churn
            .iter()
            .map(|e| {
                json!({
                    "t": dec_number(&ticks_to_decimal(e.t)),
                    "kind": e.kind.name(),
                    "node": e.node,
                })
            })
            .collect();
        let workload: Vec<Value> = self
            .workload
            .iter()
            .map(|w| {
                json!({
                    "t": dec_number(&ticks_to_decimal(w.t)),
                    "node": w.node,
                    "op": w.op,
                    "args": w.args,
                })
            })
            .collect();
        json!({
            "params": {
                "alpha": rat_json(&self.params.alpha),
                "delta": rat_json(&self.params.delta),
                "gamma": rat_json(&self.params.gamma),
                "beta": rat_json(&self.params.beta),
                "n_min": self.params.n_min,
                "d": dec_number(&ticks_to_decimal(self.params.d_ticks)),
            },
            "initial_nodes": self.initial_nodes,
            "churn": churn,
            "workload": workload,
            "delay_model": self.delay_model.to_json(),
            "seed": self.seed,
            "horizon": dec_number(&ticks_to_decimal(self.horizon)),
            "mutation": mutation_name(self.mutation),
            "crash_delivery": self.crash_delivery.name(),
            "lattice": self.lattice.name(),
        })
    }

    /// Every node name the scenario can mention, initial nodes first, then
    /// entrants in churn order. The simulator uses this order for interning.
    pub fn all_node_names(&self) -> Vec<String> {
        let mut names = self.initial_nodes.clone();
        let mut seen: BTreeSet<&String> = self.initial_nodes.iter().collect();
        for e in &self.churn {
            if e.kind == ChurnKind::Enter && !seen.contains(&e.node) {
                names.push(e.node.clone());
                seen.insert(&e.node);
            }
        }
        names
    }

    pub fn validate(&self) -> ValidationReport {
        validate_scenario(self)
    }
}

/// Spec block for `"workload": {"random": {...}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomWorkload {
    pub ops: u64,
    pub profile: OpProfile,
    pub from: u64,
    pub until: u64,
    pub seed: u64,
}

impl RandomWorkload {
    fn from_value(v: &Value, scenario: &Scenario) -> Result<Self, ScenarioError> {
        let o = as_object(v, "workload.random")?;
        let profile = match o.get("profile") {
            None => OpProfile::StoreCollect,
            Some(v) => {
                let s = v
                    .as_str()
                    .ok_or_else(|| ScenarioError("workload.random.profile must be a string".into()))?;
                OpProfile::parse(s)
                    .ok_or_else(|| ScenarioError(format!("unknown workload profile {s:?}")))?
            }
        };
        let from = if o.contains_key("from") { ticks_field(o, "from")? } else { 0 };
        let until = if o.contains_key("until") {
            ticks_field(o, "until")?
        } else {
            scenario.horizon
        };
        Ok(RandomWorkload {
            ops: u64_field(o, "ops", 0)?,
            profile,
            from,
            until,
            seed: u64_field(o, "seed", scenario.seed)?,
        })
    }
}

/// Expands a random-workload spec into concrete operations, deterministically
/// in the spec seed. Nodes are scheduled only in windows where they can be
/// expected to have joined (initial nodes from time 0, entrants 2D after
/// entering) and not yet departed, with enough per-node spacing that
/// back-to-back operations do not normally overlap.
pub fn expand_random(spec: &RandomWorkload, scenario: &Scenario) -> Vec<WorkItem> {
    let d = scenario.params.d_ticks;
    let names = scenario.all_node_names();
    let mut join_by: BTreeMap<&str, u64> = BTreeMap::new();
    let mut gone_at: BTreeMap<&str, u64> = BTreeMap::new();
    for n in &scenario.initial_nodes {
        join_by.insert(n, 0);
    }
    for e in &scenario.churn {
        match e.kind {
            ChurnKind::Enter => {
                join_by.entry(&e.node).or_insert(e.t.saturating_add(2 * d));
            }
            ChurnKind::Leave | ChurnKind::Crash => {
                let g = gone_at.entry(&e.node).or_insert(e.t);
                *g = (*g).min(e.t);
            }
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut next_free: BTreeMap<&str, u64> = BTreeMap::new();
    let spacing = 5 * d;
    let mut items = Vec::new();
    if spec.until < spec.from {
        return items;
    }
    // Window of legal invocation times for a node, given what it has
    // already been assigned.
    let window = |n: &str, next_free: &BTreeMap<&str, u64>| -> Option<(u64, u64)> {
        let join = *join_by.get(n)?;
        let lo = join.max(spec.from).max(next_free.get(n).copied().unwrap_or(0));
        let hi = spec.until.min(
            gone_at.get(n).map_or(u64::MAX, |g| g.saturating_sub(1)),
        );
        (lo <= hi).then_some((lo, hi))
    };
    for _ in 0..spec.ops {
        let candidates: Vec<&str> = names
            .iter()
            .map(String::as_str)
            .filter(|n| window(n, &next_free).is_some())
            .collect();
        if candidates.is_empty() {
            break;
        }
        let node = candidates[rng.gen_range(0..candidates.len())];
        let (lo, hi) = window(node, &next_free).unwrap();
        // Jitter within a couple of D of the earliest legal time; drawing
        // across the whole window would spend it in a handful of ops.
        let t = rng.gen_range(lo..=hi.min(lo.saturating_add(2 * d)));
        let (op, args) = draw_op(&mut rng, spec.profile, scenario.lattice);
        next_free.insert(node, t.saturating_add(spacing));
        items.push(WorkItem { t, node: node.to_string(), op: op.to_string(), args });
    }
    items.sort_by_key(|w| w.t);
    items
}

fn draw_op(rng: &mut ChaCha12Rng, profile: OpProfile, lattice: LatticeKind) -> (&'static str, Value) {
    match profile {
        OpProfile::StoreCollect => {
            if rng.gen_range(0..2) == 0 {
                ("store", json!({"value": format!("v{}", rng.gen_range(0..100_000u32))}))
            } else {
                ("collect", json!({}))
            }
        }
        OpProfile::Snapshot => {
            if rng.gen_range(0..10) < 6 {
                ("update", json!({"value": rng.gen_range(0..1_000u64)}))
            } else {
                ("scan", json!({}))
            }
        }
        OpProfile::Lattice => match lattice {
            LatticeKind::IntMax => ("propose", json!({"value": rng.gen_range(0..1_000u64)})),
            LatticeKind::SetUnion => {
                let k = rng.gen_range(1..=3usize);
                let vals: Vec<u64> = (0..k).map(|_| rng.gen_range(0..50u64)).collect();
                ("propose", json!({ "values": vals }))
            }
        },
        OpProfile::Simple => match rng.gen_range(0..20) {
            0..=5 => ("writemax", json!({"value": rng.gen_range(0..1_000i64)})),
            6..=10 => ("readmax", json!({})),
            11..=14 => ("addset", json!({"value": rng.gen_range(-50..50i64)})),
            15..=17 => ("readset", json!({})),
            18 => ("check", json!({})),
            _ => ("abort", json!({})),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioViolation {
    pub rule: &'static str,
    pub t: Option<u64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<ScenarioViolation>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "pass": self.pass(),
            "violations": self.violations.iter().map(|v| {
                json!({
                    "rule": v.rule,
                    "t": v.t.map(|t| dec_number(&ticks_to_decimal(t))),
                    "detail": v.detail,
                })
            }).collect::<Vec<_>>(),
        })
    }
}

fn rat_of(n: u64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Step function over time built from the churn schedule: system size (which
/// includes crashed nodes, since crashed nodes never announce departure) and
/// crashed count after the events at each instant.
struct Timeline {
    n0: u64,
    steps: Vec<(u64, u64, u64)>,
}

impl Timeline {
    fn build(s0: usize, churn: &[ChurnEvent]) -> Timeline {
        let mut sorted: Vec<&ChurnEvent> = churn.iter().collect();
        sorted.sort_by_key(|e| e.t);
        let mut steps = Vec::new();
        let mut n = s0 as u64;
        let mut crashed = 0u64;
        let mut i = 0;
        while i < sorted.len() {
            let t = sorted[i].t;
            while i < sorted.len() && sorted[i].t == t {
                match sorted[i].kind {
                    ChurnKind::Enter => n += 1,
                    ChurnKind::Leave => n = n.saturating_sub(1),
                    ChurnKind::Crash => crashed += 1,
                }
                i += 1;
            }
            steps.push((t, n, crashed));
        }
        Timeline { n0: s0 as u64, steps }
    }

    /// (size, crashed) after all events at times ≤ t.
    fn at(&self, t: u64) -> (u64, u64) {
        let idx = self.steps.partition_point(|&(st, _, _)| st <= t);
        if idx == 0 {
            (self.n0, 0)
        } else {
            let (_, n, c) = self.steps[idx - 1];
            (n, c)
        }
    }

    /// (size, crashed) just before the events at t.
    fn before(&self, t: u64) -> (u64, u64) {
        let idx = self.steps.partition_point(|&(st, _, _)| st < t);
        if idx == 0 {
            (self.n0, 0)
        } else {
            let (_, n, c) = self.steps[idx - 1];
            (n, c)
        }
    }
}

fn count_range(sorted: &[u64], lo: u64, hi: u64, lo_inclusive: bool) -> u64 {
    // Events in [lo, hi] or (lo, hi].
    let start = if lo_inclusive {
        sorted.partition_point(|&t| t < lo)
    } else {
        sorted.partition_point(|&t| t <= lo)
    };
    let end = sorted.partition_point(|&t| t <= hi);
    (end - start) as u64
}

/// Checks the churn, minimum-size, and failure-fraction assumptions, plus the
/// derived growth and departure bounds, against the schedule. Returns every
/// violation found; structural problems (unknown nodes, double enters, events
/// out of order with a node's lifecycle) are reported the same way and
/// suppress the assumption checks, which assume a well-formed schedule.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    structural_check(s, &mut report);
    if !report.pass() {
        return report;
    }

    let d = s.params.d_ticks;
    let alpha = &s.params.alpha;
    let delta = &s.params.delta;
    let timeline = Timeline::build(s.initial_nodes.len(), &s.churn);

    let mut churn_times: Vec<u64> = s
        .churn
        .iter()
        .filter(|e| e.kind != ChurnKind::Crash)
        .map(|e| e.t)
        .collect();
    churn_times.sort_unstable();
    let mut leave_times: Vec<u64> = s
        .churn
        .iter()
        .filter(|e| e.kind == ChurnKind::Leave)
        .map(|e| e.t)
        .collect();
    leave_times.sort_unstable();

    let mut event_times: Vec<u64> = s.churn.iter().map(|e| e.t).collect();
    event_times.push(0);
    event_times.sort_unstable();
    event_times.dedup();

    // Churn assumption: Enter+Leave events in [t, t+D] vs alpha * N(t) with
    // N(t) taken just before the window opens. A supremum over real t is
    // always attained at one of the event times, because sliding the window
    // left from an event only loses events while N stays constant.
    for &t in &event_times {
        let (n_pre, _) = timeline.before(t);
        let count = count_range(&churn_times, t, t.saturating_add(d), true);
        let bound = alpha * rat_of(n_pre);
        if rat_of(count) > bound {
            report.violations.push(ScenarioViolation {
                rule: "churn-window",
                t: Some(t),
                detail: format!(
                    "{count} enter/leave events in [{}, {}] but alpha*N = {} with N = {n_pre}",
                    ticks_to_decimal(t),
                    ticks_to_decimal(t.saturating_add(d)),
                    rat_to_string(&bound),
                ),
            });
        }
    }

    // Minimum size and failure fraction, after the events at each instant.
    for &t in &event_times {
        let (n, crashed) = timeline.at(t);
        if n < s.params.n_min {
            report.violations.push(ScenarioViolation {
                rule: "min-size",
                t: Some(t),
                detail: format!("system size {n} below n_min = {}", s.params.n_min),
            });
        }
        let crash_bound = delta * rat_of(n);
        if rat_of(crashed) > crash_bound {
            report.violations.push(ScenarioViolation {
                rule: "crash-fraction",
                t: Some(t),
                detail: format!(
                    "{crashed} crashed nodes but delta*N = {} with N = {n}",
                    rat_to_string(&crash_bound),
                ),
            });
        }
    }

    // Derived sanity bounds for i = 1..3: size growth and departure counts
    // over windows of i*D. Anchors include event times shifted left by i*D
    // so a burst is compared against the size before it, not after.
    let one = Rat::one();
    for i in 1..=3u64 {
        let mut anchors: Vec<u64> = Vec::with_capacity(event_times.len() * 2);
        for &t in &event_times {
            anchors.push(t);
            anchors.push(t.saturating_sub(i * d));
        }
        anchors.sort_unstable();
        anchors.dedup();

        let mut growth = one.clone();
        let mut survive = one.clone();
        for _ in 0..i {
            growth *= &one + alpha;
            survive *= &one - alpha;
        }
        let leave_factor = &one - &survive;

        for &t in &anchors {
            let (n_t, _) = timeline.at(t);
            let end = t.saturating_add(i * d);
            let (n_end, _) = timeline.at(end);
            let bound = &growth * rat_of(n_t);
            if rat_of(n_end) > bound {
                report.violations.push(ScenarioViolation {
                    rule: "growth-bound",
                    t: Some(t),
                    detail: format!(
                        "N({}) = {n_end} exceeds (1+alpha)^{i} * N({}) = {} with N = {n_t}",
                        ticks_to_decimal(end),
                        ticks_to_decimal(t),
                        rat_to_string(&bound),
                    ),
                });
            }
            let leaves = count_range(&leave_times, t, end, false);
            let bound = &leave_factor * rat_of(n_t);
            if rat_of(leaves) > bound {
                report.violations.push(ScenarioViolation {
                    rule: "leave-bound",
                    t: Some(t),
                    detail: format!(
                        "{leaves} leaves in ({}, {}] but (1-(1-alpha)^{i})*N = {} with N = {n_t}",
                        ticks_to_decimal(t),
                        ticks_to_decimal(end),
                        rat_to_string(&bound),
                    ),
                });
            }
        }
    }

    report
}

fn structural_check(s: &Scenario, report: &mut ValidationReport) {
    let mut push = |rule: &'static str, t: Option<u64>, detail: String| {
        report.violations.push(ScenarioViolation { rule, t, detail });
    };

    if s.initial_nodes.is_empty() {
        push("structure", None, "initial_nodes is empty".into());
    }
    let mut seen = BTreeSet::new();
    for n in &s.initial_nodes {
        if !seen.insert(n) {
            push("structure", None, format!("duplicate initial node {n:?}"));
        }
    }

    if s.params.d_ticks == 0 {
        push("params", None, "d must be positive".into());
    }
    if s.params.n_min == 0 {
        push("params", None, "n_min must be at least 1".into());
    }
    let zero = Rat::zero();
    let one = Rat::one();
    if s.params.alpha < zero {
        push("params", None, "alpha must be nonnegative".into());
    }
    if s.params.delta <= zero || s.params.delta > one {
        push("params", None, "delta must be in (0, 1]".into());
    }
    if s.params.gamma <= zero || s.params.gamma > one {
        push("params", None, "gamma must be in (0, 1]".into());
    }
    if s.params.beta <= zero || s.params.beta > one {
        push("params", None, "beta must be in (0, 1]".into());
    }
    if let DelayModel::Fixed(t) = s.delay_model {
        if t == 0 || t > s.params.d_ticks {
            push(
                "structure",
                None,
                format!("fixed delay {} outside (0, D]", ticks_to_decimal(t)),
            );
        }
    }

    // Per-node lifecycle: at most one enter (and only for non-initial
    // nodes), presence before leave/crash, at most one terminal event.
    let initial: BTreeSet<&str> = s.initial_nodes.iter().map(String::as_str).collect();
    let mut sorted: Vec<&ChurnEvent> = s.churn.iter().collect();
    sorted.sort_by_key(|e| e.t);
    let mut entered: BTreeMap<&str, u64> = BTreeMap::new();
    let mut terminal: BTreeMap<&str, &'static str> = BTreeMap::new();
    for e in &sorted {
        let name = e.node.as_str();
        match e.kind {
            ChurnKind::Enter => {
                if initial.contains(name) {
                    push("structure", Some(e.t), format!("{name:?} is initial and cannot enter"));
                } else if entered.contains_key(name) {
                    push("structure", Some(e.t), format!("{name:?} enters twice"));
                } else {
                    entered.insert(name, e.t);
                }
                if terminal.contains_key(name) {
                    push("structure", Some(e.t), format!("{name:?} enters after departing"));
                }
            }
            ChurnKind::Leave | ChurnKind::Crash => {
                let present = initial.contains(name) || entered.contains_key(name);
                if !present {
                    push(
                        "structure",
                        Some(e.t),
                        format!("{name:?} {}s without entering", e.kind.name()),
                    );
                }
                if let Some(prev) = terminal.get(name) {
                    push(
                        "structure",
                        Some(e.t),
                        format!("{name:?} {}s after already {prev}ing", e.kind.name()),
                    );
                } else {
                    terminal.insert(name, if e.kind == ChurnKind::Leave { "leave" } else { "crash" });
                }
            }
        }
    }

    let known: BTreeSet<String> = s.all_node_names().into_iter().collect();
    for (i, w) in s.workload.iter().enumerate() {
        if !known.contains(&w.node) {
            push(
                "structure",
                Some(w.t),
                format!("workload[{i}] targets unknown node {:?}", w.node),
            );
        }
        if let Err(e) = parse_op(&w.op, &w.args, s.lattice) {
            push("structure", Some(w.t), format!("workload[{i}]: {e}"));
        }
        if w.t > s.horizon {
            push(
                "structure",
                Some(w.t),
                format!("workload[{i}] scheduled after the horizon"),
            );
        }
    }
}
