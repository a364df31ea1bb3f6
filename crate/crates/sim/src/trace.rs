//! Trace records: the JSONL serialization of a run.
//!
//! One record per line, fields {t, node, kind, payload}, keys emitted in
//! sorted order so identical runs produce byte-identical files. Line 1 is a
//! `meta` record describing the scenario; all later records appear in
//! simulation order (time, then step sequence), which is the order checkers
//! rely on for tie-breaking.

use crate::time::{ticks_from_decimal, ticks_to_decimal};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("trace line {line}: {reason}")]
pub struct TraceParseError {
    pub line: usize,
    pub reason: String,
}

/// Run-level header, rendered as the payload of the first record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Meta {
    pub version: u64,
    pub alpha: String,
    pub delta: String,
    pub gamma: String,
    pub beta: String,
    pub n_min: u64,
    pub d: String,
    pub initial_nodes: Vec<String>,
    pub delay_model: String,
    pub seed: u64,
    pub horizon: String,
    pub mutation: String,
    pub crash_delivery: String,
    pub lattice: String,
}

/// Message summary carried by send records. View-bearing store messages
/// carry the per-node sequence numbers of the broadcast view: that is the
/// information the broadcast propagates, and what the offline checkers need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MsgInfo {
    Enter { node: String },
    EnterEcho { dest: String, is_joined: bool },
    Join { node: String },
    JoinEcho { node: String },
    Leave { node: String },
    LeaveEcho { node: String },
    Store { tag: u64, view: BTreeMap<String, u64> },
    StoreAck { tag: u64, dest: String },
    CollectQuery { tag: u64 },
    CollectReply { tag: u64, dest: String },
    StoreEcho,
}

impl MsgInfo {
    pub fn kind(&self) -> &'static str {
        match self {
            MsgInfo::Enter { .. } => "enter",
            MsgInfo::EnterEcho { .. } => "enter-echo",
            MsgInfo::Join { .. } => "join",
            MsgInfo::JoinEcho { .. } => "join-echo",
            MsgInfo::Leave { .. } => "leave",
            MsgInfo::LeaveEcho { .. } => "leave-echo",
            MsgInfo::Store { .. } => "store",
            MsgInfo::StoreAck { .. } => "store-ack",
            MsgInfo::CollectQuery { .. } => "collect-query",
            MsgInfo::CollectReply { .. } => "collect-reply",
            MsgInfo::StoreEcho => "store-echo",
        }
    }

    pub fn tag(&self) -> Option<u64> {
        match self {
            MsgInfo::Store { tag, .. }
            | MsgInfo::StoreAck { tag, .. }
            | MsgInfo::CollectQuery { tag }
            | MsgInfo::CollectReply { tag, .. } => Some(*tag),
            _ => None,
        }
    }
}

/// Operation result payload of a response record.
#[derive(Debug, Clone, PartialEq)]
pub enum RespData {
    Store { sqno: u64 },
    Collect { view: BTreeMap<String, u64> },
    Update,
    Scan { view: BTreeMap<String, Value> },
    Propose { value: Value },
    WriteMax,
    ReadMax { value: i64 },
    Abort,
    Check { value: bool },
    AddSet,
    ReadSet { values: Vec<i64> },
}

impl RespData {
    pub fn op(&self) -> &'static str {
        match self {
            RespData::Store { .. } => "store",
            RespData::Collect { .. } => "collect",
            RespData::Update => "update",
            RespData::Scan { .. } => "scan",
            RespData::Propose { .. } => "propose",
            RespData::WriteMax => "writemax",
            RespData::ReadMax { .. } => "readmax",
            RespData::Abort => "abort",
            RespData::Check { .. } => "check",
            RespData::AddSet => "addset",
            RespData::ReadSet { .. } => "readset",
        }
    }
}

/// Everything a record can say, by kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Meta(Box<Meta>),
    Enter,
    Joined,
    Leave,
    Crash,
    Send { msg: MsgInfo, truncated: bool },
    Receive { from: String, msg: String, tag: Option<u64> },
    Invoke { op: String, args: Value, sqno: Option<u64> },
    Response(RespData),
    PhaseStart { tag: u64, phase: String, view: Option<BTreeMap<String, u64>> },
    PhaseEnd { tag: u64, phase: String },
    SubInvoke { sub: u64, kind: String, purpose: String, sqno: Option<u64> },
    SubResponse { sub: u64, ack_sqno: Option<u64>, view: Option<BTreeMap<String, u64>> },
    Scan {
        ssqno: u64,
        embedded: bool,
        mode: String,
        source: Option<String>,
        source_ssqno: Option<u64>,
        rounds: u64,
        opening_sub: u64,
        view: BTreeMap<String, Value>,
        usqnos: Option<BTreeMap<String, u64>>,
    },
    State {
        joined: bool,
        changes: Vec<(String, String)>,
        lview: BTreeMap<String, u64>,
    },
    Skip { op: String, reason: String },
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::Meta(_) => "meta",
            Body::Enter => "enter",
            Body::Joined => "joined",
            Body::Leave => "leave",
            Body::Crash => "crash",
            Body::Send { .. } => "send",
            Body::Receive { .. } => "receive",
            Body::Invoke { .. } => "invoke",
            Body::Response(_) => "response",
            Body::PhaseStart { .. } => "phase_start",
            Body::PhaseEnd { .. } => "phase_end",
            Body::SubInvoke { .. } => "sub_invoke",
            Body::SubResponse { .. } => "sub_response",
            Body::Scan { .. } => "scan",
            Body::State { .. } => "state",
            Body::Skip { .. } => "skip",
        }
    }
}

/// One trace record. `node` is None only for the meta record.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: u64,
    pub node: Option<String>,
    pub body: Body,
}

/// A completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<Record>,
}

impl Trace {
    pub fn meta(&self) -> &Meta {
        match &self.records.first().expect("trace has a meta record").body {
            Body::Meta(m) => m,
            other => panic!("first record is {}, not meta", other.kind()),
        }
    }

    pub fn d_ticks(&self) -> u64 {
        ticks_from_decimal(&self.meta().d).expect("meta.d was rendered from ticks")
    }

    pub fn horizon_ticks(&self) -> u64 {
        ticks_from_decimal(&self.meta().horizon).expect("meta.horizon was rendered from ticks")
    }

    /// 1-based JSONL line number of a record index, for violation witnesses.
    pub fn line_of(&self, idx: usize) -> usize {
        idx + 1
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&render_line(r));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceParseError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(parse_line(line).map_err(|reason| TraceParseError {
                line: i + 1,
                reason,
            })?);
        }
        if records.is_empty() {
            return Err(TraceParseError { line: 1, reason: "empty trace".into() });
        }
        Ok(Trace { records })
    }
}

fn num(t: u64) -> Value {
    ticks_to_decimal(t)
        .parse::<serde_json::Number>()
        .map(Value::Number)
        .expect("decimal renders parse as JSON numbers")
}

fn sqno_map(m: &BTreeMap<String, u64>) -> Value {
    Value::Object(m.iter().map(|(k, v)| (k.clone(), json!(v))).collect())
}

fn render_payload(body: &Body) -> Value {
    match body {
        Body::Meta(m) => json!({
            "version": m.version,
            "params": {
                "alpha": m.alpha, "delta": m.delta, "gamma": m.gamma, "beta": m.beta,
                "n_min": m.n_min, "d": m.d,
            },
            "initial_nodes": m.initial_nodes,
            "delay_model": m.delay_model,
            "seed": m.seed,
            "horizon": m.horizon,
            "mutation": m.mutation,
            "crash_delivery": m.crash_delivery,
            "lattice": m.lattice,
        }),
        Body::Enter | Body::Joined | Body::Leave | Body::Crash => json!({}),
        Body::Send { msg, truncated } => {
            let mut o = match msg {
                MsgInfo::Enter { node } => json!({"msg": "enter", "node": node}),
                MsgInfo::EnterEcho { dest, is_joined } => {
                    json!({"msg": "enter-echo", "dest": dest, "is_joined": is_joined})
                }
                MsgInfo::Join { node } => json!({"msg": "join", "node": node}),
                MsgInfo::JoinEcho { node } => json!({"msg": "join-echo", "node": node}),
                MsgInfo::Leave { node } => json!({"msg": "leave", "node": node}),
                MsgInfo::LeaveEcho { node } => json!({"msg": "leave-echo", "node": node}),
                MsgInfo::Store { tag, view } => {
                    json!({"msg": "store", "tag": tag, "view": sqno_map(view)})
                }
                MsgInfo::StoreAck { tag, dest } => {
                    json!({"msg": "store-ack", "tag": tag, "dest": dest})
                }
                MsgInfo::CollectQuery { tag } => json!({"msg": "collect-query", "tag": tag}),
                MsgInfo::CollectReply { tag, dest } => {
                    json!({"msg": "collect-reply", "tag": tag, "dest": dest})
                }
                MsgInfo::StoreEcho => json!({"msg": "store-echo"}),
            };
            if *truncated {
                o.as_object_mut().unwrap().insert("truncated".into(), json!(true));
            }
            o
        }
        Body::Receive { from, msg, tag } => {
            let mut o = json!({"from": from, "msg": msg});
            if let Some(tag) = tag {
                o.as_object_mut().unwrap().insert("tag".into(), json!(tag));
            }
            o
        }
        Body::Invoke { op, args, sqno } => {
            let mut o = json!({"op": op, "args": args});
            if let Some(s) = sqno {
                o.as_object_mut().unwrap().insert("sqno".into(), json!(s));
            }
            o
        }
        Body::Response(data) => match data {
            RespData::Store { sqno } => json!({"op": "store", "sqno": sqno}),
            RespData::Collect { view } => json!({"op": "collect", "view": sqno_map(view)}),
            RespData::Update => json!({"op": "update"}),
            RespData::Scan { view } => json!({"op": "scan", "view": view}),
            RespData::Propose { value } => json!({"op": "propose", "value": value}),
            RespData::WriteMax => json!({"op": "writemax"}),
            RespData::ReadMax { value } => json!({"op": "readmax", "value": value}),
            RespData::Abort => json!({"op": "abort"}),
            RespData::Check { value } => json!({"op": "check", "value": value}),
            RespData::AddSet => json!({"op": "addset"}),
            RespData::ReadSet { values } => json!({"op": "readset", "values": values}),
        },
        Body::PhaseStart { tag, phase, view } => {
            let mut o = json!({"tag": tag, "phase": phase});
            if let Some(v) = view {
                o.as_object_mut().unwrap().insert("view".into(), sqno_map(v));
            }
            o
        }
        Body::PhaseEnd { tag, phase } => json!({"tag": tag, "phase": phase}),
        Body::SubInvoke { sub, kind, purpose, sqno } => {
            let mut o = json!({"sub": sub, "kind": kind, "purpose": purpose});
            if let Some(s) = sqno {
                o.as_object_mut().unwrap().insert("sqno".into(), json!(s));
            }
            o
        }
        Body::SubResponse { sub, ack_sqno, view } => {
            let mut o = json!({"sub": sub});
            if let Some(s) = ack_sqno {
                o.as_object_mut().unwrap().insert("ack_sqno".into(), json!(s));
            }
            if let Some(v) = view {
                o.as_object_mut().unwrap().insert("view".into(), sqno_map(v));
            }
            o
        }
        Body::Scan {
            ssqno, embedded, mode, source, source_ssqno, rounds, opening_sub, view, usqnos,
        } => {
            let mut o = json!({
                "ssqno": ssqno,
                "embedded": embedded,
                "mode": mode,
                "rounds": rounds,
                "opening_sub": opening_sub,
                "view": view,
            });
            let obj = o.as_object_mut().unwrap();
            if let Some(s) = source {
                obj.insert("source".into(), json!(s));
            }
            if let Some(s) = source_ssqno {
                obj.insert("source_ssqno".into(), json!(s));
            }
            if let Some(u) = usqnos {
                obj.insert("usqnos".into(), sqno_map(u));
            }
            o
        }
        Body::State { joined, changes, lview } => {
            let mut o = json!({});
            let obj = o.as_object_mut().unwrap();
            if *joined {
                obj.insert("joined".into(), json!(true));
            }
            if !changes.is_empty() {
                let list: Vec<Value> =
                    changes.iter().map(|(k, n)| json!([k, n])).collect();
                obj.insert("changes".into(), Value::Array(list));
            }
            if !lview.is_empty() {
                obj.insert("lview".into(), sqno_map(lview));
            }
            o
        }
        Body::Skip { op, reason } => json!({"op": op, "reason": reason}),
    }
}

fn render_line(r: &Record) -> String {
    let v = json!({
        "t": num(r.t),
        "node": r.node,
        "kind": r.body.kind(),
        "payload": render_payload(&r.body),
    });
    serde_json::to_string(&v).expect("records serialize")
}

// Field extraction helpers for parsing.

fn field<'a>(o: &'a Map<String, Value>, k: &str) -> Result<&'a Value, String> {
    o.get(k).ok_or_else(|| format!("missing field {k:?}"))
}

fn as_obj(v: &Value) -> Result<&Map<String, Value>, String> {
    v.as_object().ok_or_else(|| "expected object".to_string())
}

fn get_u64(o: &Map<String, Value>, k: &str) -> Result<u64, String> {
    field(o, k)?.as_u64().ok_or_else(|| format!("field {k:?} is not a u64"))
}

fn get_opt_u64(o: &Map<String, Value>, k: &str) -> Result<Option<u64>, String> {
    match o.get(k) {
        None => Ok(None),
        Some(v) => v.as_u64().map(Some).ok_or_else(|| format!("field {k:?} is not a u64")),
    }
}

fn get_str(o: &Map<String, Value>, k: &str) -> Result<String, String> {
    field(o, k)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| format!("field {k:?} is not a string"))
}

fn get_bool(o: &Map<String, Value>, k: &str) -> Result<bool, String> {
    field(o, k)?.as_bool().ok_or_else(|| format!("field {k:?} is not a bool"))
}

fn get_sqno_map(v: &Value) -> Result<BTreeMap<String, u64>, String> {
    let mut out = BTreeMap::new();
    for (k, v) in as_obj(v)? {
        out.insert(
            k.clone(),
            v.as_u64().ok_or_else(|| format!("view entry {k:?} is not a u64"))?,
        );
    }
    Ok(out)
}

fn get_opt_sqno_map(
    o: &Map<String, Value>,
    k: &str,
) -> Result<Option<BTreeMap<String, u64>>, String> {
    o.get(k).map(get_sqno_map).transpose()
}

fn get_value_map(v: &Value) -> Result<BTreeMap<String, Value>, String> {
    Ok(as_obj(v)?.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
}

fn parse_payload(kind: &str, p: &Value) -> Result<Body, String> {
    let o = as_obj(p)?;
    Ok(match kind {
        "meta" => {
            let params = as_obj(field(o, "params")?)?;
            Body::Meta(Box::new(Meta {
                version: get_u64(o, "version")?,
                alpha: number_string(params, "alpha")?,
                delta: number_string(params, "delta")?,
                gamma: number_string(params, "gamma")?,
                beta: number_string(params, "beta")?,
                n_min: get_u64(params, "n_min")?,
                d: number_string(params, "d")?,
                initial_nodes: field(o, "initial_nodes")?
                    .as_array()
                    .ok_or("initial_nodes is not an array")?
                    .iter()
                    .map(|v| v.as_str().map(str::to_string).ok_or("node name is not a string"))
                    .collect::<Result<_, _>>()?,
                delay_model: get_str(o, "delay_model")?,
                seed: get_u64(o, "seed")?,
                horizon: number_string(o, "horizon")?,
                mutation: get_str(o, "mutation")?,
                crash_delivery: get_str(o, "crash_delivery")?,
                lattice: get_str(o, "lattice")?,
            }))
        }
        "enter" => Body::Enter,
        "joined" => Body::Joined,
        "leave" => Body::Leave,
        "crash" => Body::Crash,
        "send" => {
            let truncated = o.get("truncated").and_then(Value::as_bool).unwrap_or(false);
            let msg = match get_str(o, "msg")?.as_str() {
                "enter" => MsgInfo::Enter { node: get_str(o, "node")? },
                "enter-echo" => MsgInfo::EnterEcho {
                    dest: get_str(o, "dest")?,
                    is_joined: get_bool(o, "is_joined")?,
                },
                "join" => MsgInfo::Join { node: get_str(o, "node")? },
                "join-echo" => MsgInfo::JoinEcho { node: get_str(o, "node")? },
                "leave" => MsgInfo::Leave { node: get_str(o, "node")? },
                "leave-echo" => MsgInfo::LeaveEcho { node: get_str(o, "node")? },
                "store" => MsgInfo::Store {
                    tag: get_u64(o, "tag")?,
                    view: get_sqno_map(field(o, "view")?)?,
                },
                "store-ack" => MsgInfo::StoreAck {
                    tag: get_u64(o, "tag")?,
                    dest: get_str(o, "dest")?,
                },
                "collect-query" => MsgInfo::CollectQuery { tag: get_u64(o, "tag")? },
                "collect-reply" => MsgInfo::CollectReply {
                    tag: get_u64(o, "tag")?,
                    dest: get_str(o, "dest")?,
                },
                "store-echo" => MsgInfo::StoreEcho,
                other => return Err(format!("unknown message kind {other:?}")),
            };
            Body::Send { msg, truncated }
        }
        "receive" => Body::Receive {
            from: get_str(o, "from")?,
            msg: get_str(o, "msg")?,
            tag: get_opt_u64(o, "tag")?,
        },
        "invoke" => Body::Invoke {
            op: get_str(o, "op")?,
            args: field(o, "args")?.clone(),
            sqno: get_opt_u64(o, "sqno")?,
        },
        "response" => {
            let data = match get_str(o, "op")?.as_str() {
                "store" => RespData::Store { sqno: get_u64(o, "sqno")? },
                "collect" => RespData::Collect { view: get_sqno_map(field(o, "view")?)? },
                "update" => RespData::Update,
                "scan" => RespData::Scan { view: get_value_map(field(o, "view")?)? },
                "propose" => RespData::Propose { value: field(o, "value")?.clone() },
                "writemax" => RespData::WriteMax,
                "readmax" => RespData::ReadMax {
                    value: field(o, "value")?.as_i64().ok_or("readmax value is not an i64")?,
                },
                "abort" => RespData::Abort,
                "check" => RespData::Check { value: get_bool(o, "value")? },
                "addset" => RespData::AddSet,
                "readset" => RespData::ReadSet {
                    values: field(o, "values")?
                        .as_array()
                        .ok_or("readset values is not an array")?
                        .iter()
                        .map(|v| v.as_i64().ok_or("readset element is not an i64"))
                        .collect::<Result<_, _>>()?,
                },
                other => return Err(format!("unknown response op {other:?}")),
            };
            Body::Response(data)
        }
        "phase_start" => Body::PhaseStart {
            tag: get_u64(o, "tag")?,
            phase: get_str(o, "phase")?,
            view: get_opt_sqno_map(o, "view")?,
        },
        "phase_end" => Body::PhaseEnd { tag: get_u64(o, "tag")?, phase: get_str(o, "phase")? },
        "sub_invoke" => Body::SubInvoke {
            sub: get_u64(o, "sub")?,
            kind: get_str(o, "kind")?,
            purpose: get_str(o, "purpose")?,
            sqno: get_opt_u64(o, "sqno")?,
        },
        "sub_response" => Body::SubResponse {
            sub: get_u64(o, "sub")?,
            ack_sqno: get_opt_u64(o, "ack_sqno")?,
            view: get_opt_sqno_map(o, "view")?,
        },
        "scan" => Body::Scan {
            ssqno: get_u64(o, "ssqno")?,
            embedded: get_bool(o, "embedded")?,
            mode: get_str(o, "mode")?,
            source: o.get("source").and_then(Value::as_str).map(str::to_string),
            source_ssqno: get_opt_u64(o, "source_ssqno")?,
            rounds: get_u64(o, "rounds")?,
            opening_sub: get_u64(o, "opening_sub")?,
            view: get_value_map(field(o, "view")?)?,
            usqnos: get_opt_sqno_map(o, "usqnos")?,
        },
        "state" => Body::State {
            joined: o.get("joined").and_then(Value::as_bool).unwrap_or(false),
            changes: match o.get("changes") {
                None => Vec::new(),
                Some(v) => v
                    .as_array()
                    .ok_or("changes is not an array")?
                    .iter()
                    .map(|pair| {
                        let a = pair.as_array().filter(|a| a.len() == 2);
                        let a = a.ok_or("change entry is not a pair")?;
                        Ok((
                            a[0].as_str().ok_or("change kind is not a string")?.to_string(),
                            a[1].as_str().ok_or("change node is not a string")?.to_string(),
                        ))
                    })
                    .collect::<Result<_, String>>()?,
            },
            lview: match o.get("lview") {
                None => BTreeMap::new(),
                Some(v) => get_sqno_map(v)?,
            },
        },
        "skip" => Body::Skip { op: get_str(o, "op")?, reason: get_str(o, "reason")? },
        other => return Err(format!("unknown record kind {other:?}")),
    })
}

/// Reads a field that is a JSON number (or numeric string) as its exact
/// decimal text.
fn number_string(o: &Map<String, Value>, k: &str) -> Result<String, String> {
    match field(o, k)? {
        Value::Number(n) => Ok(n.to_string()),
        Value::String(s) => Ok(s.clone()),
        _ => Err(format!("field {k:?} is not a number")),
    }
}

fn parse_line(line: &str) -> Result<Record, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let o = as_obj(&v)?;
    let t_val = field(o, "t")?;
    let t_str = match t_val {
        Value::Number(n) => n.to_string(),
        _ => return Err("field \"t\" is not a number".into()),
    };
    let t = ticks_from_decimal(&t_str).map_err(|e| e.to_string())?;
    let node = match field(o, "node")? {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        _ => return Err("field \"node\" is not a string or null".into()),
    };
    let kind = get_str(o, "kind")?;
    let body = parse_payload(&kind, field(o, "payload")?)?;
    Ok(Record { t, node, body })
}
