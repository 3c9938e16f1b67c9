//! Frames exchanged over `/v1/session`, one JSON object per text frame.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::engine::{EventBody, HistoryEvent, Status};
use crate::model::StatePath;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Observer,
    Controller,
}

/// First frame a client sends.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume_from: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Start,
    Pause,
    Resume,
    Stop,
    StepOver,
    StepInto,
    StepOut,
    StepBack,
    RunFrom,
    Subscribe,
    FetchMachine,
    FetchHistory,
    SetGlobal,
}

impl Verb {
    pub const ALL: [Verb; 13] = [
        Verb::Start,
        Verb::Pause,
        Verb::Resume,
        Verb::Stop,
        Verb::StepOver,
        Verb::StepInto,
        Verb::StepOut,
        Verb::StepBack,
        Verb::RunFrom,
        Verb::Subscribe,
        Verb::FetchMachine,
        Verb::FetchHistory,
        Verb::SetGlobal,
    ];

    /// Whether the verb changes engine state and therefore needs the controller role.
    pub fn is_mutating(self) -> bool {
        !matches!(self, Verb::Subscribe | Verb::FetchMachine | Verb::FetchHistory)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    pub req_id: u64,
    pub verb: Verb,
    #[serde(default)]
    pub args: Map<String, Json>,
}

impl CommandMessage {
    pub fn new(req_id: u64, verb: Verb) -> Self {
        CommandMessage { req_id, verb, args: Map::new() }
    }

    pub fn arg(mut self, key: &str, value: impl Into<Json>) -> Self {
        self.args.insert(key.to_string(), value.into());
        self
    }
}

/// The answer to a command; the handshake is answered with `req_id` 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub req_id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "present")]
    pub result: Option<Json>,
}

/// Keeps an explicit `null` distinct from an absent field.
fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Json>, D::Error> {
    Json::deserialize(d).map(Some)
}

impl Ack {
    pub fn ok(req_id: u64) -> Self {
        Ack { req_id, ok: true, error: None, message: None, result: None }
    }

    pub fn err(req_id: u64, code: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        Ack { req_id, ok: false, error: Some(code.to_string()), message: (!message.is_empty()).then_some(message), result: None }
    }

    pub fn with_result(mut self, result: Json) -> Self {
        self.result = Some(result);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Status,
    Entered,
    Exited,
    SteppedBack,
    Ports,
    Log,
    MachineDigest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventMessage {
    pub seq: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<String>>,
    #[serde(default)]
    pub payload: Map<String, Json>,
}

fn ids(p: &StatePath) -> Vec<String> {
    p.segments().iter().map(|s| s.to_string()).collect()
}

fn obj(pairs: impl IntoIterator<Item = (&'static str, Json)>) -> Map<String, Json> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn values(m: &crate::value::ValueMap) -> Json {
    Json::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
}

pub fn status_payload(s: &Status) -> Map<String, Json> {
    match serde_json::to_value(s).expect("status serializes") {
        Json::Object(m) => m,
        _ => unreachable!("status is a tagged enum"),
    }
}

impl EventMessage {
    /// Wire form of an engine event. History events without an event kind of their
    /// own (`Preempted`, `ScriptError`) travel as `log` with a `history_event` field.
    pub fn from_engine(seq: u64, body: &EventBody) -> EventMessage {
        let (kind, path, payload) = match body {
            EventBody::Status(s) => (EventKind::Status, None, status_payload(s)),
            EventBody::Ports { path, inputs, outputs } => {
                let mut p = Map::new();
                if let Some(i) = inputs {
                    p.insert("inputs".into(), values(i));
                }
                if let Some(o) = outputs {
                    p.insert("outputs".into(), values(o));
                }
                (EventKind::Ports, Some(ids(path)), p)
            }
            EventBody::Log { path, level, message } => (
                EventKind::Log,
                Some(ids(path)),
                obj([("level", level.as_str().into()), ("message", message.as_str().into())]),
            ),
            EventBody::History(h) => {
                let (kind, payload) = match &h.event {
                    HistoryEvent::Entered => (EventKind::Entered, Map::new()),
                    HistoryEvent::Exited { outcome } => (EventKind::Exited, obj([("outcome_name", outcome.as_str().into())])),
                    HistoryEvent::SteppedBack => (EventKind::SteppedBack, Map::new()),
                    HistoryEvent::Preempted => (
                        EventKind::Log,
                        obj([("level", "info".into()), ("message", "preempted".into()), ("history_event", "Preempted".into())]),
                    ),
                    HistoryEvent::ScriptError { detail } => (
                        EventKind::Log,
                        obj([("level", "error".into()), ("message", detail.as_str().into()), ("history_event", "ScriptError".into())]),
                    ),
                };
                (kind, Some(ids(&h.path)), payload)
            }
        };
        EventMessage { seq, kind, path, payload }
    }

    pub fn digest(seq: u64, digest: &str) -> EventMessage {
        EventMessage { seq, kind: EventKind::MachineDigest, path: None, payload: obj([("sha256", digest.into())]) }
    }

    pub fn status(seq: u64, status: &Status) -> EventMessage {
        EventMessage { seq, kind: EventKind::Status, path: None, payload: status_payload(status) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClientFrame {
    Handshake(Handshake),
    Command(CommandMessage),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ServerFrame {
    Ack(Ack),
    Event(EventMessage),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("MALFORMED_FRAME: {0}")]
pub struct MalformedFrame(pub String);

impl MalformedFrame {
    pub fn code(&self) -> &'static str {
        "MALFORMED_FRAME"
    }
}

fn object(text: &str) -> Result<Map<String, Json>, MalformedFrame> {
    match serde_json::from_str(text).map_err(|e| MalformedFrame(e.to_string()))? {
        Json::Object(m) => Ok(m),
        _ => Err(MalformedFrame("frame is not an object".into())),
    }
}

fn typed<T: serde::de::DeserializeOwned>(m: Map<String, Json>) -> Result<T, MalformedFrame> {
    serde_json::from_value(Json::Object(m)).map_err(|e| MalformedFrame(e.to_string()))
}

pub fn encode<T: Serialize>(frame: &T) -> String {
    serde_json::to_string(frame).expect("frames serialize")
}

impl ClientFrame {
    pub fn encode(&self) -> String {
        match self {
            ClientFrame::Handshake(h) => encode(h),
            ClientFrame::Command(c) => encode(c),
        }
    }

    pub fn decode(text: &str) -> Result<ClientFrame, MalformedFrame> {
        let m = object(text)?;
        if m.contains_key("verb") {
            typed(m).map(ClientFrame::Command)
        } else if m.contains_key("role") {
            typed(m).map(ClientFrame::Handshake)
        } else {
            Err(MalformedFrame("neither a command nor a handshake".into()))
        }
    }

    /// The `req_id` of a frame that failed to decode, when one can be made out.
    pub fn salvage_req_id(text: &str) -> u64 {
        object(text).ok().and_then(|m| m.get("req_id").and_then(Json::as_u64)).unwrap_or(0)
    }
}

impl ServerFrame {
    pub fn encode(&self) -> String {
        match self {
            ServerFrame::Ack(a) => encode(a),
            ServerFrame::Event(e) => encode(e),
        }
    }

    pub fn decode(text: &str) -> Result<ServerFrame, MalformedFrame> {
        let m = object(text)?;
        if m.contains_key("seq") {
            typed(m).map(ServerFrame::Event)
        } else if m.contains_key("req_id") {
            typed(m).map(ServerFrame::Ack)
        } else {
            Err(MalformedFrame("neither an event nor an ack".into()))
        }
    }
}
