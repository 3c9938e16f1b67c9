//! Execution history and the event bus that numbers everything the engine reports.

use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use crossbeam_channel::{Receiver, Sender};
use serde::Serialize;

use super::{EngineError, Status};
use crate::model::StatePath;
use crate::value::ValueMap;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum HistoryEvent {
    Entered,
    Exited { outcome: String },
    ScriptError { detail: String },
    Preempted,
    SteppedBack,
}

impl HistoryEvent {
    pub fn name(&self) -> &'static str {
        match self {
            HistoryEvent::Entered => "Entered",
            HistoryEvent::Exited { .. } => "Exited",
            HistoryEvent::ScriptError { .. } => "ScriptError",
            HistoryEvent::Preempted => "Preempted",
            HistoryEvent::SteppedBack => "SteppedBack",
        }
    }
}

/// Deep copy of the data around an event.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Context {
    pub inputs: ValueMap,
    pub outputs: ValueMap,
    pub globals_delta: ValueMap,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub seq: u64,
    pub wallclock: DateTime<Utc>,
    pub event: HistoryEvent,
    pub path: StatePath,
    pub context: Context,
}

impl HistoryEntry {
    /// `SEQ EVENT path [detail]`, the machine-readable run line.
    pub fn line(&self) -> String {
        let head = format!("{} {} {}", self.seq, self.event.name(), self.path);
        match &self.event {
            HistoryEvent::Exited { outcome } => format!("{head} {outcome}"),
            HistoryEvent::ScriptError { detail } => format!("{head} {}", detail.replace('\n', " ")),
            _ => head,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventBody {
    History(HistoryEntry),
    Status(Status),
    /// Port values at entry (`inputs`) or exit (`outputs`).
    Ports { path: StatePath, inputs: Option<ValueMap>, outputs: Option<ValueMap> },
    Log { path: StatePath, level: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub seq: u64,
    pub body: EventBody,
}

/// What subscribers receive: numbered events, and command replies that were asked to
/// travel in stream order.
#[derive(Clone, Debug)]
pub enum Notice {
    Event(Arc<Event>),
    Reply { token: u64, result: Result<(), EngineError> },
}

#[derive(Default)]
struct BusInner {
    seq: u64,
    subscribers: Vec<Sender<Notice>>,
    history: Vec<HistoryEntry>,
    /// Notices held back while a command runs, so its reply can go first.
    held: Option<Vec<Notice>>,
}

#[derive(Default)]
pub(crate) struct Bus {
    inner: Mutex<BusInner>,
}

impl Bus {
    pub fn subscribe(&self) -> Receiver<Notice> {
        let (tx, rx) = crossbeam_channel::unbounded();
        self.inner.lock().unwrap().subscribers.push(tx);
        rx
    }

    fn publish(inner: &mut BusInner, notice: Notice) {
        match &mut inner.held {
            Some(held) => held.push(notice),
            None => inner.subscribers.retain(|s| s.send(notice.clone()).is_ok()),
        }
    }

    pub fn hold(&self) {
        self.inner.lock().unwrap().held.get_or_insert_with(Vec::new);
    }

    fn emit_body(&self, make: impl FnOnce(u64) -> EventBody) -> u64 {
        let mut g = self.inner.lock().unwrap();
        g.seq += 1;
        let seq = g.seq;
        let body = make(seq);
        if let EventBody::History(h) = &body {
            g.history.push(h.clone());
        }
        Bus::publish(&mut g, Notice::Event(Arc::new(Event { seq, body })));
        seq
    }

    pub fn history(&self, path: StatePath, event: HistoryEvent, context: Context) -> u64 {
        self.emit_body(|seq| EventBody::History(HistoryEntry { seq, wallclock: Utc::now(), event, path, context }))
    }

    pub fn status(&self, status: Status) -> u64 {
        self.emit_body(|_| EventBody::Status(status))
    }

    pub fn ports(&self, path: StatePath, inputs: Option<ValueMap>, outputs: Option<ValueMap>) -> u64 {
        self.emit_body(|_| EventBody::Ports { path, inputs, outputs })
    }

    pub fn log(&self, path: StatePath, level: &str, message: &str) -> u64 {
        self.emit_body(|_| EventBody::Log { path, level: level.to_string(), message: message.to_string() })
    }

    /// Publishes a reply ahead of everything held since [`Bus::hold`].
    pub fn reply(&self, token: u64, result: Result<(), EngineError>) {
        let mut g = self.inner.lock().unwrap();
        let held = g.held.take().unwrap_or_default();
        Bus::publish(&mut g, Notice::Reply { token, result });
        for n in held {
            Bus::publish(&mut g, n);
        }
    }

    pub fn entries(&self) -> Vec<HistoryEntry> {
        self.inner.lock().unwrap().history.clone()
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().unwrap().seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sequence_for_all_kinds() {
        let bus = Bus::default();
        let rx = bus.subscribe();
        let root: StatePath = "root".parse().unwrap();
        bus.status(Status::Running);
        bus.history(root.clone(), HistoryEvent::Entered, Context::default());
        bus.ports(root.clone(), Some(ValueMap::new()), None);
        bus.history(root, HistoryEvent::Exited { outcome: "success".into() }, Context::default());
        let seqs: Vec<u64> = rx
            .try_iter()
            .map(|n| match n {
                Notice::Event(e) => e.seq,
                Notice::Reply { .. } => unreachable!(),
            })
            .collect();
        assert_eq!(seqs, vec![1, 2, 3, 4]);
        let h = bus.entries();
        assert_eq!(h.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(h[1].line(), "4 Exited root success");
    }

    #[test]
    fn reply_overtakes_held_events() {
        let bus = Bus::default();
        let rx = bus.subscribe();
        bus.hold();
        bus.status(Status::Running);
        assert!(rx.try_recv().is_err());
        bus.reply(7, Ok(()));
        assert!(matches!(rx.try_recv(), Ok(Notice::Reply { token: 7, .. })));
        assert!(matches!(rx.try_recv(), Ok(Notice::Event(_))));
    }
}
