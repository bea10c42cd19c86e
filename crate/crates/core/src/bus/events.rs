use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::envelope::RejectReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    AuthzDenied,
    BadSignature,
    Replay,
    UnknownSender,
    Stale,
    HandshakeFailed,
    PlaintextRejected,
    Overflow,
    MalformedFrame,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::AuthzDenied,
        EventKind::BadSignature,
        EventKind::Replay,
        EventKind::UnknownSender,
        EventKind::Stale,
        EventKind::HandshakeFailed,
        EventKind::PlaintextRejected,
        EventKind::Overflow,
        EventKind::MalformedFrame,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }
}

impl From<RejectReason> for EventKind {
    fn from(r: RejectReason) -> Self {
        match r {
            RejectReason::UnknownSender => EventKind::UnknownSender,
            RejectReason::BadSignature => EventKind::BadSignature,
            RejectReason::Replay => EventKind::Replay,
            RejectReason::Stale => EventKind::Stale,
        }
    }
}

/// One line of the security log: `{ts, kind, subject, topic, detail}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityEvent {
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub kind: EventKind,
    pub subject: String,
    pub topic: String,
    pub detail: String,
}

/// Append-only event log, optionally mirrored to a JSONL file.
#[derive(Default)]
pub struct EventLog {
    inner: Mutex<LogInner>,
}

#[derive(Default)]
struct LogInner {
    events: Vec<SecurityEvent>,
    last_ts: u64,
    file: Option<BufWriter<File>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let file = File::create(path)?;
        let log = Self::default();
        log.inner.lock().file = Some(BufWriter::new(file));
        Ok(log)
    }

    /// Records an event, clamping its timestamp so the log never runs backwards.
    pub fn append(&self, mut event: SecurityEvent) -> SecurityEvent {
        let mut inner = self.inner.lock();
        event.ts = event.ts.max(inner.last_ts);
        inner.last_ts = event.ts;
        if let Some(file) = inner.file.as_mut() {
            let line = serde_json::to_string(&event).expect("event serializes");
            if writeln!(file, "{line}").and_then(|_| file.flush()).is_err() {
                tracing::warn!("failed to write security event log");
            }
        }
        tracing::info!(kind = ?event.kind, subject = %event.subject, topic = %event.topic, "{}", event.detail);
        inner.events.push(event.clone());
        event
    }

    pub fn snapshot(&self) -> Vec<SecurityEvent> {
        self.inner.lock().events.clone()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.inner.lock().events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parses a JSONL event log.
pub fn load_event_log(text: &str) -> Result<Vec<SecurityEvent>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(ts: u64) -> SecurityEvent {
        SecurityEvent { ts, kind: EventKind::Replay, subject: "a".into(), topic: "/t".into(), detail: "d".into() }
    }

    #[test]
    fn timestamps_are_monotone_and_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let log = EventLog::with_file(&path).unwrap();
        log.append(ev(10));
        assert_eq!(log.append(ev(5)).ts, 10);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"ts":10,"kind":"Replay","subject":"a","topic":"/t","detail":"d"}"#));
        assert_eq!(load_event_log(&text).unwrap(), log.snapshot());
        assert_eq!(log.count(EventKind::Replay), 2);
    }

    #[test]
    fn kind_codes_round_trip() {
        for k in EventKind::ALL {
            assert_eq!(EventKind::from_code(k.code()), Some(k));
        }
        assert_eq!(EventKind::from_code(200), None);
    }
}
