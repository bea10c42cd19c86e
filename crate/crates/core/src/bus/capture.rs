//! Wire capture: exactly the bytes that crossed each broker connection.
//!
//! ```text
//! "PQCP" then records of
//! timestamp_us: u64 ‖ direction: u8 ‖ addr (u16 len) ‖ bytes (u32 len)
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::channel::FrameTap;
use crate::codec::{Reader, Writer};

pub const CAPTURE_MAGIC: &[u8; 4] = b"PQCP";

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("cannot access capture {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed capture: {0}")]
    MalformedCapture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Inbound,
    Outbound,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRecord {
    pub timestamp_us: u64,
    pub direction: Direction,
    pub peer: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Match {
    pub record: usize,
    pub offset: usize,
}

pub struct CaptureWriter {
    out: Mutex<BufWriter<File>>,
}

fn now_us() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

impl CaptureWriter {
    pub fn create(path: &Path) -> Result<Self, CaptureError> {
        let io = |e: std::io::Error| CaptureError::Io { path: path.display().to_string(), message: e.to_string() };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        out.write_all(CAPTURE_MAGIC).and_then(|_| out.flush()).map_err(io)?;
        Ok(Self { out: Mutex::new(out) })
    }

    pub fn record(&self, direction: Direction, peer: &str, bytes: &[u8]) {
        let mut w = Writer::with_capacity(19 + peer.len() + bytes.len());
        w.u64(now_us()).u8(direction as u8);
        if w.str16("peer", peer).and_then(|w| w.bytes32("bytes", bytes)).is_err() {
            return;
        }
        let mut out = self.out.lock();
        if out.write_all(&w.finish()).and_then(|_| out.flush()).is_err() {
            tracing::warn!("capture write failed");
        }
    }
}

/// Binds a capture file to one connection's peer address.
pub struct ConnectionTap<'a> {
    pub capture: Option<&'a CaptureWriter>,
    pub peer: &'a str,
}

impl FrameTap for ConnectionTap<'_> {
    fn record(&self, outbound: bool, bytes: &[u8]) {
        if let Some(c) = self.capture {
            let direction = if outbound { Direction::Outbound } else { Direction::Inbound };
            c.record(direction, self.peer, bytes);
        }
    }
}

pub fn parse_capture(bytes: &[u8]) -> Result<Vec<CaptureRecord>, CaptureError> {
    let bad = |e: crate::codec::CodecError| CaptureError::MalformedCapture(e.to_string());
    let mut r = Reader::new(bytes);
    r.expect(CAPTURE_MAGIC).map_err(bad)?;
    let mut out = Vec::new();
    while !r.is_empty() {
        let timestamp_us = r.u64().map_err(bad)?;
        let direction = match r.u8().map_err(bad)? {
            0 => Direction::Inbound,
            1 => Direction::Outbound,
            d => return Err(CaptureError::MalformedCapture(format!("direction {d}"))),
        };
        let peer = r.str16("peer").map_err(bad)?;
        let bytes = r.bytes32().map_err(bad)?.to_vec();
        out.push(CaptureRecord { timestamp_us, direction, peer, bytes });
    }
    Ok(out)
}

pub fn capture_load(path: &Path) -> Result<Vec<CaptureRecord>, CaptureError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CaptureError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_capture(&bytes)
}

/// Every offset at which `needle` occurs, across all records.
pub fn capture_scan(records: &[CaptureRecord], needle: &[u8]) -> Vec<Match> {
    if needle.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (record, rec) in records.iter().enumerate() {
        if rec.bytes.len() < needle.len() {
            continue;
        }
        for (offset, w) in rec.bytes.windows(needle.len()).enumerate() {
            if w == needle {
                out.push(Match { record, offset });
            }
        }
    }
    out
}
