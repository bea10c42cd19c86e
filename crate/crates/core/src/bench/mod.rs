//! Measurement harness: signing cost against message size, delivered
//! message rate through the broker, and secure-channel setup time.
//!
//! Every timed loop also checks its own results; a failed verification or
//! handshake aborts the run rather than producing numbers for broken crypto.

mod handshake;
mod plot;
mod sign_verify;
mod throughput;

use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

pub use handshake::{bench_handshake, HandshakeRecord};
pub use plot::{plot_handshake, plot_sign_verify, plot_throughput};
pub use sign_verify::{bench_sign_verify, comparable_at, SignVerifyRecord, DEFAULT_SIZES};
pub use throughput::{bench_throughput, ThroughputMode, ThroughputRecord, DEFAULT_RATES, DEFAULT_THROUGHPUT_SIZES};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("nothing to write")]
    EmptyInput,
    #[error("invalid benchmark configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Crypto(#[from] crate::crypto::CryptoError),
    #[error("correctness check failed during timing: {0}")]
    VerificationFailed(String),
    #[error("benchmark setup failed: {0}")]
    SetupFailure(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("plot: {0}")]
    Plot(String),
}

/// Mean, median and 95th percentile (nearest rank) of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(samples: &[f64]) -> Option<Summary> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Some(Summary {
        mean: s.iter().sum::<f64>() / n as f64,
        median,
        p95: s[rank - 1],
        min: s[0],
        max: s[n - 1],
    })
}

pub(crate) fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

/// Writes one header row named after the record fields, then one row per
/// record.
pub fn write_csv<T: Serialize>(records: &[T], path: &Path) -> Result<(), BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.median, s.p95, s.min, s.max), (2.5, 2.5, 4.0, 1.0, 4.0));
        let s = summarize(&(1..=100).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert_eq!((s.median, s.p95), (50.5, 95.0));
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn empty_csv_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let none: [SignVerifyRecord; 0] = [];
        assert!(matches!(write_csv(&none, &dir.path().join("x.csv")), Err(BenchError::EmptyInput)));
    }
}
