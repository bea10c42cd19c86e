use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tokio::net::{TcpListener, TcpStream};

use crate::agents::Cast;
use crate::channel::{accept_secure, connect_secure, read_frame, ChannelConfig, CipherSuite, Credentials};
use crate::clock::SystemClock;
use crate::crypto::{hash_merkle, SchemeId};
use crate::pki::Role;

use super::{summarize, BenchError};

const WARMUP: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandshakeRecord {
    pub suite: String,
    pub reps: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    #[serde(skip)]
    pub min_ms: f64,
    #[serde(skip)]
    pub max_ms: f64,
    /// Set when a handshake failed; the timings are then NaN.
    #[serde(skip)]
    pub failure: Option<String>,
}

struct Pair {
    client: Credentials,
    server: Credentials,
}

/// Times `reps` complete handshakes per suite over loopback TCP, one after
/// another, from the client's first byte until its security association
/// exists. The server accepts every built-in suite; the client offers only
/// the suite under test.
pub async fn bench_handshake(suites: &[CipherSuite], reps: usize) -> Result<Vec<HandshakeRecord>, BenchError> {
    if reps == 0 {
        return Err(BenchError::BadConfig("reps must be at least 1".into()));
    }
    if suites.is_empty() {
        return Err(BenchError::BadConfig("no suites given".into()));
    }
    let mut per_scheme: HashMap<SchemeId, usize> = HashMap::new();
    for s in suites {
        *per_scheme.entry(s.signature).or_default() += reps + WARMUP;
    }
    let mut creds: HashMap<SchemeId, Pair> = HashMap::new();
    for (&scheme, &uses) in &per_scheme {
        let depth = (usize::BITS - uses.saturating_sub(1).leading_zeros()).max(2) as u8;
        if scheme == SchemeId::HASH_MERKLE && depth > hash_merkle::MAX_DEPTH {
            return Err(BenchError::BadConfig(format!("{uses} handshakes exceed one hash-merkle key")));
        }
        let cast = tokio::task::spawn_blocking(move || {
            Cast::generate(scheme, &[("bench_client", Role::Other, depth), ("bench_server", Role::Broker, depth)])
        })
        .await
        .map_err(|e| BenchError::SetupFailure(e.to_string()))?
        .map_err(|e| BenchError::SetupFailure(e.to_string()))?;
        let get = |s| cast.credentials(s).map_err(|e| BenchError::SetupFailure(e.to_string()));
        creds.insert(scheme, Pair { client: get("bench_client")?, server: get("bench_server")? });
    }

    let mut out = Vec::with_capacity(suites.len());
    for suite in suites {
        let pair = &creds[&suite.signature];
        let mut samples = Vec::with_capacity(reps);
        let mut failure = None;
        for i in 0..reps + WARMUP {
            match one_handshake(*suite, pair).await {
                Ok(ms) if i >= WARMUP => samples.push(ms),
                Ok(_) => {}
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        let record = match (&failure, summarize(&samples)) {
            (None, Some(s)) => HandshakeRecord {
                suite: suite.to_string(),
                reps,
                mean_ms: s.mean,
                median_ms: s.median,
                min_ms: s.min,
                max_ms: s.max,
                failure: None,
            },
            _ => HandshakeRecord {
                suite: suite.to_string(),
                reps,
                mean_ms: f64::NAN,
                median_ms: f64::NAN,
                min_ms: f64::NAN,
                max_ms: f64::NAN,
                failure: failure.or_else(|| Some("no samples".into())),
            },
        };
        out.push(record);
    }
    Ok(out)
}

async fn one_handshake(suite: CipherSuite, pair: &Pair) -> Result<f64, String> {
    let listener = TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let server_creds = pair.server.clone();
    let server = tokio::spawn(async move {
        let (mut stream, _) = listener.accept().await.map_err(|e| e.to_string())?;
        let first = read_frame(&mut stream).await.map_err(|e| e.to_string())?.ok_or("client hung up")?;
        accept_secure(&mut stream, first, &ChannelConfig::default(), &server_creds, &SystemClock, &())
            .await
            .map_err(|e| e.to_string())
    });
    let config = ChannelConfig::with_suites(vec![suite]);
    let t = Instant::now();
    let mut stream = TcpStream::connect(addr).await.map_err(|e| e.to_string())?;
    stream.set_nodelay(true).ok();
    let sa = connect_secure(&mut stream, &config, &pair.client, &SystemClock, &()).await;
    let elapsed = t.elapsed();
    let server_sa = server.await.map_err(|e| e.to_string())?;
    let (mut sa, mut server_sa) = (sa.map_err(|e| e.to_string())?, server_sa?);
    // The two ends must agree on keys, or the timing measured nothing useful.
    let probe = sa.seal_frame(b"handshake probe").map_err(|e| e.to_string())?;
    match server_sa.open_frame(&probe) {
        Ok(p) if p == b"handshake probe" => Ok(elapsed.as_secs_f64() * 1e3),
        _ => Err("session keys disagree".into()),
    }
}
