use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use crate::agents::{Cast, EnvelopeSource};
use crate::authz::{AuthzPolicy, TopicRule};
use crate::bus::{broker_serve, node_connect, BrokerConfig, BusMode, Inbound, NodeConfig, Publisher};
use crate::channel::{ChannelConfig, CipherSuite};
use crate::clock::SystemClock;
use crate::crypto::SchemeId;
use crate::pki::Role;

use super::BenchError;

pub const DEFAULT_THROUGHPUT_SIZES: [usize; 5] = [706, 1306, 6106, 12176, 60502];
pub const DEFAULT_RATES: [u32; 3] = [5, 50, 500];

/// How long the subscriber keeps listening after the publisher's last slot.
const DRAIN: Duration = Duration::from_secs(1);
const PUBLISHER: &str = "bench_publisher";
const SUBSCRIBER: &str = "bench_subscriber";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRecord {
    pub mode: String,
    pub size_bytes: usize,
    pub target_hz: f64,
    pub achieved_hz: f64,
    pub duration_s: f64,
}

/// Transport protection under test. Envelopes are unsigned in every mode so
/// only the channel cost varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThroughputMode {
    Plain,
    Channel(CipherSuite),
}

impl ThroughputMode {
    /// Plaintext, then the post-quantum suite with each built-in AEAD.
    pub fn defaults() -> Vec<ThroughputMode> {
        let pq = CipherSuite::post_quantum_default();
        let chacha = CipherSuite::new(pq.signature, pq.kem, SchemeId::CHACHA20_POLY1305).expect("built-in suite");
        vec![ThroughputMode::Plain, ThroughputMode::Channel(pq), ThroughputMode::Channel(chacha)]
    }

    fn bus_mode(self) -> BusMode {
        match self {
            ThroughputMode::Plain => BusMode::None,
            ThroughputMode::Channel(_) => BusMode::Channel,
        }
    }
}

impl fmt::Display for ThroughputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThroughputMode::Plain => f.write_str("none"),
            ThroughputMode::Channel(s) => write!(f, "channel/{}", s.names().aead),
        }
    }
}

impl FromStr for ThroughputMode {
    type Err = BenchError;

    /// Accepts `none`, `channel` (post-quantum default suite) and
    /// `channel/<aead>`.
    fn from_str(s: &str) -> Result<Self, BenchError> {
        let pq = CipherSuite::post_quantum_default();
        match s.split_once('/') {
            None if s == "none" => Ok(ThroughputMode::Plain),
            None if s == "channel" => Ok(ThroughputMode::Channel(pq)),
            Some(("channel", aead)) => {
                let names = pq.names();
                CipherSuite::from_names(&names.sig, &names.kem, aead)
                    .map(ThroughputMode::Channel)
                    .map_err(|e| BenchError::BadConfig(e.to_string()))
            }
            _ => Err(BenchError::BadConfig(format!("unknown throughput mode {s:?}"))),
        }
    }
}

fn cell_topic(size: usize, rate: u32) -> String {
    format!("/bench/{size}/{rate}")
}

fn payload(size: usize, k: u64) -> Vec<u8> {
    let mut p = vec![0xa5; size];
    let tag = k.to_be_bytes();
    let n = size.min(tag.len());
    p[..n].copy_from_slice(&tag[tag.len() - n..]);
    p
}

/// Delivered message rate for every (mode, size, rate) cell.
///
/// Each mode gets its own broker, one publisher and one subscriber on
/// loopback. Within a mode the cells run side by side on separate topics;
/// each publisher task sends message `k` at `k / rate` seconds and stops at
/// `duration`, so achieved rates can fall short of the target but never
/// exceed it. The subscriber counts what arrives and checks every payload.
pub async fn bench_throughput(
    modes: &[ThroughputMode],
    sizes: &[usize],
    rates: &[u32],
    duration: Duration,
) -> Result<Vec<ThroughputRecord>, BenchError> {
    if modes.is_empty() || sizes.is_empty() || rates.is_empty() {
        return Err(BenchError::BadConfig("modes, sizes and rates must all be non-empty".into()));
    }
    if sizes.contains(&0) || rates.contains(&0) {
        return Err(BenchError::BadConfig("sizes and rates must be positive".into()));
    }
    if duration.is_zero() {
        return Err(BenchError::BadConfig("duration must be positive".into()));
    }
    let members = [(PUBLISHER, Role::Other, 6), (SUBSCRIBER, Role::Other, 6), ("broker", Role::Broker, 6)];
    let cast = tokio::task::spawn_blocking(move || Cast::generate(SchemeId::HASH_MERKLE, &members))
        .await
        .map_err(|e| BenchError::SetupFailure(e.to_string()))?
        .map_err(|e| BenchError::SetupFailure(e.to_string()))?;
    let mut out = Vec::new();
    for &mode in modes {
        out.extend(run_mode(&cast, mode, sizes, rates, duration).await?);
    }
    Ok(out)
}

async fn run_mode(
    cast: &Cast,
    mode: ThroughputMode,
    sizes: &[usize],
    rates: &[u32],
    duration: Duration,
) -> Result<Vec<ThroughputRecord>, BenchError> {
    let setup = |e: &dyn fmt::Display| BenchError::SetupFailure(format!("{mode}: {e}"));
    let cells: Vec<(usize, u32)> = sizes.iter().flat_map(|&s| rates.iter().map(move |&r| (s, r))).collect();
    let topics: Vec<String> = cells.iter().map(|&(s, r)| cell_topic(s, r)).collect();
    let rule = TopicRule {
        publish: [PUBLISHER.to_string()].into(),
        subscribe: [SUBSCRIBER.to_string()].into(),
    };
    let policy = AuthzPolicy::from_rules(topics.iter().map(|t| (t.clone(), rule.clone()))).map_err(|e| setup(&e))?;

    let mut broker = BrokerConfig::new("127.0.0.1:0", mode.bus_mode(), policy);
    let node = |subject: &str, role| -> Result<NodeConfig, BenchError> {
        let config = NodeConfig::new(String::new(), mode.bus_mode(), subject, role);
        Ok(match mode {
            ThroughputMode::Plain => config,
            ThroughputMode::Channel(suite) => config
                .with_credentials(cast.credentials(subject).map_err(|e| setup(&e))?)
                .with_channel(ChannelConfig::with_suites(vec![suite])),
        })
    };
    if let ThroughputMode::Channel(_) = mode {
        broker = broker.with_credentials(cast.credentials("broker").map_err(|e| setup(&e))?);
    }
    let broker = broker_serve(broker).await.map_err(|e| setup(&e))?;
    let addr = broker.addr().to_string();

    let mut sub_cfg = node(SUBSCRIBER, Role::Other)?.subscribes(topics.clone());
    sub_cfg.broker = addr.clone();
    let mut pub_cfg = node(PUBLISHER, Role::Other)?.publishes(topics.clone());
    pub_cfg.broker = addr;
    let mut subscriber = node_connect(sub_cfg).await.map_err(|e| setup(&e))?;
    let publisher = node_connect(pub_cfg).await.map_err(|e| setup(&e))?;
    publisher.barrier().await.map_err(|e| setup(&e))?;
    subscriber.barrier().await.map_err(|e| setup(&e))?;

    let start = Instant::now() + Duration::from_millis(50);
    let stop = start + duration;
    let mut senders = Vec::with_capacity(cells.len());
    for (&(size, rate), topic) in cells.iter().zip(&topics) {
        senders.push(tokio::spawn(paced(publisher.publisher(), topic.clone(), size, rate, start, stop)));
    }

    let expected: HashMap<&str, usize> = cells.iter().zip(&topics).map(|(&(s, _), t)| (t.as_str(), s)).collect();
    let mut counts: HashMap<String, u64> = HashMap::new();
    let deadline = stop + DRAIN;
    while let Ok(Some(inbound)) = tokio::time::timeout_at(deadline, subscriber.recv()).await {
        let Inbound::Deliver { envelope, .. } = inbound else { continue };
        let Some(&size) = expected.get(envelope.topic.as_str()) else { continue };
        let seen = counts.entry(envelope.topic.clone()).or_default();
        if envelope.payload != payload(size, envelope.seq.wrapping_sub(1)) {
            return Err(BenchError::VerificationFailed(format!("{mode}: corrupted delivery on {}", envelope.topic)));
        }
        *seen += 1;
    }
    for s in senders {
        s.await.map_err(|e| setup(&e))?.map_err(|e| setup(&e))?;
    }
    broker.shutdown().await;

    let secs = duration.as_secs_f64();
    Ok(cells
        .iter()
        .zip(&topics)
        .map(|(&(size, rate), topic)| ThroughputRecord {
            mode: mode.to_string(),
            size_bytes: size,
            target_hz: f64::from(rate),
            achieved_hz: counts.get(topic).copied().unwrap_or(0) as f64 / secs,
            duration_s: secs,
        })
        .collect())
}

async fn paced(
    publisher: Publisher,
    topic: String,
    size: usize,
    rate: u32,
    start: Instant,
    stop: Instant,
) -> Result<(), crate::bus::BusError> {
    let mut source = EnvelopeSource::new(PUBLISHER, None, Arc::new(SystemClock));
    let period = Duration::from_secs(1).as_secs_f64() / f64::from(rate);
    for k in 0u64.. {
        let slot = start + Duration::from_secs_f64(period * k as f64);
        if slot >= stop {
            break;
        }
        tokio::time::sleep_until(slot).await;
        if Instant::now() >= stop {
            break;
        }
        let env = source.seal(&topic, &payload(size, k)).expect("bench topics are valid");
        publisher.publish(&env).await?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in ThroughputMode::defaults() {
            assert_eq!(m.to_string().parse::<ThroughputMode>().unwrap(), m);
        }
        assert_eq!(ThroughputMode::defaults()[1].to_string(), "channel/aes-256-gcm");
        assert!("tls".parse::<ThroughputMode>().is_err());
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn short_grid_never_overshoots() {
        let modes = [ThroughputMode::Plain, ThroughputMode::defaults()[1]];
        let r = bench_throughput(&modes, &[100, 2000], &[20], Duration::from_secs(1)).await.unwrap();
        assert_eq!(r.len(), 4);
        for rec in &r {
            assert!(rec.achieved_hz <= rec.target_hz * 1.01, "{rec:?}");
            assert!(rec.achieved_hz > 0.0, "{rec:?}");
        }
    }
}
