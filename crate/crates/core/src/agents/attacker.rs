use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::bus::{capture_load, capture_scan, node_connect, BusError, BusMessage, BusMode, CaptureRecord, NodeConfig, Publisher};
use crate::channel::{ChannelConfig, Credentials, Frame, FrameType};
use crate::clock::{Clock, SystemClock};
use crate::crypto::{hash_merkle, SchemeId, Signature};
use crate::envelope::{Envelope, VERSION};
use crate::pki::Role;

use super::core::{velocity_payload, COMMAND_TOPIC};
use super::kinematics::DEFAULT_V_MAX;
use super::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Forge,
    Tamper,
    Replay,
    UnauthorizedPublish,
    Flood,
    Eavesdrop,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::Forge,
        AttackKind::Tamper,
        AttackKind::Replay,
        AttackKind::UnauthorizedPublish,
        AttackKind::Flood,
        AttackKind::Eavesdrop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Forge => "forge",
            AttackKind::Tamper => "tamper",
            AttackKind::Replay => "replay",
            AttackKind::UnauthorizedPublish => "unauthorized_publish",
            AttackKind::Flood => "flood",
            AttackKind::Eavesdrop => "eavesdrop",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown attack kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    pub count: usize,
    pub topic: String,
    /// Identity claimed by forged envelopes.
    pub impersonate: String,
    /// Size of each garbage frame body in a flood.
    pub frame_size: usize,
    /// Plaintext searched for by eavesdropping.
    pub needle: Option<String>,
    /// Capture file read by tamper, replay and eavesdrop.
    pub capture: Option<PathBuf>,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            count: 1000,
            topic: COMMAND_TOPIC.into(),
            impersonate: "ground_station".into(),
            frame_size: 256,
            needle: None,
            capture: None,
        }
    }
}

/// What an attack attempted and what it saw. Delivery and rejection counts
/// are filled in by whoever can observe the victims.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: Option<AttackKind>,
    pub attempted: usize,
    pub sent: usize,
    /// Topics the broker refused at registration.
    pub refused_at_registration: Vec<String>,
    pub delivered: Option<usize>,
    pub rejections: BTreeMap<String, usize>,
    pub recovered: Option<bool>,
    /// Number of 16-byte windows of the needle found in the capture.
    pub window_matches: Option<usize>,
    pub detail: String,
}

impl AttackReport {
    fn new(kind: AttackKind) -> Self {
        Self { kind: Some(kind), ..Self::default() }
    }
}

/// Pulls application envelopes out of plaintext frames in a capture.
/// Encrypted traffic yields nothing.
pub fn harvest_envelopes(records: &[CaptureRecord]) -> Vec<Vec<u8>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rec in records {
        let Ok(frame) = Frame::decode(&rec.bytes) else { continue };
        if frame.frame_type != FrameType::Data {
            continue;
        }
        let wire = match BusMessage::decode(&frame.body) {
            Ok(BusMessage::Publish { envelope }) | Ok(BusMessage::Deliver { envelope }) => envelope,
            _ => continue,
        };
        if Envelope::decode_wire(&wire).is_ok() && seen.insert(wire.clone()) {
            out.push(wire);
        }
    }
    out
}

/// A hostile node. In plaintext modes it may claim any identity; with the
/// secure channel it can only speak as the holder of its own certificate.
pub struct Attacker {
    broker: String,
    mode: BusMode,
    credentials: Option<Credentials>,
    channel: ChannelConfig,
    clock: Arc<dyn Clock>,
}

impl Attacker {
    pub fn new(broker: impl Into<String>, mode: BusMode, credentials: Option<Credentials>) -> Self {
        Self { broker: broker.into(), mode, credentials, channel: ChannelConfig::default(), clock: Arc::new(SystemClock) }
    }

    pub fn with_channel(mut self, channel: ChannelConfig) -> Self {
        self.channel = channel;
        self
    }

    fn own_subject(&self) -> String {
        self.credentials.as_ref().map(|c| c.subject().to_string()).unwrap_or_else(|| "attacker".into())
    }

    async fn connect(&self, claim: &str, publishes: &[&str]) -> Result<Publisher, BusError> {
        let mut cfg = NodeConfig::new(self.broker.clone(), self.mode, claim, Role::Attacker)
            .publishes(publishes.iter().copied())
            .with_channel(self.channel.clone());
        cfg.clock = self.clock.clone();
        if self.mode.secure_channel() {
            let creds = self
                .credentials
                .clone()
                .ok_or_else(|| BusError::Config("the secure channel needs attacker credentials".into()))?;
            cfg = cfg.with_credentials(creds);
        }
        Ok(node_connect(cfg).await?.publisher())
    }

    /// Connects declaring `topic`. If registration is refused, connects
    /// again declaring nothing and pushes publishes past the client-side
    /// check, so the broker's per-message enforcement is exercised too.
    async fn injector(&self, claim: &str, topic: &str, report: &mut AttackReport) -> Result<Publisher, AgentError> {
        match self.connect(claim, &[topic]).await {
            Ok(p) => Ok(p),
            Err(BusError::NotAuthorized(denied)) => {
                report.refused_at_registration = denied.into_iter().map(|(t, a)| format!("{a} {t}")).collect();
                Ok(self.connect(claim, &[]).await?)
            }
            Err(e) => Err(e.into()),
        }
    }

    async fn inject(&self, publisher: &Publisher, wire: Vec<u8>, report: &mut AttackReport) -> Result<(), AgentError> {
        report.attempted += 1;
        publisher.send(&BusMessage::Publish { envelope: wire }).await?;
        report.sent += 1;
        Ok(())
    }

    /// Envelopes claiming `impersonate` with random signature bytes.
    pub async fn forge(&self, params: &AttackParams) -> Result<AttackReport, AgentError> {
        let mut report = AttackReport::new(AttackKind::Forge);
        let claim = if self.mode.secure_channel() { self.own_subject() } else { params.impersonate.clone() };
        let publisher = self.injector(&claim, &params.topic, &mut report).await?;
        let mut rng = StdRng::from_entropy();
        let base = self.clock.now_ms();
        for i in 0..params.count {
            let mut sig = vec![0u8; hash_merkle::signature_len(hash_merkle::DEFAULT_DEPTH)];
            rng.fill_bytes(&mut sig);
            let index = (i % (1 << hash_merkle::DEFAULT_DEPTH)) as u32;
            sig[hash_merkle::INDEX_OFFSET..hash_merkle::INDEX_OFFSET + 4].copy_from_slice(&index.to_be_bytes());
            let env = Envelope {
                version: VERSION,
                sender: params.impersonate.clone(),
                topic: params.topic.clone(),
                seq: base + i as u64,
                timestamp_ms: self.clock.now_ms(),
                scheme_id: SchemeId::HASH_MERKLE,
                payload: velocity_payload(DEFAULT_V_MAX, 0.0),
                signature: Signature::from_wire(SchemeId::HASH_MERKLE, sig),
            };
            self.inject(&publisher, env.encode_wire()?, &mut report).await?;
        }
        publisher.barrier().await?;
        report.detail = format!("{} forged envelopes claiming {}", report.sent, params.impersonate);
        Ok(report)
    }

    /// Rewrites the payload of captured envelopes, keeping everything else.
    pub async fn tamper(&self, captured: &[Vec<u8>], params: &AttackParams) -> Result<AttackReport, AgentError> {
        let mut report = AttackReport::new(AttackKind::Tamper);
        let envelopes: Vec<Envelope> = captured.iter().filter_map(|w| Envelope::decode_wire(w).ok()).collect();
        if envelopes.is_empty() {
            report.detail = "no captured envelopes to tamper with".into();
            return Ok(report);
        }
        let mut publishers: BTreeMap<String, Publisher> = BTreeMap::new();
        for i in 0..params.count {
            let mut env = envelopes[i % envelopes.len()].clone();
            let forced = velocity_payload(DEFAULT_V_MAX, 0.0);
            env.payload = if env.payload == forced { velocity_payload(-DEFAULT_V_MAX, 0.0) } else { forced };
            let claim = if self.mode.secure_channel() { self.own_subject() } else { env.sender.clone() };
            if !publishers.contains_key(&claim) {
                let p = self.injector(&claim, &env.topic, &mut report).await?;
                publishers.insert(claim.clone(), p);
            }
            self.inject(&publishers[&claim], env.encode_wire()?, &mut report).await?;
        }
        for p in publishers.values() {
            p.barrier().await?;
        }
        report.detail = format!("{} tampered envelopes from {} originals", report.sent, envelopes.len());
        Ok(report)
    }

    /// Sends captured envelopes again, byte for byte.
    pub async fn replay(&self, captured: &[Vec<u8>], params: &AttackParams) -> Result<AttackReport, AgentError> {
        let mut report = AttackReport::new(AttackKind::Replay);
        let envelopes: Vec<(Envelope, &Vec<u8>)> =
            captured.iter().filter_map(|w| Envelope::decode_wire(w).ok().map(|e| (e, w))).collect();
        if envelopes.is_empty() {
            report.detail = "no captured envelopes to replay".into();
            return Ok(report);
        }
        let mut publishers: BTreeMap<String, Publisher> = BTreeMap::new();
        for i in 0..params.count {
            let (env, wire) = &envelopes[i % envelopes.len()];
            let claim = if self.mode.secure_channel() { self.own_subject() } else { env.sender.clone() };
            if !publishers.contains_key(&claim) {
                let p = self.injector(&claim, &env.topic, &mut report).await?;
                publishers.insert(claim.clone(), p);
            }
            self.inject(&publishers[&claim], (*wire).clone(), &mut report).await?;
        }
        for p in publishers.values() {
            p.barrier().await?;
        }
        report.detail = format!("{} replays of {} captured envelopes", report.sent, envelopes.len());
        Ok(report)
    }

    /// Publishes under the attacker's own identity to a topic it may not use.
    pub async fn unauthorized_publish(&self, params: &AttackParams) -> Result<AttackReport, AgentError> {
        let mut report = AttackReport::new(AttackKind::UnauthorizedPublish);
        let me = self.own_subject();
        let publisher = self.injector(&me, &params.topic, &mut report).await?;
        let base = self.clock.now_ms();
        for i in 0..params.count {
            let env = Envelope {
                version: VERSION,
                sender: me.clone(),
                topic: params.topic.clone(),
                seq: base + i as u64,
                timestamp_ms: self.clock.now_ms(),
                scheme_id: SchemeId::UNSIGNED,
                payload: velocity_payload(DEFAULT_V_MAX, 0.0),
                signature: Signature::unsigned(),
            };
            self.inject(&publisher, env.encode_wire()?, &mut report).await?;
        }
        publisher.barrier().await?;
        report.detail = format!("{} publishes to {} as {me}", report.sent, params.topic);
        Ok(report)
    }

    /// Garbage DATA frames as fast as the socket takes them.
    pub async fn flood(&self, params: &AttackParams) -> Result<AttackReport, AgentError> {
        let mut report = AttackReport::new(AttackKind::Flood);
        let publisher = self.connect(&self.own_subject(), &[]).await?;
        let mut rng = StdRng::from_entropy();
        let mut body = vec![0u8; params.frame_size.max(1)];
        for _ in 0..params.count {
            rng.fill_bytes(&mut body);
            let frame = Frame::new(FrameType::Data, body.clone()).encode().map_err(BusError::from)?;
            report.attempted += 1;
            publisher.send_raw(&frame).await?;
            report.sent += 1;
        }
        publisher.barrier().await?;
        report.detail = format!("{} garbage frames of {} bytes", report.sent, body.len());
        Ok(report)
    }
}

/// Searches a capture for `needle`. Recovery means the whole needle appears
/// verbatim; partial leaks show up as 16-byte window matches.
pub fn eavesdrop(capture: &Path, needle: &[u8]) -> Result<AttackReport, AgentError> {
    let records = capture_load(capture).map_err(|e| AgentError::ScenarioSetupFailure(e.to_string()))?;
    let mut report = AttackReport::new(AttackKind::Eavesdrop);
    report.attempted = 1;
    let full = capture_scan(&records, needle);
    let windows = if needle.len() >= 16 {
        needle.windows(16).map(|w| capture_scan(&records, w).len()).sum()
    } else {
        full.len()
    };
    report.recovered = Some(!full.is_empty());
    report.window_matches = Some(windows);
    report.detail = format!("{} records scanned, {} full matches, {windows} 16-byte window matches", records.len(), full.len());
    Ok(report)
}

/// Runs one attack as configured. Tamper and replay draw their material
/// from `params.capture`.
pub async fn attacker_run(attacker: &Attacker, kind: AttackKind, params: &AttackParams) -> Result<AttackReport, AgentError> {
    let captured = || -> Result<Vec<Vec<u8>>, AgentError> {
        let path = params
            .capture
            .as_ref()
            .ok_or_else(|| AgentError::ScenarioSetupFailure(format!("{kind} needs a capture file")))?;
        let records = capture_load(path).map_err(|e| AgentError::ScenarioSetupFailure(e.to_string()))?;
        Ok(harvest_envelopes(&records))
    };
    match kind {
        AttackKind::Forge => attacker.forge(params).await,
        AttackKind::Tamper => attacker.tamper(&captured()?, params).await,
        AttackKind::Replay => attacker.replay(&captured()?, params).await,
        AttackKind::UnauthorizedPublish => attacker.unauthorized_publish(params).await,
        AttackKind::Flood => attacker.flood(params).await,
        AttackKind::Eavesdrop => {
            let path = params
                .capture
                .as_ref()
                .ok_or_else(|| AgentError::ScenarioSetupFailure("eavesdrop needs a capture file".into()))?;
            let needle = params
                .needle
                .as_ref()
                .ok_or_else(|| AgentError::ScenarioSetupFailure("eavesdrop needs a needle".into()))?;
            eavesdrop(path, needle.as_bytes())
        }
    }
}
