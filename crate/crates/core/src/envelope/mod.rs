//! Signed application-layer command envelopes.
//!
//! The signature covers the canonical encoding of every other field:
//!
//! ```text
//! "pqc2-envelope-v1" ‖ version:u8 ‖ sender (u16 len) ‖ topic (u16 len)
//! ‖ seq:u64 ‖ timestamp_ms:u64 ‖ scheme_id:u16 ‖ payload (u32 len)
//! ```
//!
//! On the wire an envelope is `"PQC2" ‖ canonical ‖ signature (u32 len)`,
//! followed by the OTS index as a u16 for `hash-merkle` signatures.

mod replay;

use std::collections::HashMap;

use thiserror::Error;

pub use replay::{replay_check, ReplayDecision, ReplayWindow, WINDOW};

use crate::clock::Clock;
use crate::codec::{CodecError, Reader, Writer};
use crate::crypto::{self, CryptoError, PublicKey, SchemeId, Signature, SignatureKeyPair};

pub const VERSION: u8 = 1;
pub const SIGNING_PREFIX: &[u8; 16] = b"pqc2-envelope-v1";
pub const WIRE_MAGIC: &[u8; 4] = b"PQC2";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("field too long: {0}")]
    FieldTooLong(&'static str),
    #[error("topic {0:?} must start with '/'")]
    InvalidTopic(String),
    #[error("sender must not be empty")]
    EmptySender,
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl From<CodecError> for EnvelopeError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::FieldTooLong(f) => EnvelopeError::FieldTooLong(f),
            other => EnvelopeError::MalformedEnvelope(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub version: u8,
    pub sender: String,
    pub topic: String,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub scheme_id: SchemeId,
    pub payload: Vec<u8>,
    pub signature: Signature,
}

pub fn canonical_bytes(
    version: u8,
    sender: &str,
    topic: &str,
    seq: u64,
    timestamp_ms: u64,
    scheme_id: SchemeId,
    payload: &[u8],
) -> Result<Vec<u8>, EnvelopeError> {
    let mut w = Writer::with_capacity(52 + sender.len() + topic.len() + payload.len());
    w.bytes(SIGNING_PREFIX).u8(version);
    w.str16("sender", sender)?;
    w.str16("topic", topic)?;
    w.u64(seq).u64(timestamp_ms).u16(scheme_id.0);
    w.bytes32("payload", payload)?;
    Ok(w.finish())
}

impl Envelope {
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, EnvelopeError> {
        canonical_bytes(
            self.version,
            &self.sender,
            &self.topic,
            self.seq,
            self.timestamp_ms,
            self.scheme_id,
            &self.payload,
        )
    }

    pub fn is_signed(&self) -> bool {
        self.scheme_id != SchemeId::UNSIGNED
    }

    pub fn encode_wire(&self) -> Result<Vec<u8>, EnvelopeError> {
        let canonical = self.canonical_bytes()?;
        let mut w = Writer::with_capacity(canonical.len() + self.signature.bytes.len() + 10);
        w.bytes(WIRE_MAGIC).bytes(&canonical);
        w.bytes32("signature", &self.signature.bytes)?;
        if self.scheme_id == SchemeId::HASH_MERKLE {
            let index = self
                .signature
                .ots_index
                .and_then(|i| u16::try_from(i).ok())
                .ok_or(EnvelopeError::FieldTooLong("ots_index"))?;
            w.u16(index);
        }
        Ok(w.finish())
    }

    /// Total on arbitrary input: anything that does not parse exactly is
    /// `MalformedEnvelope`.
    pub fn decode_wire(bytes: &[u8]) -> Result<Envelope, EnvelopeError> {
        let malformed = |m: &str| EnvelopeError::MalformedEnvelope(m.to_string());
        let mut r = Reader::new(bytes);
        r.expect(WIRE_MAGIC).map_err(|_| malformed("bad magic"))?;
        r.expect(SIGNING_PREFIX).map_err(|_| malformed("bad signing prefix"))?;
        let version = r.u8()?;
        if version != VERSION {
            return Err(malformed("unsupported version"));
        }
        let sender = r.str16("sender")?;
        let topic = r.str16("topic")?;
        let seq = r.u64()?;
        let timestamp_ms = r.u64()?;
        let scheme_id = SchemeId(r.u16()?);
        let payload = r.bytes32()?.to_vec();
        let sig_bytes = r.bytes32()?.to_vec();
        let signature = Signature::from_wire(scheme_id, sig_bytes);
        if scheme_id == SchemeId::HASH_MERKLE {
            let trailer = u32::from(r.u16()?);
            if signature.ots_index != Some(trailer) {
                return Err(malformed("ots index does not match signature"));
            }
        }
        r.finish()?;
        if sender.is_empty() {
            return Err(malformed("empty sender"));
        }
        if !topic.starts_with('/') {
            return Err(malformed("topic must start with '/'"));
        }
        if scheme_id == SchemeId::UNSIGNED && !signature.bytes.is_empty() {
            return Err(malformed("unsigned envelope carries a signature"));
        }
        Ok(Envelope { version, sender, topic, seq, timestamp_ms, scheme_id, payload, signature })
    }
}

pub fn encode_wire(envelope: &Envelope) -> Result<Vec<u8>, EnvelopeError> {
    envelope.encode_wire()
}

pub fn decode_wire(bytes: &[u8]) -> Result<Envelope, EnvelopeError> {
    Envelope::decode_wire(bytes)
}

/// Per-(sender, topic) sequence source. Sequence numbers start at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceCounter(u64);

impl Default for SequenceCounter {
    fn default() -> Self {
        Self(1)
    }
}

impl SequenceCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(next: u64) -> Self {
        Self(next)
    }

    pub fn peek(&self) -> u64 {
        self.0
    }

    fn take(&mut self) -> u64 {
        let v = self.0;
        self.0 += 1;
        v
    }
}

fn validate(sender: &str, topic: &str) -> Result<(), EnvelopeError> {
    if sender.is_empty() {
        return Err(EnvelopeError::EmptySender);
    }
    if !topic.starts_with('/') {
        return Err(EnvelopeError::InvalidTopic(topic.to_string()));
    }
    Ok(())
}

/// Signs a new envelope. The counter only advances when signing succeeds.
pub fn seal(
    keypair: &mut SignatureKeyPair,
    sender: &str,
    topic: &str,
    counter: &mut SequenceCounter,
    payload: &[u8],
    clock: &dyn Clock,
) -> Result<Envelope, EnvelopeError> {
    validate(sender, topic)?;
    let seq = counter.peek();
    let timestamp_ms = clock.now_ms();
    let scheme_id = keypair.scheme();
    let canonical = canonical_bytes(VERSION, sender, topic, seq, timestamp_ms, scheme_id, payload)?;
    let signature = keypair.sign(&canonical)?;
    counter.take();
    Ok(Envelope {
        version: VERSION,
        sender: sender.to_string(),
        topic: topic.to_string(),
        seq,
        timestamp_ms,
        scheme_id,
        payload: payload.to_vec(),
        signature,
    })
}

/// Builds an envelope with scheme id 0 and no signature, for runs where the
/// application layer is not secured.
pub fn seal_unsigned(
    sender: &str,
    topic: &str,
    counter: &mut SequenceCounter,
    payload: &[u8],
    clock: &dyn Clock,
) -> Result<Envelope, EnvelopeError> {
    validate(sender, topic)?;
    canonical_bytes(VERSION, sender, topic, counter.peek(), 0, SchemeId::UNSIGNED, payload)?;
    Ok(Envelope {
        version: VERSION,
        sender: sender.to_string(),
        topic: topic.to_string(),
        seq: counter.take(),
        timestamp_ms: clock.now_ms(),
        scheme_id: SchemeId::UNSIGNED,
        payload: payload.to_vec(),
        signature: Signature::unsigned(),
    })
}

/// Maps a claimed sender to the key its envelopes must verify under.
pub trait KeyResolver {
    fn resolve(&self, sender: &str) -> Option<PublicKey>;
}

impl KeyResolver for HashMap<String, PublicKey> {
    fn resolve(&self, sender: &str) -> Option<PublicKey> {
        self.get(sender).cloned()
    }
}

impl<F: Fn(&str) -> Option<PublicKey>> KeyResolver for F {
    fn resolve(&self, sender: &str) -> Option<PublicKey> {
        self(sender)
    }
}

/// Optional bound on `|now - timestamp|`. Disabled by default: the sequence
/// number is the authoritative replay defense.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StalenessPolicy {
    pub max_skew_ms: Option<u64>,
}

impl StalenessPolicy {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn within(max_skew_ms: u64) -> Self {
        Self { max_skew_ms: Some(max_skew_ms) }
    }

    fn admits(&self, timestamp_ms: u64, now_ms: u64) -> bool {
        self.max_skew_ms.is_none_or(|max| timestamp_ms.abs_diff(now_ms) <= max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    UnknownSender,
    BadSignature,
    Replay,
    Stale,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::UnknownSender => "UnknownSender",
            RejectReason::BadSignature => "BadSignature",
            RejectReason::Replay => "Replay",
            RejectReason::Stale => "Stale",
        }
    }
}

/// Verifies an envelope and, only on success, records its sequence number in
/// `window`. Checks run in order: sender known, signature, replay, staleness.
pub fn open<'e>(
    resolver: &dyn KeyResolver,
    envelope: &'e Envelope,
    window: &mut ReplayWindow,
    policy: StalenessPolicy,
    now_ms: u64,
) -> Result<&'e [u8], RejectReason> {
    let key = resolver.resolve(&envelope.sender).ok_or(RejectReason::UnknownSender)?;
    if !envelope.is_signed() || key.scheme != envelope.scheme_id {
        return Err(RejectReason::BadSignature);
    }
    let canonical = envelope.canonical_bytes().map_err(|_| RejectReason::BadSignature)?;
    if !crypto::verify(&key, &canonical, &envelope.signature) {
        return Err(RejectReason::BadSignature);
    }
    if !window.would_accept(envelope.seq) {
        return Err(RejectReason::Replay);
    }
    if !policy.admits(envelope.timestamp_ms, now_ms) {
        return Err(RejectReason::Stale);
    }
    window.check(envelope.seq);
    Ok(&envelope.payload)
}

/// Replay windows keyed by (sender, topic).
#[derive(Debug, Default, Clone)]
pub struct ReplayGuard {
    windows: HashMap<(String, String), ReplayWindow>,
}

impl ReplayGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn window(&mut self, sender: &str, topic: &str) -> &mut ReplayWindow {
        self.windows.entry((sender.to_string(), topic.to_string())).or_default()
    }

    pub fn open<'e>(
        &mut self,
        resolver: &dyn KeyResolver,
        envelope: &'e Envelope,
        policy: StalenessPolicy,
        now_ms: u64,
    ) -> Result<&'e [u8], RejectReason> {
        let window = self.window(&envelope.sender, &envelope.topic);
        open(resolver, envelope, window, policy, now_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::crypto::hash_merkle::keygen_with_depth;

    fn keyed(seed: u8, depth: u8) -> (SignatureKeyPair, HashMap<String, PublicKey>) {
        let kp = keygen_with_depth(&[seed; 32], depth).unwrap();
        let mut keys = HashMap::new();
        keys.insert("gs".to_string(), kp.public_key());
        (kp, keys)
    }

    #[test]
    fn minimal_canonical_bytes_length_and_layout() {
        let b = canonical_bytes(1, "a", "/t", 0, 0, SchemeId::HASH_MERKLE, b"").unwrap();
        assert_eq!(b.len(), 16 + 1 + 2 + 1 + 2 + 2 + 8 + 8 + 2 + 4);
        // Frozen from testdata/oracle/wire_oracle.py.
        let oracle = include_str!("../../testdata/envelopes/canonical_minimal.hex").trim();
        assert_eq!(hex::encode(&b), oracle);
    }

    #[test]
    fn oversized_sender_rejected() {
        let sender = "s".repeat(65536);
        assert_eq!(
            canonical_bytes(1, &sender, "/t", 1, 0, SchemeId::HASH_MERKLE, b""),
            Err(EnvelopeError::FieldTooLong("sender"))
        );
    }

    #[test]
    fn seal_open_and_replay() {
        let (mut kp, keys) = keyed(1, 2);
        let clock = ManualClock::new(1000);
        let mut ctr = SequenceCounter::new();
        let a = seal(&mut kp, "gs", "/command", &mut ctr, b"go", &clock).unwrap();
        let b = seal(&mut kp, "gs", "/command", &mut ctr, b"go", &clock).unwrap();
        assert_eq!((a.seq, b.seq), (1, 2));
        let mut w = ReplayWindow::new();
        assert_eq!(open(&keys, &a, &mut w, StalenessPolicy::disabled(), 1000), Ok(&b"go"[..]));
        assert_eq!(open(&keys, &a, &mut w, StalenessPolicy::disabled(), 1000), Err(RejectReason::Replay));
    }

    #[test]
    fn tampered_payload_is_bad_signature() {
        let (mut kp, keys) = keyed(1, 1);
        let mut env = seal(&mut kp, "gs", "/command", &mut SequenceCounter::new(), b"go", &ManualClock::new(0)).unwrap();
        env.payload = b"stop".to_vec();
        let mut w = ReplayWindow::new();
        assert_eq!(open(&keys, &env, &mut w, StalenessPolicy::disabled(), 0), Err(RejectReason::BadSignature));
        assert_eq!(w, ReplayWindow::new(), "window untouched on rejection");
    }

    #[test]
    fn unknown_sender_and_unsigned() {
        let (_, keys) = keyed(1, 0);
        let clock = ManualClock::new(0);
        let mut env = seal_unsigned("gs", "/command", &mut SequenceCounter::new(), b"x", &clock).unwrap();
        let mut w = ReplayWindow::new();
        assert_eq!(open(&keys, &env, &mut w, StalenessPolicy::disabled(), 0), Err(RejectReason::BadSignature));
        env.sender = "nobody".into();
        assert_eq!(open(&keys, &env, &mut w, StalenessPolicy::disabled(), 0), Err(RejectReason::UnknownSender));
    }

    #[test]
    fn staleness_when_enabled() {
        let (mut kp, keys) = keyed(1, 1);
        let env = seal(&mut kp, "gs", "/command", &mut SequenceCounter::new(), b"x", &ManualClock::new(1_000)).unwrap();
        let mut w = ReplayWindow::new();
        assert_eq!(open(&keys, &env, &mut w, StalenessPolicy::within(500), 2_000), Err(RejectReason::Stale));
        assert_eq!(open(&keys, &env, &mut w, StalenessPolicy::within(500), 1_400), Ok(&b"x"[..]));
    }

    #[test]
    fn exhausted_key_propagates() {
        let (mut kp, _) = keyed(1, 0);
        let clock = ManualClock::new(0);
        let mut ctr = SequenceCounter::new();
        seal(&mut kp, "gs", "/command", &mut ctr, b"1", &clock).unwrap();
        assert_eq!(
            seal(&mut kp, "gs", "/command", &mut ctr, b"2", &clock),
            Err(EnvelopeError::Crypto(CryptoError::KeyExhausted))
        );
        assert_eq!(ctr.peek(), 2);
    }

    #[test]
    fn wire_round_trip_and_bad_magic() {
        let (mut kp, _) = keyed(1, 1);
        let env = seal(&mut kp, "gs", "/status", &mut SequenceCounter::new(), b"{}", &ManualClock::new(5)).unwrap();
        let wire = env.encode_wire().unwrap();
        assert_eq!(Envelope::decode_wire(&wire).unwrap(), env);
        let mut bad = wire.clone();
        bad[3] = b'3';
        assert!(matches!(Envelope::decode_wire(&bad), Err(EnvelopeError::MalformedEnvelope(_))));
        assert!(matches!(Envelope::decode_wire(&wire[..wire.len() - 1]), Err(EnvelopeError::MalformedEnvelope(_))));
    }

    #[test]
    fn mismatched_ots_trailer_is_malformed() {
        let (mut kp, _) = keyed(1, 1);
        let env = seal(&mut kp, "gs", "/status", &mut SequenceCounter::new(), b"{}", &ManualClock::new(5)).unwrap();
        let mut wire = env.encode_wire().unwrap();
        let n = wire.len();
        wire[n - 1] ^= 1;
        assert!(matches!(Envelope::decode_wire(&wire), Err(EnvelopeError::MalformedEnvelope(_))));
    }

    #[test]
    fn invalid_topic_and_sender() {
        let clock = ManualClock::new(0);
        let mut ctr = SequenceCounter::new();
        assert!(matches!(seal_unsigned("gs", "command", &mut ctr, b"", &clock), Err(EnvelopeError::InvalidTopic(_))));
        assert_eq!(seal_unsigned("", "/c", &mut ctr, b"", &clock), Err(EnvelopeError::EmptySender));
    }
}
