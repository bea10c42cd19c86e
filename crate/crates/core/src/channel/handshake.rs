//! Three-message mutually authenticated handshake.
//!
//! ```text
//! ClientHello   version ‖ nonce_c ‖ offered suites ‖ cert_c
//! ServerHello   nonce_s ‖ suite ‖ cert_s ‖ kem_pk ‖ sig_s("pqc2-hs-server" ‖ H)
//! ClientFinish  kem_ct ‖ sig_c("pqc2-hs-client" ‖ H)
//! ```
//!
//! `H` is SHA-256 over every handshake body so far, up to but excluding the
//! signature field of the message being signed.

use rand::RngCore;
use sha2::{Digest, Sha256};

use super::frame::{Frame, FrameType};
use super::sa::{derive_session_keys, HandshakeRole, SecurityAssociation};
use super::{AlertReason, ChannelConfig, ChannelError, CipherSuite, Credentials};
use crate::clock::Clock;
use crate::codec::{Reader, Writer};
use crate::crypto::{self, KemCiphertext, KemKeyPair, PublicKey, SchemeId, Signature};
use crate::pki::{Certificate, Decision};

pub const PROTOCOL_VERSION: u8 = 1;
const SERVER_LABEL: &[u8] = b"pqc2-hs-server";
const CLIENT_LABEL: &[u8] = b"pqc2-hs-client";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Responder waiting for a ClientHello.
    Idle,
    HelloSent,
    HelloReceived,
    Finished,
    Failed,
}

/// A failed step. `alert` is the ALERT frame to send, absent when the
/// failure was itself caused by a peer alert.
#[derive(Debug)]
pub struct HandshakeFailure {
    pub error: ChannelError,
    pub alert: Option<Vec<u8>>,
}

#[derive(Debug, Default)]
pub struct StepOutput {
    pub outgoing: Option<Vec<u8>>,
    pub established: Option<SecurityAssociation>,
}

pub struct HandshakeState {
    role: HandshakeRole,
    phase: Phase,
    transcript: Sha256,
    client_nonce: [u8; 32],
    server_nonce: [u8; 32],
    offered: Vec<CipherSuite>,
    chosen: Option<CipherSuite>,
    kem_keypair: Option<KemKeyPair>,
    peer: Option<Certificate>,
    config: ChannelConfig,
    credentials: Credentials,
}

impl std::fmt::Debug for HandshakeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HandshakeState")
            .field("role", &self.role)
            .field("phase", &self.phase)
            .field("chosen", &self.chosen)
            .finish_non_exhaustive()
    }
}

fn random_nonce() -> [u8; 32] {
    let mut n = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut n);
    n
}

fn write_suite(w: &mut Writer, s: &CipherSuite) {
    w.u16(s.signature.0).u16(s.kem.0).u16(s.aead.0);
}

fn read_suite(r: &mut Reader) -> Result<(SchemeId, SchemeId, SchemeId), ChannelError> {
    Ok((SchemeId(r.u16()?), SchemeId(r.u16()?), SchemeId(r.u16()?)))
}

fn suites_for(config: &ChannelConfig, cert: &Certificate) -> Vec<CipherSuite> {
    config.suites.iter().copied().filter(|s| s.signature == cert.scheme_id).collect()
}

/// Starts a handshake as the connecting side.
pub fn handshake_initiate(
    config: &ChannelConfig,
    credentials: &Credentials,
) -> Result<(HandshakeState, Vec<u8>), ChannelError> {
    credentials.check()?;
    let offered = suites_for(config, &credentials.certificate);
    if offered.is_empty() {
        return Err(ChannelError::ConfigInvalid(format!(
            "no configured suite uses the certificate's signature scheme {}",
            credentials.certificate.scheme_id
        )));
    }
    let client_nonce = random_nonce();
    let mut w = Writer::new();
    w.u8(PROTOCOL_VERSION).bytes(&client_nonce);
    w.u16(u16::try_from(offered.len()).map_err(|_| ChannelError::ConfigInvalid("too many suites".into()))?);
    for s in &offered {
        write_suite(&mut w, s);
    }
    w.bytes32("certificate", &credentials.certificate.encode())?;
    let body = w.finish();
    let frame = Frame::new(FrameType::ClientHello, body.clone()).encode()?;
    let mut transcript = Sha256::new();
    transcript.update(&body);
    let state = HandshakeState {
        role: HandshakeRole::Initiator,
        phase: Phase::HelloSent,
        transcript,
        client_nonce,
        server_nonce: [0; 32],
        offered,
        chosen: None,
        kem_keypair: None,
        peer: None,
        config: config.clone(),
        credentials: credentials.clone(),
    };
    Ok((state, frame))
}

/// Creates the accepting side's state, awaiting a ClientHello.
pub fn handshake_respond(config: &ChannelConfig, credentials: &Credentials) -> Result<HandshakeState, ChannelError> {
    credentials.check()?;
    Ok(HandshakeState {
        role: HandshakeRole::Responder,
        phase: Phase::Idle,
        transcript: Sha256::new(),
        client_nonce: [0; 32],
        server_nonce: [0; 32],
        offered: Vec::new(),
        chosen: None,
        kem_keypair: None,
        peer: None,
        config: config.clone(),
        credentials: credentials.clone(),
    })
}

pub fn handshake_step(
    state: &mut HandshakeState,
    incoming: &[u8],
    clock: &dyn Clock,
) -> Result<StepOutput, HandshakeFailure> {
    state.step(incoming, clock)
}

impl HandshakeState {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn role(&self) -> HandshakeRole {
        self.role
    }

    pub fn chosen_suite(&self) -> Option<CipherSuite> {
        self.chosen
    }

    pub fn peer_certificate(&self) -> Option<&Certificate> {
        self.peer.as_ref()
    }

    /// Advances on one complete incoming frame. Any failure is terminal.
    pub fn step(&mut self, incoming: &[u8], clock: &dyn Clock) -> Result<StepOutput, HandshakeFailure> {
        if matches!(self.phase, Phase::Finished | Phase::Failed) {
            return Err(HandshakeFailure {
                error: ChannelError::ProtocolViolation("handshake already complete".into()),
                alert: None,
            });
        }
        let result = Frame::decode(incoming).and_then(|frame| self.dispatch(frame, clock));
        result.map_err(|error| {
            self.phase = Phase::Failed;
            let alert = match &error {
                ChannelError::PeerAlert(_) => None,
                e => Some(AlertReason::for_error(e).frame()),
            };
            HandshakeFailure { error, alert }
        })
    }

    fn dispatch(&mut self, frame: Frame, clock: &dyn Clock) -> Result<StepOutput, ChannelError> {
        if frame.frame_type == FrameType::Alert {
            let code = frame.body.first().copied().unwrap_or(0);
            return Err(ChannelError::PeerAlert(AlertReason::from_code(code)));
        }
        match (self.role, self.phase, frame.frame_type) {
            (HandshakeRole::Responder, Phase::Idle, FrameType::ClientHello) => self.on_client_hello(&frame.body, clock),
            (HandshakeRole::Initiator, Phase::HelloSent, FrameType::ServerHello) => {
                self.on_server_hello(&frame.body, clock)
            }
            (HandshakeRole::Responder, Phase::HelloReceived, FrameType::ClientFinish) => {
                self.on_client_finish(&frame.body, clock)
            }
            (role, phase, t) => Err(ChannelError::ProtocolViolation(format!("{t:?} frame for {role:?} in {phase:?}"))),
        }
    }

    fn verify_peer(&self, cert_bytes: &[u8], clock: &dyn Clock) -> Result<Certificate, ChannelError> {
        let cert = Certificate::decode(cert_bytes).map_err(|e| ChannelError::BadCertificate(e.to_string()))?;
        match self.credentials.trust.verify_certificate(&cert, clock.now_secs()) {
            Decision::Allow => Ok(cert),
            Decision::Deny(reason) => Err(ChannelError::BadCertificate(format!("{reason:?}"))),
        }
    }

    fn sign(&self, label: &[u8], hash: &[u8]) -> Result<Signature, ChannelError> {
        let mut msg = label.to_vec();
        msg.extend_from_slice(hash);
        Ok(self.credentials.keypair.lock().sign(&msg)?)
    }

    fn check_signature(peer: &Certificate, label: &[u8], hash: &[u8], sig: &[u8]) -> Result<(), ChannelError> {
        let mut msg = label.to_vec();
        msg.extend_from_slice(hash);
        let sig = Signature::from_wire(peer.scheme_id, sig.to_vec());
        if crypto::verify(&peer.public_key(), &msg, &sig) {
            Ok(())
        } else {
            Err(ChannelError::BadTranscriptSignature)
        }
    }

    fn establish(&mut self, keys: crypto::SessionKeys, clock: &dyn Clock) -> SecurityAssociation {
        self.phase = Phase::Finished;
        let peer = self.peer.as_ref().expect("peer verified before keys exist");
        SecurityAssociation::new(
            self.chosen.expect("suite chosen before keys exist"),
            self.role,
            keys,
            peer.subject.clone(),
            peer.role,
            clock.now_ms(),
        )
    }

    fn on_client_hello(&mut self, body: &[u8], clock: &dyn Clock) -> Result<StepOutput, ChannelError> {
        let mut r = Reader::new(body);
        let version = r.u8()?;
        if version != PROTOCOL_VERSION {
            return Err(ChannelError::ProtocolViolation(format!("unsupported version {version}")));
        }
        self.client_nonce = r.array()?;
        let count = r.u16()?;
        let mut offered = Vec::with_capacity(usize::from(count));
        for _ in 0..count {
            let (s, k, a) = read_suite(&mut r)?;
            // Unknown ids in an offer are skipped, not fatal.
            if let Ok(suite) = CipherSuite::new(s, k, a) {
                offered.push(suite);
            }
        }
        let cert_bytes = r.bytes32()?;
        r.finish()?;

        let peer = self.verify_peer(cert_bytes, clock)?;
        let policy = suites_for(&self.config, &self.credentials.certificate);
        let suite = super::negotiate_suite(&offered, &policy)?;
        if peer.scheme_id != suite.signature {
            return Err(ChannelError::BadCertificate("certificate scheme does not match suite".into()));
        }
        self.offered = offered;
        self.chosen = Some(suite);
        self.peer = Some(peer);
        self.transcript.update(body);

        let kem = crypto::kem_keygen(suite.kem)?;
        self.server_nonce = random_nonce();
        let mut w = Writer::new();
        w.bytes(&self.server_nonce);
        write_suite(&mut w, &suite);
        w.bytes32("certificate", &self.credentials.certificate.encode())?;
        w.bytes32("kem public key", &kem.public_key)?;
        let prefix = w.finish();
        self.transcript.update(&prefix);
        let sig = self.sign(SERVER_LABEL, &self.transcript.clone().finalize())?;
        let mut w = Writer::new();
        w.bytes32("signature", &sig.bytes)?;
        let sig_field = w.finish();
        self.transcript.update(&sig_field);
        self.kem_keypair = Some(kem);
        self.phase = Phase::HelloReceived;

        let mut body = prefix;
        body.extend_from_slice(&sig_field);
        Ok(StepOutput { outgoing: Some(Frame::new(FrameType::ServerHello, body).encode()?), established: None })
    }

    fn on_server_hello(&mut self, body: &[u8], clock: &dyn Clock) -> Result<StepOutput, ChannelError> {
        let mut r = Reader::new(body);
        self.server_nonce = r.array()?;
        let (s, k, a) = read_suite(&mut r)?;
        let suite = CipherSuite { signature: s, kem: k, aead: a };
        if !self.offered.contains(&suite) {
            return Err(ChannelError::ProtocolViolation("server chose a suite that was not offered".into()));
        }
        let cert_bytes = r.bytes32()?;
        let kem_pk = r.bytes32()?.to_vec();
        let prefix_len = r.position();
        let sig = r.bytes32()?;
        r.finish()?;

        let peer = self.verify_peer(cert_bytes, clock)?;
        if peer.scheme_id != suite.signature {
            return Err(ChannelError::BadCertificate("certificate scheme does not match suite".into()));
        }
        self.transcript.update(&body[..prefix_len]);
        Self::check_signature(&peer, SERVER_LABEL, &self.transcript.clone().finalize(), sig)?;
        self.transcript.update(&body[prefix_len..]);
        self.chosen = Some(suite);
        self.peer = Some(peer);

        let (ct, shared) = crypto::encapsulate(&PublicKey::new(suite.kem, kem_pk))
            .map_err(|_| ChannelError::DecapsulationFailure)?;
        let mut w = Writer::new();
        w.bytes32("kem ciphertext", &ct.bytes)?;
        let prefix = w.finish();
        self.transcript.update(&prefix);
        let sig = self.sign(CLIENT_LABEL, &self.transcript.clone().finalize())?;
        let mut w = Writer::new();
        w.bytes(&prefix);
        w.bytes32("signature", &sig.bytes)?;
        let out = Frame::new(FrameType::ClientFinish, w.finish()).encode()?;

        let keys = derive_session_keys(&shared, &self.client_nonce, &self.server_nonce);
        let sa = self.establish(keys, clock);
        Ok(StepOutput { outgoing: Some(out), established: Some(sa) })
    }

    fn on_client_finish(&mut self, body: &[u8], clock: &dyn Clock) -> Result<StepOutput, ChannelError> {
        let mut r = Reader::new(body);
        let ct = r.bytes32()?.to_vec();
        let prefix_len = r.position();
        let sig = r.bytes32()?;
        r.finish()?;

        self.transcript.update(&body[..prefix_len]);
        let peer = self.peer.as_ref().expect("set on ClientHello");
        Self::check_signature(peer, CLIENT_LABEL, &self.transcript.clone().finalize(), sig)?;
        let kem = self.kem_keypair.take().expect("set on ClientHello");
        let shared = crypto::decapsulate(&kem, &KemCiphertext { scheme: kem.scheme, bytes: ct })
            .map_err(|_| ChannelError::DecapsulationFailure)?;
        let keys = derive_session_keys(&shared, &self.client_nonce, &self.server_nonce);
        let sa = self.establish(keys, clock);
        Ok(StepOutput { outgoing: None, established: Some(sa) })
    }
}
