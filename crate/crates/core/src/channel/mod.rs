//! Point-to-point secure channel: mutual certificate authentication, suite
//! negotiation, KEM key agreement and AEAD-protected DATA frames.

mod frame;
mod handshake;
mod sa;
mod suite;

use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite};

pub use frame::{read_frame, write_bytes, Frame, FrameType, HEADER_LEN, MAX_BODY};
pub use handshake::{
    handshake_initiate, handshake_respond, handshake_step, HandshakeFailure, HandshakeState, Phase, StepOutput,
    PROTOCOL_VERSION,
};
pub use sa::{derive_session_keys, frame_nonce, open_frame, seal_frame, HandshakeRole, SecurityAssociation};
pub use suite::{negotiate_suite, CipherSuite, SuiteNames};

use crate::clock::Clock;
use crate::codec::CodecError;
use crate::crypto::{CryptoError, SignatureKeyPair};
use crate::pki::{Certificate, TrustStore};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("invalid channel configuration: {0}")]
    ConfigInvalid(String),
    #[error("no common cipher suite")]
    NoCommonSuite,
    #[error("peer certificate rejected: {0}")]
    BadCertificate(String),
    #[error("handshake transcript signature did not verify")]
    BadTranscriptSignature,
    #[error("key decapsulation failed")]
    DecapsulationFailure,
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("peer sent alert {0:?}")]
    PeerAlert(AlertReason),
    #[error("frame authentication failed")]
    AuthenticationFailure,
    #[error("replayed frame")]
    Replay,
    #[error("send counter exhausted, reconnect required")]
    CounterExhausted,
    #[error("frame body of {0} bytes exceeds 16 MiB")]
    FrameTooLarge(usize),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("plaintext frame refused")]
    PlaintextRejected,
    #[error("connection closed")]
    ConnectionClosed,
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl From<CodecError> for ChannelError {
    fn from(e: CodecError) -> Self {
        ChannelError::MalformedFrame(e.to_string())
    }
}

impl From<std::io::Error> for ChannelError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ChannelError::ConnectionClosed
        } else {
            ChannelError::Io(e.to_string())
        }
    }
}

/// One-byte ALERT body. Reasons are coarse on purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlertReason {
    BadCertificate,
    BadSignature,
    NoCommonSuite,
    DecapsulationFailure,
    ProtocolViolation,
    PlaintextRejected,
    Internal,
}

impl AlertReason {
    pub fn code(self) -> u8 {
        match self {
            AlertReason::BadCertificate => 1,
            AlertReason::BadSignature => 2,
            AlertReason::NoCommonSuite => 3,
            AlertReason::DecapsulationFailure => 4,
            AlertReason::ProtocolViolation => 5,
            AlertReason::PlaintextRejected => 6,
            AlertReason::Internal => 255,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            1 => AlertReason::BadCertificate,
            2 => AlertReason::BadSignature,
            3 => AlertReason::NoCommonSuite,
            4 => AlertReason::DecapsulationFailure,
            5 => AlertReason::ProtocolViolation,
            6 => AlertReason::PlaintextRejected,
            _ => AlertReason::Internal,
        }
    }

    pub fn for_error(e: &ChannelError) -> Self {
        match e {
            ChannelError::BadCertificate(_) => AlertReason::BadCertificate,
            ChannelError::BadTranscriptSignature => AlertReason::BadSignature,
            ChannelError::NoCommonSuite => AlertReason::NoCommonSuite,
            ChannelError::DecapsulationFailure => AlertReason::DecapsulationFailure,
            ChannelError::PlaintextRejected => AlertReason::PlaintextRejected,
            ChannelError::ProtocolViolation(_) | ChannelError::MalformedFrame(_) | ChannelError::FrameTooLarge(_) => {
                AlertReason::ProtocolViolation
            }
            _ => AlertReason::Internal,
        }
    }

    pub fn frame(self) -> Vec<u8> {
        Frame::new(FrameType::Alert, vec![self.code()]).encode().expect("one-byte body")
    }
}

pub type SharedKeyPair = Arc<Mutex<SignatureKeyPair>>;

/// What a node needs to authenticate itself and its peers.
#[derive(Clone)]
pub struct Credentials {
    pub certificate: Certificate,
    pub keypair: SharedKeyPair,
    pub trust: Arc<TrustStore>,
}

impl std::fmt::Debug for Credentials {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Credentials").field("subject", &self.certificate.subject).finish_non_exhaustive()
    }
}

impl Credentials {
    pub fn new(certificate: Certificate, keypair: SignatureKeyPair, trust: TrustStore) -> Result<Self, ChannelError> {
        let creds = Self { certificate, keypair: Arc::new(Mutex::new(keypair)), trust: Arc::new(trust) };
        creds.check()?;
        Ok(creds)
    }

    pub fn subject(&self) -> &str {
        &self.certificate.subject
    }

    pub(crate) fn check(&self) -> Result<(), ChannelError> {
        if self.keypair.lock().public_key() != self.certificate.public_key() {
            return Err(ChannelError::ConfigInvalid("certificate does not match key pair".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Plaintext,
    #[default]
    Secure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelConfig {
    pub mode: ChannelMode,
    /// Ordered by preference.
    pub suites: Vec<CipherSuite>,
    /// Refuse any frame that does not belong to an authenticated session.
    pub trap_all: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { mode: ChannelMode::Secure, suites: CipherSuite::all_builtin(), trap_all: true }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    mode: Option<ChannelMode>,
    suites: Option<Vec<SuiteNames>>,
    trap_all: Option<bool>,
}

impl ChannelConfig {
    pub fn plaintext() -> Self {
        Self { mode: ChannelMode::Plaintext, trap_all: false, ..Self::default() }
    }

    pub fn with_suites(suites: Vec<CipherSuite>) -> Self {
        Self { suites, ..Self::default() }
    }

    /// Parses `suites: [{sig, kem, aead}, ...]`, `trap_all` and `mode`.
    /// Absent keys keep their defaults.
    pub fn from_yaml(text: &str) -> Result<Self, ChannelError> {
        let mut config = Self::default();
        if text.trim().is_empty() {
            return Ok(config);
        }
        let file: ConfigFile =
            serde_yaml::from_str(text).map_err(|e| ChannelError::ConfigInvalid(e.to_string()))?;
        if let Some(mode) = file.mode {
            config.mode = mode;
        }
        if let Some(suites) = file.suites {
            config.suites = suites.iter().map(CipherSuite::try_from).collect::<Result<_, _>>()?;
            if config.suites.is_empty() {
                return Err(ChannelError::ConfigInvalid("suite list is empty".into()));
            }
        }
        if let Some(trap_all) = file.trap_all {
            config.trap_all = trap_all;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ChannelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ChannelError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_yaml(&text)
    }
}

/// Returns the configured mode, warning loudly when it is plaintext.
pub fn channel_mode(config: &ChannelConfig) -> ChannelMode {
    if config.mode == ChannelMode::Plaintext {
        tracing::warn!("PLAINTEXT CHANNEL: traffic is neither authenticated nor encrypted; demo use only");
    }
    config.mode
}

/// Observer for every frame crossing a connection, as transmitted.
pub trait FrameTap: Send + Sync {
    fn record(&self, outbound: bool, bytes: &[u8]);
}

impl FrameTap for () {
    fn record(&self, _: bool, _: &[u8]) {}
}

async fn send<W: AsyncWrite + Unpin>(w: &mut W, tap: &dyn FrameTap, bytes: &[u8]) -> Result<(), ChannelError> {
    tap.record(true, bytes);
    write_bytes(w, bytes).await
}

async fn recv<R: AsyncRead + Unpin>(r: &mut R, tap: &dyn FrameTap) -> Result<Frame, ChannelError> {
    let frame = read_frame(r).await?.ok_or(ChannelError::ConnectionClosed)?;
    tap.record(false, &frame.encode()?);
    Ok(frame)
}

/// Runs the initiator side of the handshake over `stream`.
pub async fn connect_secure<S: AsyncRead + AsyncWrite + Unpin>(
    stream: &mut S,
    config: &ChannelConfig,
    credentials: &Credentials,
    clock: &dyn Clock,
    tap: &dyn FrameTap,
) -> Result<SecurityAssociation, ChannelError> {
    let (mut state, hello) = handshake_initiate(config, credentials)?;
    send(stream, tap, &hello).await?;
    let reply = recv(stream, tap).await?.encode()?;
    finish_step(stream, tap, state.step(&reply, clock))
        .await?
        .ok_or_else(|| ChannelError::ProtocolViolation("handshake did not complete".into()))
}

/// Runs the responder side, given the connection's first frame.
pub async fn accept_secure<S: AsyncRead + AsyncWrite + Unpin>(
    stream: &mut S,
    first: Frame,
    config: &ChannelConfig,
    credentials: &Credentials,
    clock: &dyn Clock,
    tap: &dyn FrameTap,
) -> Result<SecurityAssociation, ChannelError> {
    if first.frame_type != FrameType::ClientHello && config.trap_all {
        send(stream, tap, &AlertReason::PlaintextRejected.frame()).await.ok();
        return Err(ChannelError::PlaintextRejected);
    }
    let mut state = handshake_respond(config, credentials)?;
    finish_step(stream, tap, state.step(&first.encode()?, clock)).await?;
    let finish = recv(stream, tap).await?.encode()?;
    finish_step(stream, tap, state.step(&finish, clock))
        .await?
        .ok_or_else(|| ChannelError::ProtocolViolation("handshake did not complete".into()))
}

async fn finish_step<W: AsyncWrite + Unpin>(
    w: &mut W,
    tap: &dyn FrameTap,
    result: Result<StepOutput, HandshakeFailure>,
) -> Result<Option<SecurityAssociation>, ChannelError> {
    match result {
        Ok(out) => {
            if let Some(bytes) = out.outgoing {
                send(w, tap, &bytes).await?;
            }
            Ok(out.established)
        }
        Err(failure) => {
            if let Some(alert) = failure.alert {
                send(w, tap, &alert).await.ok();
            }
            Err(failure.error)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::crypto::SchemeId;
    use crate::pki::{create_ca, CaIdentity, Role, Validity};

    const NOW: u64 = 1_700_000_000;

    fn ca(name: &str, scheme: SchemeId) -> CaIdentity {
        create_ca(name, scheme, Validity::days_from(NOW, 10)).unwrap()
    }

    fn creds(ca: &mut CaIdentity, subject: &str, trust: TrustStore) -> Credentials {
        let (cert, kp) =
            ca.issue_identity(subject, Role::Agent, SchemeId::HASH_MERKLE, Validity::days_from(NOW, 10)).unwrap();
        Credentials::new(cert, kp, trust).unwrap()
    }

    fn pair() -> (Credentials, Credentials) {
        let mut root = ca("root", SchemeId::HASH_MERKLE);
        let trust = root.trust_store();
        (creds(&mut root, "client", trust.clone()), creds(&mut root, "server", trust))
    }

    fn clock() -> ManualClock {
        ManualClock::new(NOW * 1000)
    }

    fn run(
        client: &Credentials,
        server: &Credentials,
        config: &ChannelConfig,
    ) -> Result<(SecurityAssociation, SecurityAssociation), ChannelError> {
        let clock = clock();
        let (mut c, hello) = handshake_initiate(config, client)?;
        let mut s = handshake_respond(config, server)?;
        let sh = s.step(&hello, &clock).map_err(|f| f.error)?.outgoing.unwrap();
        let out = c.step(&sh, &clock).map_err(|f| f.error)?;
        let csa = out.established.unwrap();
        let ssa = s.step(&out.outgoing.unwrap(), &clock).map_err(|f| f.error)?.established.unwrap();
        Ok((csa, ssa))
    }

    #[test]
    fn handshake_agrees_on_keys() {
        let (c, s) = pair();
        let (mut csa, mut ssa) = run(&c, &s, &ChannelConfig::default()).unwrap();
        assert_eq!(csa.keys(), ssa.keys());
        assert_eq!(csa.suite, CipherSuite::post_quantum_default());
        assert_eq!(csa.peer_subject, "server");
        assert_eq!(ssa.peer_subject, "client");
        let f = csa.seal_frame(b"ping").unwrap();
        assert_eq!(ssa.open_frame(&f).unwrap(), b"ping");
    }

    #[test]
    fn untrusted_server_is_alerted() {
        let mut root = ca("root", SchemeId::HASH_MERKLE);
        let mut rogue = ca("rogue", SchemeId::HASH_MERKLE);
        let trust = root.trust_store();
        let c = creds(&mut root, "client", trust.clone());
        let s = creds(&mut rogue, "server", trust);
        let clock = clock();
        let config = ChannelConfig::default();
        let (mut cs, hello) = handshake_initiate(&config, &c).unwrap();
        let mut ss = handshake_respond(&config, &s).unwrap();
        let sh = ss.step(&hello, &clock).unwrap().outgoing.unwrap();
        let failure = cs.step(&sh, &clock).unwrap_err();
        assert!(matches!(failure.error, ChannelError::BadCertificate(_)));
        assert_eq!(failure.alert, Some(AlertReason::BadCertificate.frame()));
        assert_eq!(cs.phase(), Phase::Failed);
        assert!(cs.step(&sh, &clock).is_err(), "failure is terminal");
    }

    #[test]
    fn flipped_server_signature_bit() {
        let (c, s) = pair();
        let clock = clock();
        let config = ChannelConfig::default();
        let (mut cs, hello) = handshake_initiate(&config, &c).unwrap();
        let mut ss = handshake_respond(&config, &s).unwrap();
        let mut sh = ss.step(&hello, &clock).unwrap().outgoing.unwrap();
        // Signature reveal values start right after the signature length field.
        let n = sh.len();
        let sig_len = crate::crypto::hash_merkle::signature_len(10);
        sh[n - sig_len + 5] ^= 0x10;
        assert_eq!(cs.step(&sh, &clock).unwrap_err().error, ChannelError::BadTranscriptSignature);
    }

    #[test]
    fn modified_client_hello_breaks_transcript() {
        let (c, s) = pair();
        let clock = clock();
        let config = ChannelConfig::default();
        let (mut cs, mut hello) = handshake_initiate(&config, &c).unwrap();
        // An on-path attacker rewrites the client nonce.
        hello[HEADER_LEN + 1] ^= 1;
        let mut ss = handshake_respond(&config, &s).unwrap();
        let sh = ss.step(&hello, &clock).unwrap().outgoing.unwrap();
        assert_eq!(cs.step(&sh, &clock).unwrap_err().error, ChannelError::BadTranscriptSignature);
    }

    #[test]
    fn suite_mismatch_is_no_common_suite() {
        let (c, s) = pair();
        let clock = clock();
        let a = CipherSuite::post_quantum_default();
        let b = CipherSuite { aead: SchemeId::CHACHA20_POLY1305, ..a };
        let (_, hello) = handshake_initiate(&ChannelConfig::with_suites(vec![a]), &c).unwrap();
        let mut ss = handshake_respond(&ChannelConfig::with_suites(vec![b]), &s).unwrap();
        let f = ss.step(&hello, &clock).unwrap_err();
        assert_eq!(f.error, ChannelError::NoCommonSuite);
        assert_eq!(f.alert, Some(AlertReason::NoCommonSuite.frame()));
    }

    #[test]
    fn out_of_order_frame_is_protocol_violation() {
        let (c, _) = pair();
        let (mut cs, hello) = handshake_initiate(&ChannelConfig::default(), &c).unwrap();
        let err = cs.step(&hello, &clock()).unwrap_err().error;
        assert!(matches!(err, ChannelError::ProtocolViolation(_)));
    }

    #[test]
    fn mismatched_keypair_rejected() {
        let mut root = ca("root", SchemeId::HASH_MERKLE);
        let (cert, _) = root.issue_identity("a", Role::Agent, SchemeId::HASH_MERKLE, Validity::days_from(NOW, 1)).unwrap();
        let other = crate::crypto::hash_merkle::keygen_with_depth(&[9; 32], 1).unwrap();
        assert!(matches!(
            Credentials::new(cert, other, root.trust_store()),
            Err(ChannelError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn config_yaml() {
        let c = ChannelConfig::from_yaml(
            "suites:\n  - {sig: rsa-2048, kem: x25519, aead: chacha20-poly1305}\ntrap_all: false\n",
        )
        .unwrap();
        assert_eq!(c.suites, vec![CipherSuite::from_names("rsa-2048", "x25519", "chacha20-poly1305").unwrap()]);
        assert!(!c.trap_all);
        assert_eq!(c.mode, ChannelMode::Secure);
        assert_eq!(ChannelConfig::from_yaml("").unwrap(), ChannelConfig::default());
        assert!(ChannelConfig::from_yaml("suites: []").is_err());
        assert!(ChannelConfig::from_yaml("bogus: 1").is_err());
        assert_eq!(channel_mode(&ChannelConfig::default()), ChannelMode::Secure);
    }

    #[tokio::test]
    async fn async_handshake_and_trap_all() {
        let (c, s) = pair();
        let config = ChannelConfig::default();
        let (mut a, mut b) = tokio::io::duplex(1 << 16);
        let server = {
            let (config, s) = (config.clone(), s.clone());
            tokio::spawn(async move {
                let first = read_frame(&mut b).await.unwrap().unwrap();
                accept_secure(&mut b, first, &config, &s, &clock(), &()).await
            })
        };
        let csa = connect_secure(&mut a, &config, &c, &clock(), &()).await.unwrap();
        let ssa = server.await.unwrap().unwrap();
        assert_eq!(csa.keys(), ssa.keys());

        let (mut a, mut b) = tokio::io::duplex(1 << 16);
        let plain = Frame::new(FrameType::Data, b"hi".to_vec());
        let r = accept_secure(&mut b, plain, &config, &s, &clock(), &()).await;
        assert_eq!(r.unwrap_err(), ChannelError::PlaintextRejected);
        let alert = read_frame(&mut a).await.unwrap().unwrap();
        assert_eq!(alert.body, vec![AlertReason::PlaintextRejected.code()]);
    }
}
