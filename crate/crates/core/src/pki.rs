//! Single-level certificate authority: a self-signed CA certificate issues
//! end-entity certificates binding a subject identity to a public key.
//!
//! Binary layout, all integers big-endian:
//!
//! ```text
//! "PQCT" ‖ version:u8=1
//! ‖ subject (u16 len) ‖ role:u8 ‖ scheme_id:u16 ‖ public key (u32 len)
//! ‖ not_before:u64 ‖ not_after:u64 ‖ serial:u64 ‖ issuer (u16 len)
//! ‖ signature scheme:u16 ‖ signature (u32 len)
//! ```
//!
//! The issuer signs `"pqc2-cert-v1" ‖ <everything before the signature scheme>`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::armor::{self, ArmorError, CERT_LABEL};
use crate::codec::{CodecError, Reader, Writer};
use crate::crypto::{self, CryptoError, PublicKey, SchemeId, Signature, SignatureKeyPair};

pub const CERT_MAGIC: &[u8; 4] = b"PQCT";
pub const CERT_VERSION: u8 = 1;
pub const SIGNING_PREFIX: &[u8] = b"pqc2-cert-v1";
pub const DEFAULT_VALIDITY_SECS: u64 = 365 * 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    GroundStation,
    Monitor,
    Agent,
    Relay,
    Broker,
    Attacker,
    Other,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::GroundStation,
        Role::Monitor,
        Role::Agent,
        Role::Relay,
        Role::Broker,
        Role::Attacker,
        Role::Other,
    ];

    pub fn code(self) -> u8 {
        Role::ALL.iter().position(|r| *r == self).expect("role listed") as u8
    }

    pub fn from_code(code: u8) -> Option<Role> {
        Role::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::GroundStation => "ground_station",
            Role::Monitor => "monitor",
            Role::Agent => "agent",
            Role::Relay => "relay",
            Role::Broker => "broker",
            Role::Attacker => "attacker",
            Role::Other => "other",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = PkiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| PkiError::UnknownRole(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Validity {
    pub not_before: u64,
    pub not_after: u64,
}

impl Validity {
    pub fn new(not_before: u64, not_after: u64) -> Self {
        Self { not_before, not_after }
    }

    pub fn days_from(now: u64, days: u64) -> Self {
        Self { not_before: now, not_after: now + days * 86_400 }
    }
}

#[derive(Debug, Error)]
pub enum PkiError {
    #[error("CA name must not be empty")]
    EmptyName,
    #[error("certificate subject must not be empty")]
    EmptySubject,
    #[error("validity window is empty: not_before {not_before} >= not_after {not_after}")]
    InvalidWindow { not_before: u64, not_after: u64 },
    #[error("malformed certificate: {0}")]
    MalformedCertificate(String),
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("CA certificate for {0:?} does not verify under its own key")]
    NotSelfSigned(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Armor(#[from] ArmorError),
}

impl From<CodecError> for PkiError {
    fn from(e: CodecError) -> Self {
        PkiError::MalformedCertificate(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: String,
    pub role: Role,
    pub scheme_id: SchemeId,
    pub subject_public_key: Vec<u8>,
    pub not_before: u64,
    pub not_after: u64,
    pub serial: u64,
    pub issuer: String,
    pub issuer_signature: Signature,
}

struct Unsigned<'a> {
    subject: &'a str,
    role: Role,
    public_key: &'a PublicKey,
    validity: Validity,
    serial: u64,
    issuer: &'a str,
}

impl Unsigned<'_> {
    fn tbs(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        w.bytes(CERT_MAGIC).u8(CERT_VERSION);
        w.str16("subject", self.subject)?;
        w.u8(self.role.code()).u16(self.public_key.scheme.0);
        w.bytes32("subject public key", &self.public_key.bytes)?;
        w.u64(self.validity.not_before).u64(self.validity.not_after).u64(self.serial);
        w.str16("issuer", self.issuer)?;
        Ok(w.finish())
    }

    fn sign(self, key: &mut SignatureKeyPair) -> Result<Certificate, PkiError> {
        let tbs = self.tbs()?;
        let signature = key.sign(&[SIGNING_PREFIX, &tbs].concat())?;
        Ok(Certificate {
            subject: self.subject.to_string(),
            role: self.role,
            scheme_id: self.public_key.scheme,
            subject_public_key: self.public_key.bytes.clone(),
            not_before: self.validity.not_before,
            not_after: self.validity.not_after,
            serial: self.serial,
            issuer: self.issuer.to_string(),
            issuer_signature: signature,
        })
    }
}

impl Certificate {
    pub fn public_key(&self) -> PublicKey {
        PublicKey::new(self.scheme_id, self.subject_public_key.clone())
    }

    pub fn validity(&self) -> Validity {
        Validity::new(self.not_before, self.not_after)
    }

    pub fn is_self_issued(&self) -> bool {
        self.subject == self.issuer
    }

    fn tbs(&self) -> Vec<u8> {
        Unsigned {
            subject: &self.subject,
            role: self.role,
            public_key: &self.public_key(),
            validity: self.validity(),
            serial: self.serial,
            issuer: &self.issuer,
        }
        .tbs()
        .expect("decoded or issued certificates fit their length prefixes")
    }

    /// Exactly the bytes the issuer signed.
    pub fn signed_bytes(&self) -> Vec<u8> {
        [SIGNING_PREFIX, &self.tbs()].concat()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.tbs()).u16(self.issuer_signature.scheme.0);
        w.bytes32("signature", &self.issuer_signature.bytes).expect("signature fits u32");
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PkiError> {
        let mut r = Reader::new(bytes);
        r.expect(CERT_MAGIC)?;
        let version = r.u8()?;
        if version != CERT_VERSION {
            return Err(PkiError::MalformedCertificate(format!("unsupported version {version}")));
        }
        let subject = r.str16("subject")?;
        let role_code = r.u8()?;
        let role = Role::from_code(role_code)
            .ok_or_else(|| PkiError::MalformedCertificate(format!("unknown role code {role_code}")))?;
        let scheme_id = SchemeId(r.u16()?);
        let subject_public_key = r.bytes32()?.to_vec();
        let not_before = r.u64()?;
        let not_after = r.u64()?;
        let serial = r.u64()?;
        let issuer = r.str16("issuer")?;
        let sig_scheme = SchemeId(r.u16()?);
        let sig = r.bytes32()?.to_vec();
        r.finish()?;
        if subject.is_empty() {
            return Err(PkiError::MalformedCertificate("empty subject".into()));
        }
        if not_before >= not_after {
            return Err(PkiError::MalformedCertificate("empty validity window".into()));
        }
        if sig.is_empty() {
            return Err(PkiError::MalformedCertificate("empty signature".into()));
        }
        Ok(Certificate {
            subject,
            role,
            scheme_id,
            subject_public_key,
            not_before,
            not_after,
            serial,
            issuer,
            issuer_signature: Signature::from_wire(sig_scheme, sig),
        })
    }

    pub fn to_pem(&self) -> String {
        armor::armor(CERT_LABEL, &self.encode())
    }

    pub fn from_pem(text: &str) -> Result<Self, PkiError> {
        Self::decode(&armor::dearmor(CERT_LABEL, text)?)
    }
}

pub struct CaIdentity {
    pub name: String,
    pub keypair: SignatureKeyPair,
    pub next_serial: u64,
    pub certificate: Certificate,
}

impl fmt::Debug for CaIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CaIdentity")
            .field("name", &self.name)
            .field("next_serial", &self.next_serial)
            .finish_non_exhaustive()
    }
}

fn check_window(validity: Validity) -> Result<(), PkiError> {
    if validity.not_before >= validity.not_after {
        return Err(PkiError::InvalidWindow {
            not_before: validity.not_before,
            not_after: validity.not_after,
        });
    }
    Ok(())
}

/// Creates a CA with a freshly generated key of the given scheme.
pub fn create_ca(name: &str, scheme: SchemeId, validity: Validity) -> Result<CaIdentity, PkiError> {
    if name.is_empty() {
        return Err(PkiError::EmptyName);
    }
    let keypair = crypto::sig_keygen(scheme, None)?;
    create_ca_with_key(name, keypair, validity)
}

/// Self-signs a CA certificate (serial 0) over an existing key pair.
pub fn create_ca_with_key(
    name: &str,
    mut keypair: SignatureKeyPair,
    validity: Validity,
) -> Result<CaIdentity, PkiError> {
    if name.is_empty() {
        return Err(PkiError::EmptyName);
    }
    check_window(validity)?;
    let public = keypair.public_key();
    let certificate = Unsigned {
        subject: name,
        role: Role::Other,
        public_key: &public,
        validity,
        serial: 0,
        issuer: name,
    }
    .sign(&mut keypair)?;
    Ok(CaIdentity { name: name.to_string(), keypair, next_serial: 1, certificate })
}

impl CaIdentity {
    pub fn issue_certificate(
        &mut self,
        subject: &str,
        role: Role,
        subject_public_key: &PublicKey,
        validity: Validity,
    ) -> Result<Certificate, PkiError> {
        if subject.is_empty() {
            return Err(PkiError::EmptySubject);
        }
        check_window(validity)?;
        let cert = Unsigned {
            subject,
            role,
            public_key: subject_public_key,
            validity,
            serial: self.next_serial,
            issuer: &self.name,
        }
        .sign(&mut self.keypair)?;
        self.next_serial += 1;
        Ok(cert)
    }

    /// Generates a fresh key pair of `scheme` and certifies it.
    pub fn issue_identity(
        &mut self,
        subject: &str,
        role: Role,
        scheme: SchemeId,
        validity: Validity,
    ) -> Result<(Certificate, SignatureKeyPair), PkiError> {
        let keypair = crypto::sig_keygen(scheme, None)?;
        let cert = self.issue_certificate(subject, role, &keypair.public_key(), validity)?;
        Ok((cert, keypair))
    }

    pub fn trust_store(&self) -> TrustStore {
        TrustStore::new(vec![self.certificate.clone()]).expect("own certificate is self-signed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DenyReason {
    UnknownIssuer,
    BadSignature,
    Expired,
    NotYetValid,
    PinMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }
}

/// Installed CA certificates plus optional per-subject key pins.
#[derive(Debug, Clone, Default)]
pub struct TrustStore {
    ca_certificates: Vec<Certificate>,
    pinned_subjects: HashMap<String, PublicKey>,
}

fn self_verifies(cert: &Certificate) -> bool {
    cert.is_self_issued() && crypto::verify(&cert.public_key(), &cert.signed_bytes(), &cert.issuer_signature)
}

impl TrustStore {
    pub fn new(ca_certificates: Vec<Certificate>) -> Result<Self, PkiError> {
        let mut store = TrustStore::default();
        for ca in ca_certificates {
            store.add_ca(ca)?;
        }
        Ok(store)
    }

    pub fn add_ca(&mut self, ca: Certificate) -> Result<(), PkiError> {
        if !self_verifies(&ca) {
            return Err(PkiError::NotSelfSigned(ca.subject));
        }
        self.ca_certificates.push(ca);
        Ok(())
    }

    pub fn pin(&mut self, subject: &str, key: PublicKey) {
        self.pinned_subjects.insert(subject.to_string(), key);
    }

    pub fn ca_certificates(&self) -> &[Certificate] {
        &self.ca_certificates
    }

    /// Allow iff the issuer is installed, its signature holds, `now` lies in
    /// `[not_before, not_after]` for both certificates, and any pin matches.
    pub fn verify_certificate(&self, cert: &Certificate, now: u64) -> Decision {
        let Some(ca) = self.ca_certificates.iter().find(|ca| ca.subject == cert.issuer) else {
            return Decision::Deny(DenyReason::UnknownIssuer);
        };
        if !crypto::verify(&ca.public_key(), &cert.signed_bytes(), &cert.issuer_signature) {
            return Decision::Deny(DenyReason::BadSignature);
        }
        for c in [cert, ca] {
            if now < c.not_before {
                return Decision::Deny(DenyReason::NotYetValid);
            }
            if now > c.not_after {
                return Decision::Deny(DenyReason::Expired);
            }
        }
        if let Some(pin) = self.pinned_subjects.get(&cert.subject) {
            if *pin != cert.public_key() {
                return Decision::Deny(DenyReason::PinMismatch);
            }
        }
        Decision::Allow
    }
}

pub fn verify_certificate(store: &TrustStore, cert: &Certificate, now: u64) -> Decision {
    store.verify_certificate(cert, now)
}
