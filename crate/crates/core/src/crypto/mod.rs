//! Scheme registry and the primitive operations every other layer builds on.
//!
//! Built-in scheme ids are fixed on the wire:
//!
//! | id | kind      | name                | post-quantum |
//! |----|-----------|---------------------|--------------|
//! | 1  | signature | `hash-merkle`       | yes          |
//! | 2  | signature | `rsa-2048`          | no           |
//! | 3  | kem       | `x25519`            | no           |
//! | 4  | kem       | `ml-kem-768`        | yes          |
//! | 16 | aead      | `aes-256-gcm`       | n/a          |
//! | 17 | aead      | `chacha20-poly1305` | n/a          |
//!
//! Id 0 marks an unsigned envelope and is never registered. Further
//! signature or KEM adapters may be registered at runtime under any other id.

mod aead;
pub mod hash_merkle;
mod kdf;
mod kem_impl;
pub mod keyfile;
mod rsa_baseline;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use aead::{AeadAlgorithm, KEY_LEN as AEAD_KEY_LEN, NONCE_LEN as AEAD_NONCE_LEN, TAG_LEN as AEAD_TAG_LEN};
pub use kdf::{kdf_derive, MAX_KDF_OUTPUT};
pub use kem_impl::{MlKem768, X25519Kem};
pub use rsa_baseline::Rsa2048;

pub use hash_merkle::{merkle_root, HashMerkle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemeId(pub u16);

impl SchemeId {
    pub const UNSIGNED: SchemeId = SchemeId(0);
    pub const HASH_MERKLE: SchemeId = SchemeId(1);
    pub const RSA_2048: SchemeId = SchemeId(2);
    pub const X25519: SchemeId = SchemeId(3);
    pub const ML_KEM_768: SchemeId = SchemeId(4);
    pub const AES_256_GCM: SchemeId = SchemeId(16);
    pub const CHACHA20_POLY1305: SchemeId = SchemeId(17);

    const RESERVED: [u16; 7] = [0, 1, 2, 3, 4, 16, 17];

    pub fn is_reserved(self) -> bool {
        Self::RESERVED.contains(&self.0)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Signature,
    Kem,
    Aead,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeDescriptor {
    pub scheme_id: SchemeId,
    pub kind: SchemeKind,
    pub name: String,
    pub post_quantum: bool,
    /// Public key length in bytes, 0 when variable.
    pub pubkey_len: usize,
    /// Signature or ciphertext length in bytes, 0 when variable.
    pub sig_or_ct_len: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unknown scheme {0}")]
    UnknownScheme(u16),
    #[error("scheme {id} is not a {expected:?} scheme")]
    WrongKind { id: u16, expected: SchemeKind },
    #[error("unknown scheme name {0:?}")]
    UnknownSchemeName(String),
    #[error("scheme {0} cannot derive keys deterministically from a seed")]
    SeedUnsupported(u16),
    #[error("one-time signature key exhausted")]
    KeyExhausted,
    #[error("KEM decapsulation failed")]
    DecapsulationFailure,
    #[error("AEAD authentication failed")]
    AuthenticationFailure,
    #[error("requested KDF output of {0} bytes exceeds 8160")]
    LengthTooLarge(usize),
    #[error("merkle tree needs a power-of-two leaf count, got {0}")]
    BadLeafCount(usize),
    #[error("bad {what} length: expected {expected}, got {got}")]
    BadLength { what: &'static str, expected: usize, got: usize },
    #[error("malformed key material: {0}")]
    BadKey(String),
    #[error("scheme id {0} is already registered")]
    DuplicateScheme(u16),
    #[error("scheme id {0} is reserved for a built-in scheme")]
    ReservedScheme(u16),
    #[error("signature scheme mismatch: key is {key}, signature is {sig}")]
    SchemeMismatch { key: u16, sig: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PublicKey {
    pub scheme: SchemeId,
    pub bytes: Vec<u8>,
}

impl PublicKey {
    pub fn new(scheme: SchemeId, bytes: Vec<u8>) -> Self {
        Self { scheme, bytes }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub scheme: SchemeId,
    pub bytes: Vec<u8>,
    /// One-time key index, present for `hash-merkle` signatures only.
    pub ots_index: Option<u32>,
}

impl Signature {
    /// Rebuilds a signature from its wire bytes, recovering the OTS index
    /// where the scheme embeds one.
    pub fn from_wire(scheme: SchemeId, bytes: Vec<u8>) -> Self {
        let ots_index = if scheme == SchemeId::HASH_MERKLE {
            hash_merkle::embedded_index(&bytes)
        } else {
            None
        };
        Self { scheme, bytes, ots_index }
    }

    pub fn unsigned() -> Self {
        Self { scheme: SchemeId::UNSIGNED, bytes: Vec::new(), ots_index: None }
    }
}

/// Secret half of a signature key pair. Stateful schemes mutate on every
/// signature, so signing takes `&mut self` and a key pair has exactly one
/// owner; share it behind a lock when several tasks need to sign.
pub trait Signer: Send + Sync {
    fn sign(&mut self, message: &[u8]) -> Result<Signature, CryptoError>;

    /// `None` for schemes without a usage bound.
    fn remaining_uses(&self) -> Option<u64>;

    /// Serialized secret key, reflecting the current state.
    fn secret_bytes(&self) -> Vec<u8>;
}

pub struct SignatureKeyPair {
    scheme: SchemeId,
    public_key: Vec<u8>,
    signer: Box<dyn Signer>,
}

impl fmt::Debug for SignatureKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SignatureKeyPair")
            .field("scheme", &self.scheme)
            .field("public_key", &hex::encode(&self.public_key[..self.public_key.len().min(16)]))
            .field("remaining_uses", &self.remaining_uses())
            .finish_non_exhaustive()
    }
}

impl SignatureKeyPair {
    pub fn new(scheme: SchemeId, public_key: Vec<u8>, signer: Box<dyn Signer>) -> Self {
        Self { scheme, public_key, signer }
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey::new(self.scheme, self.public_key.clone())
    }

    pub fn public_key_bytes(&self) -> &[u8] {
        &self.public_key
    }

    pub fn secret_key(&self) -> Vec<u8> {
        self.signer.secret_bytes()
    }

    pub fn remaining_uses(&self) -> Option<u64> {
        self.signer.remaining_uses()
    }

    pub fn sign(&mut self, message: &[u8]) -> Result<Signature, CryptoError> {
        self.signer.sign(message)
    }
}

pub trait SignatureScheme: Send + Sync {
    fn descriptor(&self) -> SchemeDescriptor;

    fn keygen(&self, seed: Option<&[u8; 32]>) -> Result<SignatureKeyPair, CryptoError>;

    /// Rebuilds a key pair from [`Signer::secret_bytes`] output.
    fn load_secret(&self, secret: &[u8]) -> Result<SignatureKeyPair, CryptoError>;

    /// Must be total: malformed keys or signatures return `false`.
    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool;
}

#[derive(Clone, PartialEq, Eq)]
pub struct KemKeyPair {
    pub scheme: SchemeId,
    pub public_key: Vec<u8>,
    pub secret_key: Vec<u8>,
}

impl fmt::Debug for KemKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KemKeyPair")
            .field("scheme", &self.scheme)
            .field("public_key_len", &self.public_key.len())
            .finish_non_exhaustive()
    }
}

impl KemKeyPair {
    pub fn public(&self) -> PublicKey {
        PublicKey::new(self.scheme, self.public_key.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KemCiphertext {
    pub scheme: SchemeId,
    pub bytes: Vec<u8>,
}

#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret(pub [u8; 32]);

impl fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

impl SharedSecret {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

pub trait KemScheme: Send + Sync {
    fn descriptor(&self) -> SchemeDescriptor;
    fn keygen(&self) -> KemKeyPair;
    fn encapsulate(&self, public_key: &[u8]) -> Result<(Vec<u8>, SharedSecret), CryptoError>;
    fn decapsulate(&self, secret_key: &[u8], ciphertext: &[u8]) -> Result<SharedSecret, CryptoError>;
}

/// Directional keys and IVs for one secure-channel session.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKeys {
    pub c2s_key: [u8; 32],
    pub s2c_key: [u8; 32],
    pub c2s_iv: [u8; 12],
    pub s2c_iv: [u8; 12],
}

impl fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SessionKeys(..)")
    }
}

#[derive(Clone)]
enum Entry {
    Signature(Arc<dyn SignatureScheme>),
    Kem(Arc<dyn KemScheme>),
    Aead(AeadAlgorithm),
}

impl Entry {
    fn descriptor(&self) -> SchemeDescriptor {
        match self {
            Entry::Signature(s) => s.descriptor(),
            Entry::Kem(k) => k.descriptor(),
            Entry::Aead(a) => a.descriptor(),
        }
    }
}

pub struct Registry {
    entries: RwLock<BTreeMap<u16, Entry>>,
}

impl Registry {
    pub fn builtin() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(1, Entry::Signature(Arc::new(HashMerkle)));
        entries.insert(2, Entry::Signature(Arc::new(Rsa2048)));
        entries.insert(3, Entry::Kem(Arc::new(X25519Kem)));
        entries.insert(4, Entry::Kem(Arc::new(MlKem768)));
        entries.insert(16, Entry::Aead(AeadAlgorithm::Aes256Gcm));
        entries.insert(17, Entry::Aead(AeadAlgorithm::ChaCha20Poly1305));
        Self { entries: RwLock::new(entries) }
    }

    pub fn list(&self) -> Vec<SchemeDescriptor> {
        self.entries.read().values().map(Entry::descriptor).collect()
    }

    fn entry(&self, id: SchemeId) -> Result<Entry, CryptoError> {
        self.entries.read().get(&id.0).cloned().ok_or(CryptoError::UnknownScheme(id.0))
    }

    pub fn descriptor(&self, id: SchemeId) -> Result<SchemeDescriptor, CryptoError> {
        self.entry(id).map(|e| e.descriptor())
    }

    pub fn by_name(&self, name: &str) -> Result<SchemeDescriptor, CryptoError> {
        self.list()
            .into_iter()
            .find(|d| d.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| CryptoError::UnknownSchemeName(name.to_string()))
    }

    pub fn signature(&self, id: SchemeId) -> Result<Arc<dyn SignatureScheme>, CryptoError> {
        match self.entry(id)? {
            Entry::Signature(s) => Ok(s),
            _ => Err(CryptoError::WrongKind { id: id.0, expected: SchemeKind::Signature }),
        }
    }

    pub fn kem(&self, id: SchemeId) -> Result<Arc<dyn KemScheme>, CryptoError> {
        match self.entry(id)? {
            Entry::Kem(k) => Ok(k),
            _ => Err(CryptoError::WrongKind { id: id.0, expected: SchemeKind::Kem }),
        }
    }

    pub fn aead(&self, id: SchemeId) -> Result<AeadAlgorithm, CryptoError> {
        match self.entry(id)? {
            Entry::Aead(a) => Ok(a),
            _ => Err(CryptoError::WrongKind { id: id.0, expected: SchemeKind::Aead }),
        }
    }

    fn insert(&self, entry: Entry) -> Result<(), CryptoError> {
        let id = entry.descriptor().scheme_id;
        if id.is_reserved() {
            return Err(CryptoError::ReservedScheme(id.0));
        }
        let mut entries = self.entries.write();
        if entries.contains_key(&id.0) {
            return Err(CryptoError::DuplicateScheme(id.0));
        }
        entries.insert(id.0, entry);
        Ok(())
    }

    /// Adds an external signature scheme (for example a lattice scheme).
    pub fn register_signature(&self, scheme: Arc<dyn SignatureScheme>) -> Result<(), CryptoError> {
        self.insert(Entry::Signature(scheme))
    }

    pub fn register_kem(&self, scheme: Arc<dyn KemScheme>) -> Result<(), CryptoError> {
        self.insert(Entry::Kem(scheme))
    }
}

/// Process-wide registry. Every layer resolves schemes through this.
pub fn registry() -> &'static Registry {
    static REGISTRY: OnceLock<Registry> = OnceLock::new();
    REGISTRY.get_or_init(Registry::builtin)
}

pub fn list_schemes() -> Vec<SchemeDescriptor> {
    registry().list()
}

pub fn scheme_by_name(name: &str) -> Result<SchemeDescriptor, CryptoError> {
    registry().by_name(name)
}

pub fn sig_keygen(scheme: SchemeId, seed: Option<&[u8; 32]>) -> Result<SignatureKeyPair, CryptoError> {
    registry().signature(scheme)?.keygen(seed)
}

pub fn load_signature_key(scheme: SchemeId, secret: &[u8]) -> Result<SignatureKeyPair, CryptoError> {
    registry().signature(scheme)?.load_secret(secret)
}

pub fn sign(keypair: &mut SignatureKeyPair, message: &[u8]) -> Result<Signature, CryptoError> {
    keypair.sign(message)
}

/// Total over arbitrary input: unknown schemes, mismatched ids and malformed
/// bytes all yield `false`.
pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    if public_key.scheme != signature.scheme || signature.bytes.is_empty() {
        return false;
    }
    if signature.scheme == SchemeId::HASH_MERKLE
        && signature.ots_index.is_some()
        && signature.ots_index != hash_merkle::embedded_index(&signature.bytes)
    {
        return false;
    }
    match registry().signature(public_key.scheme) {
        Ok(scheme) => scheme.verify(&public_key.bytes, message, &signature.bytes),
        Err(_) => false,
    }
}

pub fn kem_keygen(scheme: SchemeId) -> Result<KemKeyPair, CryptoError> {
    Ok(registry().kem(scheme)?.keygen())
}

pub fn encapsulate(public_key: &PublicKey) -> Result<(KemCiphertext, SharedSecret), CryptoError> {
    let (ct, ss) = registry().kem(public_key.scheme)?.encapsulate(&public_key.bytes)?;
    Ok((KemCiphertext { scheme: public_key.scheme, bytes: ct }, ss))
}

pub fn decapsulate(keypair: &KemKeyPair, ciphertext: &KemCiphertext) -> Result<SharedSecret, CryptoError> {
    if keypair.scheme != ciphertext.scheme {
        return Err(CryptoError::DecapsulationFailure);
    }
    registry().kem(keypair.scheme)?.decapsulate(&keypair.secret_key, &ciphertext.bytes)
}

pub fn aead_seal(
    scheme: SchemeId,
    key: &[u8],
    nonce: &[u8],
    aad: &[u8],
    plaintext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    registry().aead(scheme)?.seal(key, nonce, aad, plaintext)
}

pub fn aead_open(
    scheme: SchemeId,
    key: &[u8],
    nonce: &[u8],
    aad: &[u8],
    ciphertext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    registry().aead(scheme)?.open(key, nonce, aad, ciphertext)
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_listing_is_sorted_and_complete() {
        let list = list_schemes();
        let ids: Vec<u16> = list.iter().map(|d| d.scheme_id.0).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 16, 17]);
        let one = list.iter().find(|d| d.scheme_id.0 == 1).unwrap();
        assert!(one.post_quantum);
        assert_eq!(one.kind, SchemeKind::Signature);
        let two = list.iter().find(|d| d.scheme_id.0 == 2).unwrap();
        assert!(!two.post_quantum);
    }

    #[test]
    fn unknown_scheme_rejected() {
        assert!(matches!(sig_keygen(SchemeId(999), None), Err(CryptoError::UnknownScheme(999))));
        assert!(matches!(kem_keygen(SchemeId(999)), Err(CryptoError::UnknownScheme(999))));
    }

    #[test]
    fn kind_is_enforced() {
        assert!(matches!(
            sig_keygen(SchemeId::X25519, None),
            Err(CryptoError::WrongKind { id: 3, expected: SchemeKind::Signature })
        ));
        assert!(matches!(kem_keygen(SchemeId::HASH_MERKLE), Err(CryptoError::WrongKind { .. })));
    }

    #[test]
    fn names_resolve() {
        assert_eq!(scheme_by_name("hash-merkle").unwrap().scheme_id, SchemeId::HASH_MERKLE);
        assert_eq!(scheme_by_name("AES-256-GCM").unwrap().scheme_id, SchemeId::AES_256_GCM);
        assert!(scheme_by_name("bliss").is_err());
    }

    #[test]
    fn reserved_ids_cannot_be_replaced() {
        let reg = Registry::builtin();
        assert_eq!(
            reg.register_signature(Arc::new(HashMerkle)),
            Err(CryptoError::ReservedScheme(1))
        );
    }

    #[test]
    fn verify_rejects_scheme_mismatch() {
        let mut kp = hash_merkle::keygen_with_depth(&[7; 32], 1).unwrap();
        let mut sig = kp.sign(b"m").unwrap();
        assert!(verify(&kp.public_key(), b"m", &sig));
        sig.scheme = SchemeId::RSA_2048;
        assert!(!verify(&kp.public_key(), b"m", &sig));
    }
}
