use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use chacha20poly1305::ChaCha20Poly1305;
use serde::{Deserialize, Serialize};

use super::{CryptoError, SchemeDescriptor, SchemeId, SchemeKind};

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AeadAlgorithm {
    Aes256Gcm,
    ChaCha20Poly1305,
}

fn check(key: &[u8], nonce: &[u8]) -> Result<(), CryptoError> {
    if key.len() != KEY_LEN {
        return Err(CryptoError::BadLength { what: "aead key", expected: KEY_LEN, got: key.len() });
    }
    if nonce.len() != NONCE_LEN {
        return Err(CryptoError::BadLength { what: "aead nonce", expected: NONCE_LEN, got: nonce.len() });
    }
    Ok(())
}

impl AeadAlgorithm {
    pub fn id(self) -> SchemeId {
        match self {
            AeadAlgorithm::Aes256Gcm => SchemeId::AES_256_GCM,
            AeadAlgorithm::ChaCha20Poly1305 => SchemeId::CHACHA20_POLY1305,
        }
    }

    pub fn descriptor(self) -> SchemeDescriptor {
        let name = match self {
            AeadAlgorithm::Aes256Gcm => "aes-256-gcm",
            AeadAlgorithm::ChaCha20Poly1305 => "chacha20-poly1305",
        };
        SchemeDescriptor {
            scheme_id: self.id(),
            kind: SchemeKind::Aead,
            name: name.into(),
            post_quantum: false,
            pubkey_len: 0,
            sig_or_ct_len: 0,
        }
    }

    pub fn seal(self, key: &[u8], nonce: &[u8], aad: &[u8], plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        check(key, nonce)?;
        let payload = Payload { msg: plaintext, aad };
        let nonce = Nonce::from_slice(nonce);
        let out = match self {
            AeadAlgorithm::Aes256Gcm => Aes256Gcm::new_from_slice(key).expect("length checked").encrypt(nonce, payload),
            AeadAlgorithm::ChaCha20Poly1305 => {
                ChaCha20Poly1305::new_from_slice(key).expect("length checked").encrypt(nonce, payload)
            }
        };
        out.map_err(|_| CryptoError::AuthenticationFailure)
    }

    pub fn open(self, key: &[u8], nonce: &[u8], aad: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        check(key, nonce)?;
        let payload = Payload { msg: ciphertext, aad };
        let nonce = Nonce::from_slice(nonce);
        let out = match self {
            AeadAlgorithm::Aes256Gcm => Aes256Gcm::new_from_slice(key).expect("length checked").decrypt(nonce, payload),
            AeadAlgorithm::ChaCha20Poly1305 => {
                ChaCha20Poly1305::new_from_slice(key).expect("length checked").decrypt(nonce, payload)
            }
        };
        out.map_err(|_| CryptoError::AuthenticationFailure)
    }
}
