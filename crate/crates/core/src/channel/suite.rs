use std::fmt;

use serde::{Deserialize, Serialize};

use super::ChannelError;
use crate::crypto::{registry, scheme_by_name, SchemeId, SchemeKind};

/// A security association's algorithm choice: who signs, how the key is
/// agreed, and what encrypts the traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CipherSuite {
    pub signature: SchemeId,
    pub kem: SchemeId,
    pub aead: SchemeId,
}

/// Suite as written in configuration files, by scheme name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteNames {
    pub sig: String,
    pub kem: String,
    pub aead: String,
}

fn check_kind(id: SchemeId, kind: SchemeKind) -> Result<(), ChannelError> {
    let d = registry()
        .descriptor(id)
        .map_err(|e| ChannelError::ConfigInvalid(e.to_string()))?;
    if d.kind != kind {
        return Err(ChannelError::ConfigInvalid(format!("{} is not a {kind:?} scheme", d.name)));
    }
    Ok(())
}

fn name_of(id: SchemeId) -> String {
    registry().descriptor(id).map(|d| d.name).unwrap_or_else(|_| format!("#{id}"))
}

impl CipherSuite {
    pub fn new(signature: SchemeId, kem: SchemeId, aead: SchemeId) -> Result<Self, ChannelError> {
        check_kind(signature, SchemeKind::Signature)?;
        check_kind(kem, SchemeKind::Kem)?;
        check_kind(aead, SchemeKind::Aead)?;
        Ok(Self { signature, kem, aead })
    }

    pub fn from_names(sig: &str, kem: &str, aead: &str) -> Result<Self, ChannelError> {
        let id = |n: &str| {
            scheme_by_name(n)
                .map(|d| d.scheme_id)
                .map_err(|e| ChannelError::ConfigInvalid(e.to_string()))
        };
        Self::new(id(sig)?, id(kem)?, id(aead)?)
    }

    pub fn names(&self) -> SuiteNames {
        SuiteNames { sig: name_of(self.signature), kem: name_of(self.kem), aead: name_of(self.aead) }
    }

    /// Whether every component is believed quantum resistant.
    pub fn is_post_quantum(&self) -> bool {
        [self.signature, self.kem]
            .iter()
            .all(|id| registry().descriptor(*id).map(|d| d.post_quantum).unwrap_or(false))
    }

    /// The post-quantum default: hash-merkle signatures, ML-KEM-768, AES-256-GCM.
    pub fn post_quantum_default() -> Self {
        Self { signature: SchemeId::HASH_MERKLE, kem: SchemeId::ML_KEM_768, aead: SchemeId::AES_256_GCM }
    }

    /// The classical comparison point: RSA-2048 signatures with X25519.
    pub fn classical_baseline() -> Self {
        Self { signature: SchemeId::RSA_2048, kem: SchemeId::X25519, aead: SchemeId::AES_256_GCM }
    }

    /// Every combination of the built-in schemes, post-quantum signatures first.
    pub fn all_builtin() -> Vec<CipherSuite> {
        let mut out = Vec::new();
        for signature in [SchemeId::HASH_MERKLE, SchemeId::RSA_2048] {
            for kem in [SchemeId::ML_KEM_768, SchemeId::X25519] {
                for aead in [SchemeId::AES_256_GCM, SchemeId::CHACHA20_POLY1305] {
                    out.push(CipherSuite { signature, kem, aead });
                }
            }
        }
        out
    }
}

impl TryFrom<&SuiteNames> for CipherSuite {
    type Error = ChannelError;

    fn try_from(n: &SuiteNames) -> Result<Self, ChannelError> {
        CipherSuite::from_names(&n.sig, &n.kem, &n.aead)
    }
}

impl fmt::Display for CipherSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.names();
        write!(f, "{}+{}+{}", n.sig, n.kem, n.aead)
    }
}

/// The first suite in `local_policy` that the peer also offered.
pub fn negotiate_suite(offered: &[CipherSuite], local_policy: &[CipherSuite]) -> Result<CipherSuite, ChannelError> {
    local_policy
        .iter()
        .find(|s| offered.contains(s))
        .copied()
        .ok_or(ChannelError::NoCommonSuite)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn responder_preference_wins() {
        let a = CipherSuite::post_quantum_default();
        let b = CipherSuite::classical_baseline();
        assert_eq!(negotiate_suite(&[a, b], &[b, a]).unwrap(), b);
        assert_eq!(negotiate_suite(&[a], &[a]).unwrap(), a);
        assert_eq!(negotiate_suite(&[a], &[b]), Err(ChannelError::NoCommonSuite));
    }

    #[test]
    fn kinds_are_checked() {
        assert!(CipherSuite::from_names("hash-merkle", "ml-kem-768", "aes-256-gcm").is_ok());
        assert!(CipherSuite::from_names("ml-kem-768", "ml-kem-768", "aes-256-gcm").is_err());
        assert!(CipherSuite::from_names("hash-merkle", "ml-kem-768", "des").is_err());
    }

    #[test]
    fn builtin_grid() {
        let all = CipherSuite::all_builtin();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], CipherSuite::post_quantum_default());
        assert!(all[0].is_post_quantum());
        assert!(!CipherSuite::classical_baseline().is_post_quantum());
        assert_eq!(all[0].to_string(), "hash-merkle+ml-kem-768+aes-256-gcm");
    }
}
