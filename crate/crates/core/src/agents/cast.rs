use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use rayon::prelude::*;

use crate::channel::{Credentials, SharedKeyPair};
use crate::clock::{Clock, SystemClock};
use crate::crypto::{self, hash_merkle, PublicKey, SchemeId, SignatureKeyPair};
use crate::pki::{create_ca, Certificate, Role, TrustStore, Validity};

use super::AgentError;

#[derive(Clone)]
pub struct CastMember {
    pub certificate: Certificate,
    pub keypair: SharedKeyPair,
}

/// A throwaway CA plus one certified identity per participant, all in memory.
#[derive(Clone)]
pub struct Cast {
    pub ca: Certificate,
    pub trust: TrustStore,
    members: BTreeMap<String, CastMember>,
}

impl Cast {
    /// Subject, role and hash-merkle tree depth of the standard cast. The
    /// ground station and relay sign every command, so they get bigger trees.
    pub const DEMO: [(&'static str, Role, u8); 6] = [
        ("broker", Role::Broker, 10),
        ("ground_station", Role::GroundStation, 12),
        ("monitor", Role::Monitor, 10),
        ("agent", Role::Agent, 10),
        ("relay", Role::Relay, 12),
        ("attacker", Role::Attacker, 10),
    ];

    pub fn demo(scheme: SchemeId) -> Result<Self, AgentError> {
        Self::generate(scheme, &Self::DEMO)
    }

    /// `depth` only matters for hash-merkle keys.
    pub fn generate(scheme: SchemeId, members: &[(&str, Role, u8)]) -> Result<Self, AgentError> {
        let validity = Validity::days_from(SystemClock.now_secs(), 365);
        let mut ca = create_ca("pqc2-demo-ca", scheme, validity)?;
        let keys: Vec<SignatureKeyPair> = members
            .par_iter()
            .map(|&(_, _, depth)| {
                if scheme == SchemeId::HASH_MERKLE {
                    hash_merkle::keygen_random(depth)
                } else {
                    crypto::sig_keygen(scheme, None)
                }
            })
            .collect::<Result<_, _>>()
            .map_err(crate::pki::PkiError::from)?;
        let mut out = BTreeMap::new();
        for (&(subject, role, _), keypair) in members.iter().zip(keys) {
            let certificate = ca.issue_certificate(subject, role, &keypair.public_key(), validity)?;
            out.insert(subject.to_string(), CastMember { certificate, keypair: Arc::new(Mutex::new(keypair)) });
        }
        Ok(Self { trust: ca.trust_store(), ca: ca.certificate, members: out })
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.members.keys().map(String::as_str)
    }

    pub fn member(&self, subject: &str) -> Option<&CastMember> {
        self.members.get(subject)
    }

    pub fn credentials(&self, subject: &str) -> Result<Credentials, AgentError> {
        let m = self
            .member(subject)
            .ok_or_else(|| AgentError::ScenarioSetupFailure(format!("no cast member named {subject}")))?;
        Ok(Credentials { certificate: m.certificate.clone(), keypair: m.keypair.clone(), trust: Arc::new(self.trust.clone()) })
    }

    /// Every member's envelope verification key.
    pub fn public_keys(&self) -> HashMap<String, PublicKey> {
        self.members.iter().map(|(s, m)| (s.clone(), m.certificate.public_key())).collect()
    }
}
