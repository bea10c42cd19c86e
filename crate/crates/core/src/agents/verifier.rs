use std::collections::HashMap;
use std::sync::Arc;

use crate::bus::BusMode;
use crate::clock::Clock;
use crate::crypto::PublicKey;
use crate::envelope::{Envelope, RejectReason, ReplayGuard, StalenessPolicy};
use crate::pki::{Certificate, TrustStore};

/// Receiver-side envelope checks for one node.
///
/// When the run does not use application signatures every envelope passes:
/// the node then relies entirely on the transport.
pub struct Verifier {
    enforce: bool,
    keys: HashMap<String, PublicKey>,
    guard: ReplayGuard,
    staleness: StalenessPolicy,
    clock: Arc<dyn Clock>,
}

impl Verifier {
    pub fn new(mode: BusMode, keys: HashMap<String, PublicKey>, clock: Arc<dyn Clock>) -> Self {
        Self { enforce: mode.app_sig(), keys, guard: ReplayGuard::new(), staleness: StalenessPolicy::disabled(), clock }
    }

    /// Always checks signatures, whatever the run mode.
    pub fn strict(keys: HashMap<String, PublicKey>, clock: Arc<dyn Clock>) -> Self {
        Self { enforce: true, ..Self::new(BusMode::AppSig, keys, clock) }
    }

    /// Trusts the keys of every certificate that verifies against `trust` now.
    pub fn keys_from_certificates(certs: &[Certificate], trust: &TrustStore, now_secs: u64) -> HashMap<String, PublicKey> {
        certs
            .iter()
            .filter(|c| trust.verify_certificate(c, now_secs).is_allow())
            .map(|c| (c.subject.clone(), c.public_key()))
            .collect()
    }

    pub fn with_staleness(mut self, policy: StalenessPolicy) -> Self {
        self.staleness = policy;
        self
    }

    pub fn enforcing(&self) -> bool {
        self.enforce
    }

    pub fn check<'e>(&mut self, envelope: &'e Envelope) -> Result<&'e [u8], RejectReason> {
        if !self.enforce {
            return Ok(&envelope.payload);
        }
        self.guard.open(&self.keys, envelope, self.staleness, self.clock.now_ms())
    }
}
