use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use crate::channel::SharedKeyPair;
use crate::clock::Clock;
use crate::crypto::keyfile;
use crate::envelope::{seal, seal_unsigned, Envelope, SequenceCounter};

use super::AgentError;

/// Produces this node's outgoing envelopes, one sequence counter per topic.
pub struct EnvelopeSource {
    sender: String,
    keypair: Option<SharedKeyPair>,
    counters: HashMap<String, SequenceCounter>,
    first_seq: u64,
    clock: Arc<dyn Clock>,
    persist: Option<PathBuf>,
}

impl EnvelopeSource {
    /// Signs with `keypair` when given, otherwise emits unsigned envelopes.
    pub fn new(sender: impl Into<String>, keypair: Option<SharedKeyPair>, clock: Arc<dyn Clock>) -> Self {
        Self { sender: sender.into(), keypair, counters: HashMap::new(), first_seq: 1, clock, persist: None }
    }

    /// Starts every topic's sequence at `first`, so a restarted node stays
    /// ahead of receivers that remember its previous run.
    pub fn starting_at(mut self, first: u64) -> Self {
        self.first_seq = first.max(1);
        self
    }

    /// Rewrites the key file after every signature, before the envelope is
    /// returned, so a crash can never lead to a one-time key being reused.
    pub fn persisting_to(mut self, path: PathBuf) -> Self {
        self.persist = Some(path);
        self
    }

    pub fn sender(&self) -> &str {
        &self.sender
    }

    pub fn is_signing(&self) -> bool {
        self.keypair.is_some()
    }

    pub fn seal(&mut self, topic: &str, payload: &[u8]) -> Result<Envelope, AgentError> {
        let first = self.first_seq;
        let counter = self.counters.entry(topic.to_string()).or_insert_with(|| SequenceCounter::starting_at(first));
        let Some(kp) = &self.keypair else {
            return Ok(seal_unsigned(&self.sender, topic, counter, payload, &*self.clock)?);
        };
        let mut kp = kp.lock();
        let env = seal(&mut kp, &self.sender, topic, counter, payload, &*self.clock)?;
        if let Some(path) = &self.persist {
            keyfile::write_secret(path, &kp).map_err(|e| AgentError::KeyFile(e.to_string()))?;
        }
        Ok(env)
    }
}
