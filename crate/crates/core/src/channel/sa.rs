use super::frame::{self, FrameType, HEADER_LEN};
use super::{ChannelError, CipherSuite};
use crate::crypto::{self, kdf_derive, SessionKeys, SharedSecret};
use crate::envelope::ReplayWindow;
use crate::pki::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeRole {
    Initiator,
    Responder,
}

/// Derives the four directional values from `shared_secret ‖ nonce_c ‖ nonce_s`.
pub fn derive_session_keys(shared: &SharedSecret, client_nonce: &[u8; 32], server_nonce: &[u8; 32]) -> SessionKeys {
    let mut ikm = Vec::with_capacity(96);
    ikm.extend_from_slice(shared.as_bytes());
    ikm.extend_from_slice(client_nonce);
    ikm.extend_from_slice(server_nonce);
    let key = |label: &str| -> [u8; 32] { kdf_derive(&ikm, label, 32).unwrap().try_into().unwrap() };
    let iv = |label: &str| -> [u8; 12] { kdf_derive(&ikm, label, 12).unwrap().try_into().unwrap() };
    SessionKeys { c2s_key: key("c2s key"), s2c_key: key("s2c key"), c2s_iv: iv("c2s iv"), s2c_iv: iv("s2c iv") }
}

/// Directional IV XOR the counter, right-aligned big-endian.
pub fn frame_nonce(iv: &[u8; 12], counter: u64) -> [u8; 12] {
    let mut nonce = *iv;
    for (n, c) in nonce[4..].iter_mut().zip(counter.to_be_bytes()) {
        *n ^= c;
    }
    nonce
}

/// An established session. Counters start at 0 and are incremented before
/// each use, so the first DATA frame carries counter 1.
#[derive(Debug)]
pub struct SecurityAssociation {
    pub suite: CipherSuite,
    pub role: HandshakeRole,
    pub peer_subject: String,
    pub peer_role: Role,
    pub established_at_ms: u64,
    keys: SessionKeys,
    send_counter: u64,
    recv_window: ReplayWindow,
}

impl SecurityAssociation {
    pub(crate) fn new(
        suite: CipherSuite,
        role: HandshakeRole,
        keys: SessionKeys,
        peer_subject: String,
        peer_role: Role,
        established_at_ms: u64,
    ) -> Self {
        Self {
            suite,
            role,
            peer_subject,
            peer_role,
            established_at_ms,
            keys,
            send_counter: 0,
            recv_window: ReplayWindow::new(),
        }
    }

    pub fn keys(&self) -> &SessionKeys {
        &self.keys
    }

    pub fn send_counter(&self) -> u64 {
        self.send_counter
    }

    fn send_material(&self) -> (&[u8; 32], &[u8; 12]) {
        match self.role {
            HandshakeRole::Initiator => (&self.keys.c2s_key, &self.keys.c2s_iv),
            HandshakeRole::Responder => (&self.keys.s2c_key, &self.keys.s2c_iv),
        }
    }

    fn recv_material(&self) -> (&[u8; 32], &[u8; 12]) {
        match self.role {
            HandshakeRole::Initiator => (&self.keys.s2c_key, &self.keys.s2c_iv),
            HandshakeRole::Responder => (&self.keys.c2s_key, &self.keys.c2s_iv),
        }
    }

    /// Encrypts `plaintext` into a complete DATA frame.
    pub fn seal_frame(&mut self, plaintext: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if self.send_counter >= u64::MAX - 1 {
            return Err(ChannelError::CounterExhausted);
        }
        let counter = self.send_counter + 1;
        let body_len = 8 + plaintext.len() + crypto::AEAD_TAG_LEN;
        let header = frame::header(FrameType::Data, body_len)?;
        let (key, iv) = self.send_material();
        let ct = crypto::aead_seal(self.suite.aead, key, &frame_nonce(iv, counter), &header, plaintext)?;
        self.send_counter = counter;
        let mut out = Vec::with_capacity(HEADER_LEN + body_len);
        out.extend_from_slice(&header);
        out.extend_from_slice(&counter.to_be_bytes());
        out.extend_from_slice(&ct);
        Ok(out)
    }

    /// Decrypts a complete DATA frame. The replay window only records the
    /// counter once authentication succeeds.
    pub fn open_frame(&mut self, bytes: &[u8]) -> Result<Vec<u8>, ChannelError> {
        let frame = frame::Frame::decode(bytes)?;
        self.open_body(frame.frame_type, &frame.body)
    }

    pub fn open_body(&mut self, frame_type: FrameType, body: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if frame_type != FrameType::Data {
            return Err(ChannelError::ProtocolViolation(format!("{frame_type:?} frame after handshake")));
        }
        if body.len() < 8 {
            return Err(ChannelError::MalformedFrame("DATA body shorter than its counter".into()));
        }
        let counter = u64::from_be_bytes(body[..8].try_into().unwrap());
        if !self.recv_window.would_accept(counter) {
            return Err(ChannelError::Replay);
        }
        let header = frame::header(FrameType::Data, body.len())?;
        let (key, iv) = self.recv_material();
        let pt = crypto::aead_open(self.suite.aead, key, &frame_nonce(iv, counter), &header, &body[8..])
            .map_err(|_| ChannelError::AuthenticationFailure)?;
        self.recv_window.check(counter);
        Ok(pt)
    }
}

pub fn seal_frame(sa: &mut SecurityAssociation, plaintext: &[u8]) -> Result<Vec<u8>, ChannelError> {
    sa.seal_frame(plaintext)
}

pub fn open_frame(sa: &mut SecurityAssociation, bytes: &[u8]) -> Result<Vec<u8>, ChannelError> {
    sa.open_frame(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(aead: crypto::SchemeId) -> (SecurityAssociation, SecurityAssociation) {
        let suite = CipherSuite { aead, ..CipherSuite::post_quantum_default() };
        let keys = derive_session_keys(&SharedSecret([7; 32]), &[1; 32], &[2; 32]);
        let c = SecurityAssociation::new(suite, HandshakeRole::Initiator, keys.clone(), "s".into(), Role::Broker, 0);
        let s = SecurityAssociation::new(suite, HandshakeRole::Responder, keys, "c".into(), Role::Agent, 0);
        (c, s)
    }

    #[test]
    fn round_trip_both_directions() {
        for aead in [crypto::SchemeId::AES_256_GCM, crypto::SchemeId::CHACHA20_POLY1305] {
            let (mut c, mut s) = pair(aead);
            let f = c.seal_frame(b"hello").unwrap();
            assert_eq!(s.open_frame(&f).unwrap(), b"hello");
            let g = s.seal_frame(b"back").unwrap();
            assert_eq!(c.open_frame(&g).unwrap(), b"back");
        }
    }

    #[test]
    fn replay_and_direction_separation() {
        let (mut c, mut s) = pair(crypto::SchemeId::AES_256_GCM);
        let f = c.seal_frame(b"x").unwrap();
        s.open_frame(&f).unwrap();
        assert_eq!(s.open_frame(&f), Err(ChannelError::Replay));
        // The sender's own keys are the other direction's receive keys.
        let g = c.seal_frame(b"y").unwrap();
        assert_eq!(c.open_frame(&g), Err(ChannelError::AuthenticationFailure));
    }

    #[test]
    fn tampered_header_fails_auth() {
        let (mut c, mut s) = pair(crypto::SchemeId::AES_256_GCM);
        let mut f = c.seal_frame(b"payload").unwrap();
        let n = f.len();
        f[n - 1] ^= 1;
        assert_eq!(s.open_frame(&f), Err(ChannelError::AuthenticationFailure));
        // A rejected frame does not burn its counter.
        f[n - 1] ^= 1;
        assert_eq!(s.open_frame(&f).unwrap(), b"payload");
    }

    #[test]
    fn counter_exhaustion() {
        let (mut c, _) = pair(crypto::SchemeId::AES_256_GCM);
        c.send_counter = u64::MAX - 2;
        assert!(c.seal_frame(b"last").is_ok());
        assert_eq!(c.seal_frame(b"over"), Err(ChannelError::CounterExhausted));
    }

    #[test]
    fn keys_differ_by_direction() {
        let k = derive_session_keys(&SharedSecret([7; 32]), &[1; 32], &[2; 32]);
        assert_ne!(k.c2s_key, k.s2c_key);
        assert_ne!(k.c2s_iv, k.s2c_iv);
        assert_eq!(frame_nonce(&[0; 12], 0x0102), [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2]);
    }
}
