//! Post-quantum-ready secure publish/subscribe command and control for
//! mobile agents.
//!
//! The crate is layered bottom-up:
//!
//! - [`crypto`]: scheme registry, a from-scratch hash-based signature scheme
//!   (Lamport one-time keys under a Merkle tree), a classical RSA-2048
//!   baseline, KEMs, AEADs and HKDF.
//! - [`pki`]: a single-level certificate authority and trust store.
//! - [`envelope`]: signed application-layer command envelopes with
//!   sliding-window replay protection.
//! - [`channel`]: a mutually authenticated sign-and-KEM handshake producing
//!   directional AEAD session keys.
//! - [`authz`]: topic publish/subscribe allowlists, default deny.
//! - [`bus`]: the broker, client sessions, security-event log and capture tap.
//! - [`agents`]: the demonstration cast (ground station, mobile agent,
//!   monitor, relay, attacker) and the scenario runner.
//! - [`bench`]: sign/verify, throughput and handshake measurement harnesses.
//! - [`cli`]: the `pqc2` command line.

pub mod agents;
pub mod armor;
pub mod authz;
pub mod bench;
pub mod bus;
pub mod channel;
pub mod cli;
pub mod clock;
pub mod codec;
pub mod crypto;
pub mod envelope;
pub mod pki;

pub use clock::{Clock, ManualClock, SystemClock};
