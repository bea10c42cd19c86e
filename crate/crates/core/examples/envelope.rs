//! Signed command envelopes: sealing, the wire encoding, and the checks a
//! receiver applies (known sender, signature, replay window).
//!
//! ```text
//! cargo run --example envelope
//! ```

use std::collections::HashMap;

use pqc2::agents::velocity_payload;
use pqc2::crypto::hash_merkle;
use pqc2::envelope::{decode_wire, open, seal, ReplayWindow, SequenceCounter, StalenessPolicy};
use pqc2::ManualClock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clock = ManualClock::new(1_790_000_000_000);
    let mut key = hash_merkle::keygen_random(4)?;
    let keys = HashMap::from([("ground_station".to_string(), key.public_key())]);
    let mut counter = SequenceCounter::new();

    let first = seal(&mut key, "ground_station", "/command", &mut counter, &velocity_payload(0.5, 0.1), &clock)?;
    let wire = first.encode_wire()?;
    println!("envelope seq {} is {} bytes on the wire; header:", first.seq, wire.len());
    println!("  {}", hex::encode(&wire[..48.min(wire.len())]));
    let received = decode_wire(&wire)?;

    let mut window = ReplayWindow::new();
    let policy = StalenessPolicy::disabled();
    let now = 1_790_000_000_000;
    println!("fresh:    {:?}", open(&keys, &received, &mut window, policy, now).map(String::from_utf8_lossy));
    println!("again:    {:?}", open(&keys, &received, &mut window, policy, now).map(|_| ()));

    let mut tampered = received.clone();
    tampered.payload = velocity_payload(2.0, 0.0);
    println!("tampered: {:?}", open(&keys, &tampered, &mut window, policy, now).map(|_| ()));

    let mut stranger = received.clone();
    stranger.sender = "attacker".into();
    println!("stranger: {:?}", open(&keys, &stranger, &mut window, policy, now).map(|_| ()));

    // Out-of-order delivery inside the window is fine; each seq counts once.
    let later: Vec<_> = (0..3)
        .map(|i| seal(&mut key, "ground_station", "/command", &mut counter, &velocity_payload(0.1 * i as f64, 0.0), &clock))
        .collect::<Result<_, _>>()?;
    for env in later.iter().rev().chain(later.iter().take(1)) {
        println!("seq {:>2}:   {:?}", env.seq, open(&keys, env, &mut window, policy, now).map(|_| ()));
    }
    Ok(())
}
