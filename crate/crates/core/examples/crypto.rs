//! The scheme registry, a stateful hash-based signature key running out of
//! one-time leaves, and a KEM plus AEAD exchange.
//!
//! ```text
//! cargo run --example crypto
//! ```

use pqc2::crypto::{self, hash_merkle, kdf_derive, SchemeId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:<4} {:<18} {:<10} {:>3} {:>8} {:>10}", "id", "name", "kind", "pq", "pk len", "sig/ct len");
    for d in crypto::list_schemes() {
        println!(
            "{:<4} {:<18} {:<10} {:>3} {:>8} {:>10}",
            d.scheme_id.0,
            d.name,
            format!("{:?}", d.kind),
            if d.post_quantum { "yes" } else { "no" },
            d.pubkey_len,
            d.sig_or_ct_len
        );
    }

    // A depth-3 tree holds 8 one-time keys.
    let mut key = hash_merkle::keygen_random(3)?;
    let public = key.public_key();
    let mut signed = 0;
    loop {
        match key.sign(format!("command {signed}").as_bytes()) {
            Ok(sig) => {
                assert!(crypto::verify(&public, format!("command {signed}").as_bytes(), &sig));
                assert!(!crypto::verify(&public, b"something else", &sig));
                signed += 1;
            }
            Err(e) => {
                println!("\nhash-merkle depth 3: {signed} signatures, then: {e}");
                break;
            }
        }
    }
    println!("signature length at depth 10: {} bytes", hash_merkle::signature_len(10));

    let mut rsa = crypto::sig_keygen(SchemeId::RSA_2048, None)?;
    let sig = rsa.sign(b"hello")?;
    println!("rsa-2048 signature: {} bytes, verifies: {}", sig.bytes.len(), crypto::verify(&rsa.public_key(), b"hello", &sig));

    let receiver = crypto::kem_keygen(SchemeId::ML_KEM_768)?;
    let (ciphertext, sender_secret) = crypto::encapsulate(&receiver.public())?;
    let receiver_secret = crypto::decapsulate(&receiver, &ciphertext)?;
    assert_eq!(sender_secret.as_bytes(), receiver_secret.as_bytes());
    println!("\nml-kem-768: {}-byte ciphertext, shared secrets agree", ciphertext.bytes.len());

    let key = kdf_derive(sender_secret.as_bytes(), "example key", 32)?;
    let nonce = [0u8; 12];
    let sealed = crypto::aead_seal(SchemeId::AES_256_GCM, &key, &nonce, b"header", b"v=0.5 omega=0.1")?;
    let opened = crypto::aead_open(SchemeId::AES_256_GCM, &key, &nonce, b"header", &sealed)?;
    println!("aes-256-gcm: {} bytes sealed, opened to {:?}", sealed.len(), String::from_utf8_lossy(&opened));
    let mut tampered = sealed.clone();
    tampered[0] ^= 1;
    println!("tampered ciphertext opens: {}", crypto::aead_open(SchemeId::AES_256_GCM, &key, &nonce, b"header", &tampered).is_ok());
    Ok(())
}
