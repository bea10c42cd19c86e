//! A certificate authority issuing identities, a trust store checking them,
//! and the text armor certificates are stored in.
//!
//! ```text
//! cargo run --example pki
//! ```

use pqc2::crypto::{hash_merkle, SchemeId};
use pqc2::pki::{create_ca, Certificate, Decision, Role, Validity};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let now = 1_790_000_000;
    let mut ca = create_ca("example-ca", SchemeId::HASH_MERKLE, Validity::days_from(now, 365))?;
    let trust = ca.trust_store();

    let agent_key = hash_merkle::keygen_random(4)?;
    let agent = ca.issue_certificate("agent", Role::Agent, &agent_key.public_key(), Validity::days_from(now, 30))?;
    let (station, _station_key) =
        ca.issue_identity("ground_station", Role::GroundStation, SchemeId::RSA_2048, Validity::days_from(now, 30))?;

    let pem = agent.to_pem();
    let lines: Vec<&str> = pem.lines().collect();
    println!("{}\n  ... {} lines ...\n{}", lines[0], lines.len() - 2, lines[lines.len() - 1]);
    let parsed = Certificate::from_pem(&pem)?;
    assert_eq!(parsed, agent);

    for cert in [&agent, &station] {
        println!(
            "{:<15} role {:<15} serial {} issued by {:<11} today: {:?}",
            cert.subject,
            cert.role.to_string(),
            cert.serial,
            cert.issuer,
            trust.verify_certificate(cert, now + 60)
        );
    }
    println!("agent in 31 days: {:?}", trust.verify_certificate(&agent, now + 31 * 86_400));

    let mut forged = agent.clone();
    forged.role = Role::GroundStation;
    let d = trust.verify_certificate(&forged, now + 60);
    println!("agent certificate with its role edited: {d:?}");
    assert!(matches!(d, Decision::Deny(_)));

    let other = create_ca("other-ca", SchemeId::HASH_MERKLE, Validity::days_from(now, 365))?;
    println!("other CA's own certificate: {:?}", trust.verify_certificate(&other.certificate, now));
    Ok(())
}
