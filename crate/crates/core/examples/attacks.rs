//! Every attack the adversary knows, run against an agent on a bus where
//! envelopes are signed but the transport is plaintext. The agent applies
//! the ground station's genuine commands and nothing else.
//!
//! ```text
//! cargo run --example attacks
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use pqc2::agents::{
    eavesdrop, harvest_envelopes, AgentConfig, AttackParams, AttackReport, Attacker, Cast, EnvelopeSource, GroundStation,
    Handled, MobileAgent, Verifier, COMMAND_TOPIC, ESTOP_TOPIC, STATUS_TOPIC,
};
use pqc2::authz::{policy_load, DEMO_POLICY};
use pqc2::bus::{broker_serve, capture_load, node_connect, BrokerConfig, BusMode, NodeConfig};
use pqc2::crypto::SchemeId;
use pqc2::pki::Role;
use pqc2::SystemClock;

fn tally(handled: &[Handled]) -> String {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for h in handled {
        let key = match h {
            Handled::Applied { .. } => "applied".to_string(),
            Handled::Rejected { reason, .. } => reason.as_str().to_string(),
            Handled::Invalid { .. } => "invalid".to_string(),
        };
        *counts.entry(key).or_default() += 1;
    }
    format!("{counts:?}")
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cast = Cast::demo(SchemeId::HASH_MERKLE)?;
    let dir = tempfile::tempdir()?;
    let capture = dir.path().join("bus.pqcp");
    let mode = BusMode::AppSig;
    let broker =
        broker_serve(BrokerConfig::new("127.0.0.1:0", mode, policy_load(DEMO_POLICY)?).with_capture(&capture)).await?;
    let addr = broker.addr().to_string();
    let clock = Arc::new(SystemClock);
    let source = |s: &str| -> Result<EnvelopeSource, Box<dyn std::error::Error>> {
        Ok(EnvelopeSource::new(s, Some(cast.credentials(s)?.keypair), clock.clone()))
    };
    let verifier = || Verifier::new(mode, cast.public_keys(), clock.clone());

    let session = node_connect(
        NodeConfig::new(addr.clone(), mode, "agent", Role::Agent).publishes([STATUS_TOPIC]).subscribes([COMMAND_TOPIC, ESTOP_TOPIC]),
    )
    .await?;
    let mut agent = MobileAgent::new(session, AgentConfig::default(), verifier(), source("agent")?);
    let session = node_connect(NodeConfig::new(addr.clone(), mode, "ground_station", Role::GroundStation).publishes([COMMAND_TOPIC])).await?;
    let mut station = GroundStation::new(session, source("ground_station")?, verifier());

    for i in 0..5 {
        station.send_velocity(0.1 * i as f64, 0.0).await?;
    }
    station.session().barrier().await?;
    agent.session().barrier().await?;
    println!("genuine commands:      {}", tally(&agent.process_pending().await?));

    let captured = harvest_envelopes(&capture_load(&capture)?);
    println!("the attacker harvested {} envelopes from the capture", captured.len());

    let attacker = Attacker::new(addr, mode, None);
    let params = AttackParams { count: 5, ..Default::default() };
    let runs: [(&str, AttackReport); 4] = [
        ("forge", attacker.forge(&params).await?),
        ("tamper", attacker.tamper(&captured, &params).await?),
        ("replay", attacker.replay(&captured, &params).await?),
        ("unauthorized_publish", attacker.unauthorized_publish(&params).await?),
    ];
    agent.session().barrier().await?;
    let handled = agent.process_pending().await?;
    for (name, report) in &runs {
        println!("{name:<22} sent {} ({})", report.sent, report.detail);
        if !report.refused_at_registration.is_empty() {
            println!("{:<22} refused at registration: {:?}", "", report.refused_at_registration);
        }
    }
    println!("agent saw:             {}", tally(&handled));
    assert!(!handled.iter().any(Handled::is_applied));

    // Signing is not encryption: the command text is readable on the wire.
    let report = eavesdrop(&capture, br#""omega":0.0,"v":0.4"#)?;
    println!("eavesdrop: {}", report.detail);

    broker.shutdown().await;
    Ok(())
}
