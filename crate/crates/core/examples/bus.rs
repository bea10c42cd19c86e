//! A broker with the demonstration policy, three nodes on it, signed
//! commands flowing from the ground station to the agent, and the security
//! events a refused registration produces.
//!
//! ```text
//! cargo run --example bus
//! ```

use std::sync::Arc;

use pqc2::agents::{velocity_payload, Cast, EnvelopeSource, Verifier, COMMAND_TOPIC, STATUS_TOPIC};
use pqc2::authz::{policy_load, DEMO_POLICY};
use pqc2::bus::{broker_serve, node_connect, BrokerConfig, BusError, BusMode, Inbound, NodeConfig, EVENTS_TOPIC};
use pqc2::crypto::SchemeId;
use pqc2::pki::Role;
use pqc2::SystemClock;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cast = Cast::demo(SchemeId::HASH_MERKLE)?;
    let mode = BusMode::Both;
    let broker = broker_serve(
        BrokerConfig::new("127.0.0.1:0", mode, policy_load(DEMO_POLICY)?).with_credentials(cast.credentials("broker")?),
    )
    .await?;
    let addr = broker.addr().to_string();
    let node = |subject: &str, role| -> Result<NodeConfig, Box<dyn std::error::Error>> {
        Ok(NodeConfig::new(addr.clone(), mode, subject, role).with_credentials(cast.credentials(subject)?))
    };

    let station = node_connect(
        node("ground_station", Role::GroundStation)?.publishes([COMMAND_TOPIC]).subscribes([STATUS_TOPIC, EVENTS_TOPIC]),
    )
    .await?;
    let mut agent = node_connect(node("agent", Role::Agent)?.subscribes([COMMAND_TOPIC])).await?;
    println!("broker on {addr}, connected: {:?}", broker.connected_nodes());

    let clock = Arc::new(SystemClock);
    let mut source = EnvelopeSource::new("ground_station", Some(cast.credentials("ground_station")?.keypair), clock.clone());
    for i in 0..3 {
        station.publish(&source.seal(COMMAND_TOPIC, &velocity_payload(0.2 * i as f64, 0.0))?).await?;
    }
    station.barrier().await?;
    agent.barrier().await?;
    let mut verifier = Verifier::new(mode, cast.public_keys(), clock);
    for inbound in agent.drain() {
        if let Inbound::Deliver { envelope, .. } = inbound {
            let verdict = verifier.check(&envelope).map(String::from_utf8_lossy);
            println!("agent got seq {} from {}: {verdict:?}", envelope.seq, envelope.sender);
        }
    }

    // The monitor may not publish velocity commands; the broker refuses the
    // whole registration and tells subscribers of the event topic.
    match node_connect(node("monitor", Role::Monitor)?.publishes([COMMAND_TOPIC])).await {
        Err(BusError::NotAuthorized(denied)) => println!("monitor registration refused: {denied:?}"),
        other => println!("unexpected: {:?}", other.map(|_| ())),
    }
    let mut station = station;
    station.barrier().await?;
    for inbound in station.drain() {
        if let Inbound::Event(e) = inbound {
            println!("event seen by the station: {:?} {} {} ({})", e.kind, e.subject, e.topic, e.detail);
        }
    }
    broker.shutdown().await;
    Ok(())
}
