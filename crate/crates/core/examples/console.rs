//! The operator console bridge: a ground station serving the websocket, an
//! agent on the bus, and a scripted client driving it the way the browser
//! console does.
//!
//! ```text
//! cargo run --example console
//! ```

use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use pqc2::agents::{
    serve_console, AgentConfig, Cast, ConsoleHub, EnvelopeSource, GroundStation, MobileAgent, Verifier, COMMAND_TOPIC,
    ESTOP_TOPIC, STATUS_TOPIC,
};
use pqc2::authz::{policy_load, DEMO_POLICY};
use pqc2::bus::{broker_serve, node_connect, BrokerConfig, BusMode, NodeConfig, EVENTS_TOPIC};
use pqc2::crypto::SchemeId;
use pqc2::pki::Role;
use pqc2::SystemClock;
use tokio_tungstenite::tungstenite::Message;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cast = Cast::demo(SchemeId::HASH_MERKLE)?;
    let mode = BusMode::AppSig;
    let broker = broker_serve(BrokerConfig::new("127.0.0.1:0", mode, policy_load(DEMO_POLICY)?)).await?;
    let addr = broker.addr().to_string();
    let clock = Arc::new(SystemClock);
    let source = |s: &str| -> Result<EnvelopeSource, Box<dyn std::error::Error>> {
        Ok(EnvelopeSource::new(s, Some(cast.credentials(s)?.keypair), clock.clone()))
    };

    let agent_session = node_connect(
        NodeConfig::new(addr.clone(), mode, "agent", Role::Agent).publishes([STATUS_TOPIC]).subscribes([COMMAND_TOPIC, ESTOP_TOPIC]),
    )
    .await?;
    let agent = MobileAgent::new(agent_session, AgentConfig::default(), Verifier::new(mode, cast.public_keys(), clock.clone()), source("agent")?);
    tokio::spawn(agent.run(20.0));

    let station_session = node_connect(
        NodeConfig::new(addr, mode, "ground_station", Role::GroundStation)
            .publishes([COMMAND_TOPIC, ESTOP_TOPIC])
            .subscribes([STATUS_TOPIC, EVENTS_TOPIC]),
    )
    .await?;
    let station = GroundStation::new(station_session, source("ground_station")?, Verifier::new(mode, cast.public_keys(), clock.clone()));
    let (hub, commands) = ConsoleHub::new();
    let bridge = serve_console("127.0.0.1:0", hub.clone(), None).await?;
    tokio::spawn(station.run(Some(hub), Some(commands), Vec::new()));
    println!("console bridge on ws://{}/", bridge.addr());

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/", bridge.addr())).await?;
    let script = [
        (r#"{"type":"cmd","v":1.0,"omega":0.0}"#, 400),
        (r#"{"type":"cmd","v":1.0,"omega":0.5}"#, 400),
        (r#"{"type":"estop","engage":true}"#, 600),
        (r#"{"type":"warp","factor":9}"#, 200),
    ];
    for (msg, listen_ms) in script {
        println!("> {msg}");
        ws.send(Message::Text(msg.into())).await?;
        let until = tokio::time::Instant::now() + Duration::from_millis(listen_ms);
        let mut last = None;
        while let Ok(Some(Ok(Message::Text(t)))) = tokio::time::timeout_at(until, ws.next()).await {
            if t.contains(r#""type":"status""#) {
                last = Some(t);
            } else {
                println!("< {t}");
            }
        }
        if let Some(t) = last {
            println!("< {t}");
        }
    }
    bridge.shutdown().await;
    broker.shutdown().await;
    Ok(())
}
