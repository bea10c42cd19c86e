//! The agent's motion model without any networking: commands applied to the
//! state machine, a 0.5 s command timeout, an e-stop that freezes the pose,
//! and a replay of the recorded trace that lands on the same pose.
//!
//! ```text
//! cargo run --example agent_sim
//! ```

use pqc2::agents::{
    estop_payload, replay_trace, velocity_payload, AgentConfig, AgentCore, AgentPose, COMMAND_TOPIC, ESTOP_TOPIC,
};

fn show(label: &str, core: &AgentCore) {
    let p = core.pose();
    println!(
        "t={:>5.2}s  {label:<28} x={:>7.4} y={:>7.4} theta={:>7.4}  estop={}",
        core.elapsed(),
        p.x,
        p.y,
        p.theta,
        core.estop_engaged()
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = AgentConfig::default();
    let mut core = AgentCore::new(config);
    let mut seq = 0;
    let mut send = |core: &mut AgentCore, topic: &str, payload: Vec<u8>| {
        seq += 1;
        core.apply(topic, &payload, seq)
    };
    show("start", &core);

    send(&mut core, COMMAND_TOPIC, velocity_payload(1.0, 0.0))?;
    core.advance_ticks(100);
    show("after 1 s at v=1 (timeout)", &core);

    for _ in 0..4 {
        send(&mut core, COMMAND_TOPIC, velocity_payload(1.0, 0.5))?;
        core.advance_ticks(40);
    }
    show("arc, refreshed every 0.4 s", &core);

    println!("v=9 is refused: {:?}", send(&mut core, COMMAND_TOPIC, velocity_payload(9.0, 0.0)).unwrap_err());

    send(&mut core, COMMAND_TOPIC, velocity_payload(1.0, 0.0))?;
    core.advance_ticks(10);
    send(&mut core, ESTOP_TOPIC, estop_payload(true))?;
    let frozen = core.pose();
    println!("command under e-stop: {:?}", send(&mut core, COMMAND_TOPIC, velocity_payload(1.0, 0.0))?);
    core.advance_ticks(200);
    show("2 s after e-stop", &core);
    assert_eq!(core.pose(), frozen);

    let replayed = replay_trace(config, AgentPose::default(), core.trace(), core.tick_count());
    println!("replayed {} trace entries: pose matches = {}", core.trace().len(), replayed == core.pose());
    Ok(())
}
