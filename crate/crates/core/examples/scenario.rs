//! Runs a bundled scenario and prints the per-step outcomes.
//!
//! ```text
//! cargo run --example scenario -- table1-demo both
//! cargo run --example scenario -- fig5 none
//! ```

use pqc2::agents::{bundled_scenario, scenario_run, BUNDLED_SCENARIOS};
use pqc2::bus::BusMode;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "table1-demo".into());
    let Some(mut spec) = bundled_scenario(&name) else {
        let names: Vec<_> = BUNDLED_SCENARIOS.iter().map(|(n, _)| *n).collect();
        return Err(format!("unknown scenario {name}; bundled: {}", names.join(", ")).into());
    };
    if let Some(mode) = args.next() {
        spec.mode = mode.parse::<BusMode>()?;
    }
    let report = scenario_run(&spec).await?;
    for step in &report.steps {
        println!(
            "{:>3} t={:<4} {:<15} {:<7} {:<12} expected {:<10} {}",
            step.index,
            step.at,
            step.actor,
            step.action,
            step.outcome,
            step.expected.as_deref().unwrap_or("-"),
            step.detail
        );
        if !step.events.is_empty() {
            println!("      events: {:?}", step.events);
        }
        if let Some(l) = &step.latency {
            println!("      latency: {l:?}");
        }
    }
    println!(
        "{} in mode {}: {} ({} ms), final pose {:?}, trace replay {}",
        report.name,
        report.mode,
        if report.passed { "PASS" } else { "FAIL" },
        report.elapsed_ms,
        report.final_pose,
        if report.trace_replay_matches { "matches" } else { "differs" }
    );
    for f in &report.failures {
        println!("  {f}");
    }
    Ok(())
}
