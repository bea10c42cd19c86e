//! The demonstration cast: a simulated mobile agent, the ground station that
//! commands it, a geofence monitor, a verifying relay, an attacker, and a
//! scenario runner that scripts all of them against a live broker.

mod attacker;
mod cast;
mod console;
mod core;
mod kinematics;
mod nodes;
mod scenario;
mod source;
mod verifier;

use thiserror::Error;

use crate::bus::BusError;
use crate::envelope::EnvelopeError;
use crate::pki::PkiError;

pub use self::core::{
    estop_payload, replay_trace, velocity_payload, AgentConfig, AgentCore, Applied, StatusPayload, TraceEntry,
    COMMAND_TOPIC, DEFAULT_COMMAND_TIMEOUT, DEFAULT_DT, ESTOP_TOPIC, STATUS_TOPIC,
};
pub use attacker::{attacker_run, eavesdrop, harvest_envelopes, AttackKind, AttackParams, AttackReport, Attacker};
pub use cast::{Cast, CastMember};
pub use console::{serve_console, ConsoleCommand, ConsoleHandle, ConsoleHub};
pub use kinematics::{
    normalize_angle, pose_step, AgentPose, CommandError, Limits, VelocityCommand, DEFAULT_OMEGA_MAX, DEFAULT_V_MAX,
};
pub use nodes::{GroundStation, Handled, MobileAgent, Monitor, Relay, RelayOutcome, COMMAND_IN_TOPIC};
pub use scenario::{
    bundled_scenario, scenario_run, ActionOutcome, Expect, LatencySummary, ProbeDecision, ScenarioReport, ScenarioSpec, Step,
    BUNDLED_SCENARIOS,
};
pub use source::EnvelopeSource;
pub use verifier::Verifier;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Pki(#[from] PkiError),
    #[error("cannot persist signing key: {0}")]
    KeyFile(String),
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error("scenario setup failed: {0}")]
    ScenarioSetupFailure(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
