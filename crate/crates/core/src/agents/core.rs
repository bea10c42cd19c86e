//! The mobile agent as a pure state machine: verified commands in, fixed
//! time steps, pose out. Networking lives elsewhere.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::kinematics::{pose_step, AgentPose, CommandError, Limits, VelocityCommand};

pub const DEFAULT_DT: f64 = 0.01;
/// A velocity command is held this long, then the agent stops.
pub const DEFAULT_COMMAND_TIMEOUT: f64 = 0.5;

pub const COMMAND_TOPIC: &str = "/command";
pub const ESTOP_TOPIC: &str = "/e-stop";
pub const STATUS_TOPIC: &str = "/status";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub dt: f64,
    pub command_timeout: f64,
    pub limits: Limits,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, command_timeout: DEFAULT_COMMAND_TIMEOUT, limits: Limits::default() }
    }
}

impl AgentConfig {
    fn timeout_ticks(&self) -> u64 {
        (self.command_timeout / self.dt).round() as u64
    }
}

/// `{"x","y","theta","estop","seq"}`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusPayload {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub estop: bool,
    pub seq: u64,
}

impl StatusPayload {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("status serializes")
    }
}

pub fn velocity_payload(v: f64, omega: f64) -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({ "v": v, "omega": omega })).unwrap()
}

pub fn estop_payload(engage: bool) -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({ "estop": engage })).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Applied {
    Velocity(VelocityCommand),
    /// A velocity command that arrived while the e-stop was engaged.
    IgnoredLatched,
    EStop(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TraceEntry {
    Velocity { tick: u64, cmd: VelocityCommand },
    EStop { tick: u64, engage: bool },
}

#[derive(Debug, Clone)]
pub struct AgentCore {
    config: AgentConfig,
    pose: AgentPose,
    tick: u64,
    active: Option<(VelocityCommand, u64)>,
    estop: bool,
    last_seq: u64,
    trace: Vec<TraceEntry>,
}

fn field(obj: &serde_json::Map<String, Value>, key: &str) -> Option<f64> {
    obj.get(key).and_then(Value::as_f64)
}

impl AgentCore {
    pub fn new(config: AgentConfig) -> Self {
        Self::with_pose(config, AgentPose::default())
    }

    pub fn with_pose(config: AgentConfig, pose: AgentPose) -> Self {
        Self { config, pose, tick: 0, active: None, estop: false, last_seq: 0, trace: Vec::new() }
    }

    pub fn pose(&self) -> AgentPose {
        self.pose
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn elapsed(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn estop_engaged(&self) -> bool {
        self.estop
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn status(&self) -> StatusPayload {
        StatusPayload { x: self.pose.x, y: self.pose.y, theta: self.pose.theta, estop: self.estop, seq: self.last_seq }
    }

    /// Applies the payload of an envelope that already passed verification.
    pub fn apply(&mut self, topic: &str, payload: &[u8], seq: u64) -> Result<Applied, CommandError> {
        let value: Value = serde_json::from_slice(payload).map_err(|e| CommandError::BadPayload(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| CommandError::BadPayload("not a JSON object".into()))?;
        let applied = match topic {
            ESTOP_TOPIC => {
                let engage = obj
                    .get("estop")
                    .and_then(Value::as_bool)
                    .ok_or_else(|| CommandError::BadPayload("missing boolean estop".into()))?;
                self.estop = engage;
                self.active = None;
                self.trace.push(TraceEntry::EStop { tick: self.tick, engage });
                Applied::EStop(engage)
            }
            COMMAND_TOPIC => {
                let (Some(v), Some(omega)) = (field(obj, "v"), field(obj, "omega")) else {
                    return Err(CommandError::BadPayload("missing v or omega".into()));
                };
                let cmd = VelocityCommand::new(v, omega, &self.config.limits)?;
                if self.estop {
                    Applied::IgnoredLatched
                } else {
                    self.active = Some((cmd, self.tick));
                    self.trace.push(TraceEntry::Velocity { tick: self.tick, cmd });
                    Applied::Velocity(cmd)
                }
            }
            other => return Err(CommandError::BadPayload(format!("agent does not act on {other}"))),
        };
        self.last_seq = seq;
        Ok(applied)
    }

    fn current_command(&self) -> VelocityCommand {
        match self.active {
            Some((cmd, since)) if !self.estop && self.tick - since < self.config.timeout_ticks() => cmd,
            _ => VelocityCommand::STOP,
        }
    }

    /// Advances one fixed step.
    pub fn tick(&mut self) {
        let cmd = self.current_command();
        if cmd != VelocityCommand::STOP {
            self.pose = pose_step(self.pose, cmd, self.config.dt);
        }
        self.tick += 1;
    }

    pub fn advance_ticks(&mut self, n: u64) {
        for _ in 0..n {
            self.tick();
        }
    }

    pub fn advance_to(&mut self, tick: u64) {
        while self.tick < tick {
            self.tick();
        }
    }
}

/// Recomputes the pose from a trace alone.
pub fn replay_trace(config: AgentConfig, start: AgentPose, trace: &[TraceEntry], ticks: u64) -> AgentPose {
    let mut core = AgentCore::with_pose(config, start);
    let mut next = 0;
    loop {
        while next < trace.len() && entry_tick(&trace[next]) == core.tick {
            match trace[next] {
                TraceEntry::Velocity { cmd, .. } => core.active = Some((cmd, core.tick)),
                TraceEntry::EStop { engage, .. } => {
                    core.estop = engage;
                    core.active = None;
                }
            }
            next += 1;
        }
        if core.tick >= ticks {
            return core.pose;
        }
        core.tick();
    }
}

fn entry_tick(e: &TraceEntry) -> u64 {
    match e {
        TraceEntry::Velocity { tick, .. } | TraceEntry::EStop { tick, .. } => *tick,
    }
}
