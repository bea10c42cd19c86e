use std::time::Duration;

use serde_json::Value;
use tokio::time::{interval, MissedTickBehavior};

use crate::bus::{BusError, EventKind, Inbound, SecurityEvent, Session};
use crate::envelope::{Envelope, RejectReason};

use super::console::{ConsoleCommand, ConsoleHub};
use super::core::{
    estop_payload, velocity_payload, AgentConfig, AgentCore, Applied, StatusPayload, COMMAND_TOPIC, ESTOP_TOPIC,
    STATUS_TOPIC,
};
use super::kinematics::{AgentPose, Limits, VelocityCommand};
use super::source::EnvelopeSource;
use super::verifier::Verifier;
use super::AgentError;

/// Where operators hand commands to the relay.
pub const COMMAND_IN_TOPIC: &str = "/command_in";

/// What a node did with one delivered envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum Handled {
    Applied { sender: String, topic: String, seq: u64, applied: Applied },
    Rejected { sender: String, topic: String, seq: u64, reason: RejectReason },
    /// Authentic, but the payload made no sense to the agent.
    Invalid { sender: String, topic: String, seq: u64, error: String },
}

impl Handled {
    pub fn is_applied(&self) -> bool {
        matches!(self, Handled::Applied { .. })
    }

    pub fn rejection(&self) -> Option<RejectReason> {
        match self {
            Handled::Rejected { reason, .. } => Some(*reason),
            _ => None,
        }
    }
}

async fn report_rejection(session: &Session, env: &Envelope, reason: RejectReason) -> Result<(), BusError> {
    let detail = format!("{} seq {} dropped", reason.as_str(), env.seq);
    session.publisher().report(EventKind::from(reason), &env.sender, &env.topic, &detail).await
}

/// The simulated robot: verified commands in, pose out.
pub struct MobileAgent {
    session: Session,
    core: AgentCore,
    verifier: Verifier,
    source: EnvelopeSource,
}

impl MobileAgent {
    pub fn new(session: Session, config: AgentConfig, verifier: Verifier, source: EnvelopeSource) -> Self {
        Self { session, core: AgentCore::new(config), verifier, source }
    }

    pub fn with_pose(mut self, pose: AgentPose) -> Self {
        self.core = AgentCore::with_pose(*self.core.config(), pose);
        self
    }

    pub fn core(&self) -> &AgentCore {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut AgentCore {
        &mut self.core
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn session_mut(&mut self) -> &mut Session {
        &mut self.session
    }

    /// Verifies one envelope and, if it passes, applies it.
    pub fn handle(&mut self, env: &Envelope) -> Handled {
        let (sender, topic, seq) = (env.sender.clone(), env.topic.clone(), env.seq);
        let payload = match self.verifier.check(env) {
            Ok(p) => p,
            Err(reason) => {
                tracing::info!(%sender, %topic, seq, ?reason, "envelope rejected");
                return Handled::Rejected { sender, topic, seq, reason };
            }
        };
        match self.core.apply(&env.topic, payload, env.seq) {
            Ok(applied) => {
                tracing::debug!(%sender, %topic, seq, ?applied, "command applied");
                Handled::Applied { sender, topic, seq, applied }
            }
            Err(e) => {
                tracing::warn!(%sender, %topic, seq, "ignoring command: {e}");
                Handled::Invalid { sender, topic, seq, error: e.to_string() }
            }
        }
    }

    async fn take(&mut self, inbound: Inbound) -> Result<Option<Handled>, AgentError> {
        let Inbound::Deliver { envelope, .. } = inbound else { return Ok(None) };
        let handled = self.handle(&envelope);
        if let Some(reason) = handled.rejection() {
            report_rejection(&self.session, &envelope, reason).await?;
        }
        Ok(Some(handled))
    }

    /// Handles everything that has already arrived, in order.
    pub async fn process_pending(&mut self) -> Result<Vec<Handled>, AgentError> {
        let mut out = Vec::new();
        while let Some(inbound) = self.session.try_recv() {
            out.extend(self.take(inbound).await?);
        }
        Ok(out)
    }

    pub async fn publish_status(&mut self) -> Result<Envelope, AgentError> {
        let env = self.source.seal(STATUS_TOPIC, &self.core.status().to_json())?;
        self.session.publish(&env).await?;
        Ok(env)
    }

    /// Real-time loop: one kinematics step per `dt`, status at `status_hz`.
    /// Returns only when the broker connection is gone.
    pub async fn run(mut self, status_hz: f64) -> Result<(), AgentError> {
        let mut step = interval(Duration::from_secs_f64(self.core.config().dt));
        step.set_missed_tick_behavior(MissedTickBehavior::Burst);
        let mut status = interval(Duration::from_secs_f64(1.0 / status_hz.max(0.01)));
        status.set_missed_tick_behavior(MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                inbound = self.session.recv() => match inbound {
                    Some(i) => {
                        self.take(i).await?;
                    }
                    None => return Err(BusError::ConnectionLost.into()),
                },
                _ = step.tick() => self.core.tick(),
                _ = status.tick() => {
                    self.publish_status().await?;
                }
            }
        }
    }
}

/// The operator's end: turns operator actions into sealed envelopes and
/// keeps the latest telemetry.
pub struct GroundStation {
    session: Session,
    source: EnvelopeSource,
    verifier: Verifier,
    limits: Limits,
    latest: Option<StatusPayload>,
    events: Vec<SecurityEvent>,
}

impl GroundStation {
    pub fn new(session: Session, source: EnvelopeSource, verifier: Verifier) -> Self {
        Self { session, source, verifier, limits: Limits::default(), latest: None, events: Vec::new() }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn latest_status(&self) -> Option<StatusPayload> {
        self.latest
    }

    pub fn events(&self) -> &[SecurityEvent] {
        &self.events
    }

    pub async fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<Envelope, AgentError> {
        let env = self.source.seal(topic, payload)?;
        self.session.publish(&env).await?;
        Ok(env)
    }

    /// Out-of-range commands are refused here, before a signature is spent.
    pub async fn send_velocity(&mut self, v: f64, omega: f64) -> Result<Envelope, AgentError> {
        VelocityCommand::new(v, omega, &self.limits)?;
        self.publish(COMMAND_TOPIC, &velocity_payload(v, omega)).await
    }

    pub async fn send_estop(&mut self, engage: bool) -> Result<Envelope, AgentError> {
        self.publish(ESTOP_TOPIC, &estop_payload(engage)).await
    }

    pub async fn execute(&mut self, cmd: ConsoleCommand) -> Result<Envelope, AgentError> {
        match cmd {
            ConsoleCommand::Velocity { v, omega } => self.send_velocity(v, omega).await,
            ConsoleCommand::EStop { engage } => self.send_estop(engage).await,
        }
    }

    async fn take(&mut self, inbound: Inbound, hub: Option<&ConsoleHub>) -> Result<(), AgentError> {
        match inbound {
            Inbound::Event(e) => {
                tracing::info!(kind = ?e.kind, subject = %e.subject, topic = %e.topic, "security event: {}", e.detail);
                if let Some(hub) = hub {
                    hub.publish_event(&e);
                }
                self.events.push(e);
            }
            Inbound::Deliver { envelope, .. } if envelope.topic == STATUS_TOPIC => match self.verifier.check(&envelope) {
                Ok(payload) => match serde_json::from_slice::<StatusPayload>(payload) {
                    Ok(status) => {
                        tracing::debug!(x = status.x, y = status.y, theta = status.theta, estop = status.estop, "status");
                        self.latest = Some(status);
                        if let Some(hub) = hub {
                            hub.publish_status(status);
                        }
                    }
                    Err(e) => tracing::warn!("unreadable status from {}: {e}", envelope.sender),
                },
                Err(reason) => report_rejection(&self.session, &envelope, reason).await?,
            },
            Inbound::Deliver { .. } => {}
        }
        Ok(())
    }

    pub async fn process_pending(&mut self) -> Result<(), AgentError> {
        while let Some(inbound) = self.session.try_recv() {
            self.take(inbound, None).await?;
        }
        Ok(())
    }

    /// Serves console commands and a timed script until the connection
    /// drops. The loss is reported to the console before returning.
    pub async fn run(
        mut self,
        hub: Option<ConsoleHub>,
        mut commands: Option<tokio::sync::mpsc::Receiver<ConsoleCommand>>,
        script: Vec<(Duration, ConsoleCommand)>,
    ) -> Result<(), AgentError> {
        let start = tokio::time::Instant::now();
        let mut script = script.into_iter().peekable();
        let result = loop {
            let next_at = script.peek().map(|(at, _)| start + *at);
            tokio::select! {
                inbound = self.session.recv() => match inbound {
                    Some(i) => {
                        if let Err(e) = self.take(i, hub.as_ref()).await {
                            break Err(e);
                        }
                    }
                    None => break Err(AgentError::Bus(BusError::ConnectionLost)),
                },
                Some(cmd) = async { commands.as_mut()?.recv().await }, if commands.is_some() => {
                    if let Err(e) = self.execute(cmd).await {
                        if let Some(hub) = &hub {
                            hub.publish_error(&e.to_string());
                        }
                        if matches!(e, AgentError::Bus(BusError::ConnectionLost)) {
                            break Err(e);
                        }
                    }
                }
                _ = tokio::time::sleep_until(next_at.unwrap_or(start)), if next_at.is_some() => {
                    let (_, cmd) = script.next().expect("peeked");
                    if let Err(e) = self.execute(cmd).await {
                        tracing::warn!("scripted command failed: {e}");
                    }
                }
            }
        };
        if let (Err(e), Some(hub)) = (&result, &hub) {
            hub.publish_error(&e.to_string());
        }
        result
    }
}

/// Watches telemetry and engages the e-stop when the agent leaves a circular
/// geofence around the origin.
pub struct Monitor {
    session: Session,
    source: EnvelopeSource,
    verifier: Verifier,
    radius: f64,
    tripped: bool,
}

impl Monitor {
    pub fn new(session: Session, source: EnvelopeSource, verifier: Verifier, radius: f64) -> Self {
        Self { session, source, verifier, radius, tripped: false }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn tripped(&self) -> bool {
        self.tripped
    }

    pub async fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<Envelope, AgentError> {
        let env = self.source.seal(topic, payload)?;
        self.session.publish(&env).await?;
        Ok(env)
    }

    pub async fn send_estop(&mut self, engage: bool) -> Result<Envelope, AgentError> {
        self.publish(ESTOP_TOPIC, &estop_payload(engage)).await
    }

    /// Returns the e-stop envelope when this delivery tripped the fence.
    async fn take(&mut self, inbound: Inbound) -> Result<Option<Envelope>, AgentError> {
        let Inbound::Deliver { envelope, .. } = inbound else { return Ok(None) };
        if envelope.topic != STATUS_TOPIC {
            return Ok(None);
        }
        let status = match self.verifier.check(&envelope) {
            Ok(p) => serde_json::from_slice::<StatusPayload>(p).ok(),
            Err(reason) => {
                report_rejection(&self.session, &envelope, reason).await?;
                return Ok(None);
            }
        };
        let Some(status) = status else { return Ok(None) };
        if self.tripped || status.estop || status.x.hypot(status.y) <= self.radius {
            return Ok(None);
        }
        tracing::warn!(x = status.x, y = status.y, "geofence breached, engaging e-stop");
        self.tripped = true;
        self.send_estop(true).await.map(Some)
    }

    pub async fn process_pending(&mut self) -> Result<Vec<Envelope>, AgentError> {
        let mut sent = Vec::new();
        while let Some(inbound) = self.session.try_recv() {
            sent.extend(self.take(inbound).await?);
        }
        Ok(sent)
    }

    pub async fn run(mut self) -> Result<(), AgentError> {
        while let Some(inbound) = self.session.recv().await {
            self.take(inbound).await?;
        }
        Err(BusError::ConnectionLost.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RelayOutcome {
    Forwarded { origin: String, origin_seq: u64, envelope: Envelope },
    Dropped { sender: String, seq: u64, reason: String },
}

/// Verifies commands arriving on `/command_in` and re-signs the good ones
/// onto `/command` under its own identity. The original sender and sequence
/// number travel inside the payload as `origin` and `origin_seq`.
pub struct Relay {
    session: Session,
    source: EnvelopeSource,
    verifier: Verifier,
}

impl Relay {
    /// `verifier` should be strict: the relay checks signatures even when
    /// the rest of the run does not.
    pub fn new(session: Session, source: EnvelopeSource, verifier: Verifier) -> Self {
        Self { session, source, verifier }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    async fn take(&mut self, inbound: Inbound) -> Result<Option<RelayOutcome>, AgentError> {
        let Inbound::Deliver { envelope, .. } = inbound else { return Ok(None) };
        if envelope.topic != COMMAND_IN_TOPIC {
            return Ok(None);
        }
        let dropped = |reason: String| RelayOutcome::Dropped { sender: envelope.sender.clone(), seq: envelope.seq, reason };
        let payload = match self.verifier.check(&envelope) {
            Ok(p) => p,
            Err(reason) => {
                report_rejection(&self.session, &envelope, reason).await?;
                return Ok(Some(dropped(reason.as_str().to_string())));
            }
        };
        let mut body = match serde_json::from_slice::<Value>(payload) {
            Ok(Value::Object(m)) => m,
            _ => return Ok(Some(dropped("payload is not a JSON object".into()))),
        };
        body.insert("origin".into(), Value::from(envelope.sender.clone()));
        body.insert("origin_seq".into(), Value::from(envelope.seq));
        let bytes = serde_json::to_vec(&body).expect("JSON map serializes");
        let out = self.source.seal(COMMAND_TOPIC, &bytes)?;
        self.session.publish(&out).await?;
        Ok(Some(RelayOutcome::Forwarded { origin: envelope.sender.clone(), origin_seq: envelope.seq, envelope: out }))
    }

    pub async fn process_pending(&mut self) -> Result<Vec<RelayOutcome>, AgentError> {
        let mut out = Vec::new();
        while let Some(inbound) = self.session.try_recv() {
            out.extend(self.take(inbound).await?);
        }
        Ok(out)
    }

    pub async fn run(mut self) -> Result<(), AgentError> {
        while let Some(inbound) = self.session.recv().await {
            self.take(inbound).await?;
        }
        Err(BusError::ConnectionLost.into())
    }
}
