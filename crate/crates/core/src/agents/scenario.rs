//! Scripted runs of the whole cast against a live broker.
//!
//! Time is virtual: `at` counts agent ticks, and the runner only advances
//! the agent once every message caused by the previous step has been
//! processed. Ordering comes from ping/pong barriers through the broker, so
//! a report does not depend on wall-clock scheduling.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::authz::{policy_load, Action, DEMO_POLICY};
use crate::bus::{
    broker_serve, capture_load, node_connect, BrokerConfig, BrokerHandle, BusError, BusMode, Inbound, NodeConfig,
    SecurityEvent, Session, EVENTS_TOPIC,
};
use crate::clock::{Clock, SystemClock};
use crate::crypto::{self, SchemeId};
use crate::envelope::Envelope;
use crate::pki::Role;

use super::attacker::{eavesdrop, harvest_envelopes, AttackKind, AttackParams, AttackReport, Attacker};
use super::cast::Cast;
use super::core::{estop_payload, replay_trace, velocity_payload, AgentConfig, Applied, COMMAND_TOPIC, ESTOP_TOPIC, STATUS_TOPIC};
use super::kinematics::AgentPose;
use super::nodes::{GroundStation, Handled, MobileAgent, Monitor, Relay, COMMAND_IN_TOPIC};
use super::source::EnvelopeSource;
use super::verifier::Verifier;
use super::AgentError;

pub const BUNDLED_SCENARIOS: [(&str, &str); 5] = [
    ("table1-demo", include_str!("scenarios/table1-demo.yaml")),
    ("estop", include_str!("scenarios/estop.yaml")),
    ("fig5", include_str!("scenarios/fig5.yaml")),
    ("attacks", include_str!("scenarios/attacks.yaml")),
    ("flood", include_str!("scenarios/flood.yaml")),
];

pub fn bundled_scenario(name: &str) -> Option<ScenarioSpec> {
    let (_, text) = BUNDLED_SCENARIOS.iter().find(|(n, _)| *n == name)?;
    Some(ScenarioSpec::from_yaml(text).expect("bundled scenarios parse"))
}

/// Either one expected outcome, or one per mode with an optional `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expect {
    Always(String),
    PerMode(BTreeMap<String, String>),
}

impl Expect {
    pub fn for_mode(&self, mode: BusMode) -> Option<&str> {
        match self {
            Expect::Always(s) => Some(s),
            Expect::PerMode(m) => m.get(mode.as_str()).or_else(|| m.get("default")).map(String::as_str),
        }
    }
}

fn outcome_matches(expected: &str, actual: &str) -> bool {
    expected == "*"
        || expected == actual
        || (expected == "rejected" && actual.starts_with("rejected:"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    /// Agent tick at which the step runs.
    #[serde(default)]
    pub at: u64,
    pub actor: String,
    pub action: String,
    #[serde(default)]
    pub args: Value,
    #[serde(default)]
    pub expect: Option<Expect>,
}

fn default_scheme() -> String {
    "hash-merkle".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub mode: BusMode,
    /// Signature scheme of every identity in the cast.
    #[serde(default = "default_scheme")]
    pub scheme: String,
    /// Agent ticks to run in total; the last step's `at` if larger.
    #[serde(default)]
    pub ticks: u64,
    #[serde(default)]
    pub start: AgentPose,
    /// Publish agent status every this many ticks; 0 disables.
    #[serde(default)]
    pub status_every: u64,
    /// Radius in meters; the monitor engages the e-stop outside it.
    #[serde(default)]
    pub geofence: Option<f64>,
    /// Keep the broker capture here instead of a temporary file.
    #[serde(default)]
    pub capture: Option<PathBuf>,
    #[serde(default)]
    pub event_log: Option<PathBuf>,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq)]
enum Act {
    Cmd { v: f64, omega: f64, count: usize, via_relay: bool },
    EStop { engage: bool },
    Publish { topic: String, payload: Vec<u8> },
    Probe { principal: String, topic: String, action: Action },
    Attack { kind: AttackKind, params: AttackParams },
    Mark { label: String },
    AssertPose { label: Option<String>, pose: Option<AgentPose>, tol: f64 },
    Wait,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CmdArgs {
    v: f64,
    omega: f64,
    #[serde(default = "one")]
    count: usize,
    #[serde(default)]
    via: Option<String>,
}

fn one() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EStopArgs {
    #[serde(default = "yes")]
    engage: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PublishArgs {
    topic: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    json: Option<Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeArgs {
    principal: String,
    topic: String,
    action: Action,
}

#[derive(Deserialize)]
struct AttackArgs {
    kind: AttackKind,
    #[serde(flatten)]
    params: AttackParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkArgs {
    label: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AssertArgs {
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    x: Option<f64>,
    #[serde(default)]
    y: Option<f64>,
    #[serde(default)]
    theta: Option<f64>,
    #[serde(default)]
    tol: f64,
}

fn args<T: for<'de> Deserialize<'de>>(step: &Step) -> Result<T, String> {
    let v = if step.args.is_null() { Value::Object(Default::default()) } else { step.args.clone() };
    serde_json::from_value(v).map_err(|e| format!("bad args for {}: {e}", step.action))
}

impl Step {
    fn parse(&self) -> Result<Act, String> {
        let actor_is = |allowed: &[&str]| {
            if allowed.contains(&self.actor.as_str()) {
                Ok(())
            } else {
                Err(format!("actor {} cannot {}", self.actor, self.action))
            }
        };
        match self.action.as_str() {
            "cmd" => {
                actor_is(&["ground_station", "monitor"])?;
                let a: CmdArgs = args(self)?;
                let via_relay = match a.via.as_deref() {
                    None | Some("direct") => false,
                    Some("relay") => true,
                    Some(other) => return Err(format!("unknown route {other:?}")),
                };
                Ok(Act::Cmd { v: a.v, omega: a.omega, count: a.count, via_relay })
            }
            "estop" => {
                actor_is(&["ground_station", "monitor"])?;
                Ok(Act::EStop { engage: args::<EStopArgs>(self)?.engage })
            }
            "publish" => {
                actor_is(&["ground_station", "monitor"])?;
                let a: PublishArgs = args(self)?;
                let payload = match (a.text, a.json) {
                    (Some(t), None) => t.into_bytes(),
                    (None, Some(j)) => serde_json::to_vec(&j).expect("JSON serializes"),
                    _ => return Err("publish needs exactly one of text or json".into()),
                };
                Ok(Act::Publish { topic: a.topic, payload })
            }
            "probe" => {
                let a: ProbeArgs = args(self)?;
                Ok(Act::Probe { principal: a.principal, topic: a.topic, action: a.action })
            }
            "attack" => {
                actor_is(&["attacker"])?;
                let a: AttackArgs = args(self)?;
                if a.kind == AttackKind::Eavesdrop && a.params.needle.is_none() {
                    return Err("eavesdrop needs a needle".into());
                }
                Ok(Act::Attack { kind: a.kind, params: a.params })
            }
            "mark" => Ok(Act::Mark { label: args::<MarkArgs>(self)?.label }),
            "assert_pose" => {
                let a: AssertArgs = args(self)?;
                let pose = match (a.x, a.y, a.theta) {
                    (None, None, None) => None,
                    (x, y, t) => Some(AgentPose::new(x.unwrap_or(0.0), y.unwrap_or(0.0), t.unwrap_or(0.0))),
                };
                if pose.is_none() == a.label.is_none() {
                    return Err("assert_pose needs either a label or coordinates".into());
                }
                Ok(Act::AssertPose { label: a.label, pose, tol: a.tol })
            }
            "wait" => Ok(Act::Wait),
            other => Err(format!("unknown action {other:?}")),
        }
    }
}

impl ScenarioSpec {
    pub fn from_yaml(text: &str) -> Result<Self, AgentError> {
        let spec: Self =
            serde_yaml::from_str(text).map_err(|e| AgentError::ScenarioSetupFailure(format!("scenario: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AgentError> {
        Self::from_yaml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |i: usize, m: String| AgentError::ScenarioSetupFailure(format!("step {i}: {m}"));
        for (i, step) in self.steps.iter().enumerate() {
            step.parse().map_err(|m| fail(i, m))?;
        }
        let id = crypto::scheme_by_name(&self.scheme)
            .map_err(|e| AgentError::ScenarioSetupFailure(e.to_string()))?
            .scheme_id;
        if crypto::registry().signature(id).is_err() {
            return Err(AgentError::ScenarioSetupFailure(format!("{} is not a signature scheme", self.scheme)));
        }
        Ok(())
    }
}

/// Median and ratio of command latency with and without a flood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub unloaded_median_us: f64,
    pub loaded_median_us: f64,
    pub ratio: f64,
    pub unloaded_samples: usize,
    pub loaded_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub index: usize,
    pub at: u64,
    pub actor: String,
    pub action: String,
    pub outcome: String,
    pub expected: Option<String>,
    pub passed: bool,
    /// Envelopes that reached the agent and passed its checks.
    pub delivered: Option<usize>,
    /// Security events logged while the step ran, by kind.
    pub events: BTreeMap<String, usize>,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencySummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeDecision {
    pub principal: String,
    pub topic: String,
    pub action: Action,
    pub allowed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub mode: BusMode,
    pub steps: Vec<ActionOutcome>,
    pub decisions: Vec<ProbeDecision>,
    pub final_pose: AgentPose,
    pub final_tick: u64,
    pub estop_engaged: bool,
    /// Replaying the agent's accepted commands reproduces `final_pose` exactly.
    pub trace_replay_matches: bool,
    pub events: Vec<SecurityEvent>,
    pub passed: bool,
    pub failures: Vec<String>,
    pub elapsed_ms: u64,
}

impl ScenarioReport {
    pub fn decision(&self, principal: &str, topic: &str, action: Action) -> Option<bool> {
        self.decisions
            .iter()
            .find(|d| d.principal == principal && d.topic == topic && d.action == action)
            .map(|d| d.allowed)
    }
}

struct Runner {
    mode: BusMode,
    cast: Cast,
    broker: BrokerHandle,
    capture: PathBuf,
    agent: MobileAgent,
    ground: GroundStation,
    monitor: Monitor,
    relay: Relay,
    status_every: u64,
    marks: HashMap<String, AgentPose>,
    decisions: Vec<ProbeDecision>,
    /// Every envelope the ground station sent, as the attacker's fallback
    /// material when the capture is encrypted.
    observed: Vec<Vec<u8>>,
}

fn tally_handled(handled: &[Handled]) -> (usize, String) {
    let delivered = handled.iter().filter(|h| h.rejection().is_none()).count();
    let label = |h: &Handled| match h {
        Handled::Applied { applied: Applied::IgnoredLatched, .. } => "ignored".to_string(),
        Handled::Applied { .. } => "applied".to_string(),
        Handled::Invalid { .. } => "invalid".to_string(),
        Handled::Rejected { reason, .. } => format!("rejected:{}", reason.as_str()),
    };
    let Some(first) = handled.first().map(label) else { return (0, "undelivered".into()) };
    if handled.iter().all(|h| label(h) == first) {
        (delivered, first)
    } else {
        (delivered, "mixed".into())
    }
}

fn median(v: &mut [Duration]) -> Duration {
    v.sort();
    v[v.len() / 2]
}

impl Runner {
    async fn start(spec: &ScenarioSpec, capture: PathBuf) -> Result<Self, AgentError> {
        let mode = spec.mode;
        let scheme = crypto::scheme_by_name(&spec.scheme).map(|d| d.scheme_id).unwrap_or(SchemeId::HASH_MERKLE);
        let cast = tokio::task::spawn_blocking(move || Cast::demo(scheme))
            .await
            .map_err(|e| AgentError::ScenarioSetupFailure(e.to_string()))??;
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let policy = policy_load(DEMO_POLICY).expect("demo policy parses");
        let mut config = BrokerConfig::new("127.0.0.1:0", mode, policy).with_capture(&capture);
        if let Some(log) = &spec.event_log {
            config = config.with_event_log(log);
        }
        if mode.secure_channel() {
            config = config.with_credentials(cast.credentials("broker")?);
        }
        let broker = broker_serve(config).await?;

        let addr = broker.addr().to_string();
        let join = |subject: &'static str, publishes: Vec<&'static str>, subscribes: Vec<&'static str>| {
            let role = cast.member(subject).map(|m| m.certificate.role).unwrap_or(Role::Other);
            let mut cfg = NodeConfig::new(addr.clone(), mode, subject, role).publishes(publishes).subscribes(subscribes);
            cfg.clock = clock.clone();
            let creds = cast.credentials(subject);
            async move {
                if mode.secure_channel() {
                    cfg = cfg.with_credentials(creds?);
                }
                Ok::<Session, AgentError>(node_connect(cfg).await?)
            }
        };
        let source = |subject: &str| -> Result<EnvelopeSource, AgentError> {
            let key = if mode.app_sig() { Some(cast.credentials(subject)?.keypair) } else { None };
            Ok(EnvelopeSource::new(subject, key, clock.clone()))
        };
        let verifier = || Verifier::new(mode, cast.public_keys(), clock.clone());

        let agent_session = join("agent", vec![STATUS_TOPIC], vec![COMMAND_TOPIC, ESTOP_TOPIC]).await?;
        let ground_session = join(
            "ground_station",
            vec![COMMAND_TOPIC, ESTOP_TOPIC, COMMAND_IN_TOPIC],
            vec![STATUS_TOPIC, EVENTS_TOPIC],
        )
        .await?;
        let monitor_session = join("monitor", vec![ESTOP_TOPIC], vec![STATUS_TOPIC]).await?;
        let relay_session = join("relay", vec![COMMAND_TOPIC], vec![COMMAND_IN_TOPIC]).await?;

        let agent = MobileAgent::new(agent_session, AgentConfig::default(), verifier(), source("agent")?)
            .with_pose(spec.start);
        let ground = GroundStation::new(ground_session, source("ground_station")?, verifier());
        let radius = spec.geofence.unwrap_or(f64::INFINITY);
        let monitor = Monitor::new(monitor_session, source("monitor")?, verifier(), radius);
        // The relay signs whatever it forwards, in every mode.
        let relay_key = cast.credentials("relay")?.keypair;
        let relay = Relay::new(
            relay_session,
            EnvelopeSource::new("relay", Some(relay_key), clock.clone()),
            Verifier::strict(cast.public_keys(), clock.clone()),
        );
        let status_every = match (spec.status_every, spec.geofence) {
            (0, Some(_)) => 10,
            (n, _) => n,
        };
        Ok(Self {
            mode,
            cast,
            broker,
            capture,
            agent,
            ground,
            monitor,
            relay,
            status_every,
            marks: HashMap::new(),
            decisions: Vec::new(),
            observed: Vec::new(),
        })
    }

    /// Lets every message already in flight reach the agent, and returns
    /// what the agent made of it.
    async fn settle(&mut self) -> Result<Vec<Handled>, AgentError> {
        self.ground.session().barrier().await?;
        self.monitor.session().barrier().await?;
        self.relay.session().barrier().await?;
        let forwarded = self.relay.process_pending().await?;
        if !forwarded.is_empty() {
            self.relay.session().barrier().await?;
        }
        self.agent.session().barrier().await?;
        let handled = self.agent.process_pending().await?;
        // Rejection reports must be in the broker log before anyone reads it.
        self.agent.session().barrier().await?;
        self.ground.process_pending().await?;
        Ok(handled)
    }

    async fn advance_to(&mut self, tick: u64) -> Result<(), AgentError> {
        while self.agent.core().tick_count() < tick {
            self.agent.core_mut().tick();
            if self.status_every > 0 && self.agent.core().tick_count() % self.status_every == 0 {
                self.agent.publish_status().await?;
                self.agent.session().barrier().await?;
                self.monitor.session().barrier().await?;
                if !self.monitor.process_pending().await?.is_empty() {
                    self.settle().await?;
                }
            }
        }
        Ok(())
    }

    async fn send(&mut self, actor: &str, topic: &str, payload: &[u8]) -> Result<Envelope, AgentError> {
        let env = match actor {
            "monitor" => self.monitor.publish(topic, payload).await?,
            _ => self.ground.publish(topic, payload).await?,
        };
        if actor == "ground_station" {
            self.observed.push(env.encode_wire()?);
        }
        Ok(env)
    }

    async fn probe(&self, principal: &str, topic: &str, action: Action) -> Result<bool, AgentError> {
        let role = self.cast.member(principal).map(|m| m.certificate.role).unwrap_or(Role::Other);
        let mut cfg = NodeConfig::new(self.broker.addr().to_string(), self.mode, principal, role);
        cfg = match action {
            Action::Publish => cfg.publishes([topic]),
            Action::Subscribe => cfg.subscribes([topic]),
        };
        if self.mode.secure_channel() {
            cfg = cfg.with_credentials(self.cast.credentials(principal)?);
        }
        match node_connect(cfg).await {
            Ok(session) => {
                session.publisher().close().await;
                Ok(true)
            }
            Err(BusError::NotAuthorized(_)) => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn attacker(&self) -> Result<Attacker, AgentError> {
        let creds = self.cast.credentials("attacker")?;
        Ok(Attacker::new(self.broker.addr().to_string(), self.mode, Some(creds)))
    }

    /// Captured envelopes on `topic` that an outsider could pick out as
    /// genuine: any envelope whose signature checks against a published key.
    fn material(&self, topic: &str) -> Result<Vec<Vec<u8>>, AgentError> {
        let records = capture_load(&self.capture).map_err(|e| AgentError::ScenarioSetupFailure(e.to_string()))?;
        let keys = self.cast.public_keys();
        let genuine = |wire: &Vec<u8>| {
            let Ok(env) = Envelope::decode_wire(wire) else { return false };
            if env.topic != topic {
                return false;
            }
            if !env.is_signed() {
                return env.sender == "ground_station";
            }
            let Some(key) = keys.get(&env.sender) else { return false };
            env.canonical_bytes().map(|c| crypto::verify(key, &c, &env.signature)).unwrap_or(false)
        };
        let harvested: Vec<Vec<u8>> = harvest_envelopes(&records).into_iter().filter(genuine).collect();
        if !harvested.is_empty() {
            return Ok(harvested);
        }
        Ok(self.observed.iter().filter(|w| genuine(w)).cloned().collect())
    }

    /// Publish-to-apply time of one zero-velocity command.
    async fn command_latency(&mut self) -> Result<Duration, AgentError> {
        let t0 = Instant::now();
        let env = self.ground.send_velocity(0.0, 0.0).await?;
        loop {
            let envelope = tokio::time::timeout(Duration::from_secs(30), self.agent_recv())
                .await
                .map_err(|_| AgentError::ScenarioSetupFailure("latency probe timed out".into()))?
                .ok_or(BusError::ConnectionLost)?;
            let same = envelope.sender == env.sender && envelope.seq == env.seq && envelope.topic == env.topic;
            let handled = self.agent.handle(&envelope);
            if same {
                if !handled.is_applied() {
                    return Err(AgentError::ScenarioSetupFailure(format!("latency probe not applied: {handled:?}")));
                }
                return Ok(t0.elapsed());
            }
        }
    }

    /// Next delivery to the agent; `None` once its connection is gone.
    async fn agent_recv(&mut self) -> Option<Envelope> {
        loop {
            if let Inbound::Deliver { envelope, .. } = self.agent.session_mut().recv().await? {
                return Some(envelope);
            }
        }
    }

    async fn flood(&mut self, params: &AttackParams) -> Result<(AttackReport, LatencySummary), AgentError> {
        const SAMPLES: usize = 50;
        let mut unloaded = Vec::with_capacity(SAMPLES);
        for _ in 0..SAMPLES {
            unloaded.push(self.command_latency().await?);
        }
        let attacker = self.attacker()?;
        let p = params.clone();
        let task = tokio::spawn(async move { attacker.flood(&p).await });
        let mut loaded = Vec::new();
        while (!task.is_finished() || loaded.len() < SAMPLES) && loaded.len() < 20 * SAMPLES {
            loaded.push(self.command_latency().await?);
        }
        let report = task.await.map_err(|e| AgentError::ScenarioSetupFailure(e.to_string()))??;
        let (u, l) = (median(&mut unloaded), median(&mut loaded));
        let summary = LatencySummary {
            unloaded_median_us: u.as_secs_f64() * 1e6,
            loaded_median_us: l.as_secs_f64() * 1e6,
            ratio: l.as_secs_f64() / u.as_secs_f64().max(1e-9),
            unloaded_samples: unloaded.len(),
            loaded_samples: loaded.len(),
        };
        Ok((report, summary))
    }

    async fn step(&mut self, index: usize, step: &Step, act: Act) -> Result<ActionOutcome, AgentError> {
        self.advance_to(step.at).await?;
        let events_before = self.broker.events().len();
        let mut out = ActionOutcome {
            index,
            at: step.at,
            actor: step.actor.clone(),
            action: step.action.clone(),
            outcome: String::new(),
            expected: step.expect.as_ref().and_then(|e| e.for_mode(self.mode)).map(str::to_string),
            passed: true,
            delivered: None,
            events: BTreeMap::new(),
            detail: String::new(),
            attack: None,
            latency: None,
        };
        match act {
            Act::Cmd { v, omega, count, via_relay } => {
                let topic = if via_relay { COMMAND_IN_TOPIC } else { COMMAND_TOPIC };
                let mut refused = None;
                for _ in 0..count {
                    if let Err(e) = self.send(&step.actor, topic, &velocity_payload(v, omega)).await {
                        refused = Some(e);
                        break;
                    }
                }
                let handled = self.settle().await?;
                let (delivered, label) = tally_handled(&handled);
                out.delivered = Some(delivered);
                out.outcome = match refused {
                    Some(AgentError::Bus(BusError::NotDeclared(_))) => "refused".into(),
                    Some(e) => return Err(e),
                    None => label,
                };
                out.detail = format!("{count} sent, {delivered} passed verification");
            }
            Act::EStop { engage } => {
                self.send(&step.actor, ESTOP_TOPIC, &estop_payload(engage)).await?;
                let (delivered, label) = tally_handled(&self.settle().await?);
                out.delivered = Some(delivered);
                out.outcome = label;
            }
            Act::Publish { topic, payload } => {
                let sent = self.send(&step.actor, &topic, &payload).await;
                let (delivered, label) = tally_handled(&self.settle().await?);
                out.delivered = Some(delivered);
                out.outcome = match sent {
                    Ok(_) => label,
                    Err(AgentError::Bus(BusError::NotDeclared(_))) => "refused".into(),
                    Err(e) => return Err(e),
                };
            }
            Act::Probe { principal, topic, action } => {
                let allowed = self.probe(&principal, &topic, action).await?;
                self.decisions.push(ProbeDecision { principal: principal.clone(), topic: topic.clone(), action, allowed });
                out.outcome = if allowed { "allow" } else { "deny" }.into();
                out.detail = format!("{principal} {action} {topic}");
            }
            Act::Attack { kind, params } => {
                let report = match kind {
                    AttackKind::Eavesdrop => {
                        self.settle().await?;
                        let needle = params.needle.as_deref().unwrap_or_default();
                        eavesdrop(&self.capture, needle.as_bytes())?
                    }
                    AttackKind::Flood => {
                        let (report, latency) = self.flood(&params).await?;
                        out.latency = Some(latency);
                        report
                    }
                    _ => {
                        let attacker = self.attacker()?;
                        match kind {
                            AttackKind::Forge => attacker.forge(&params).await?,
                            AttackKind::Tamper => attacker.tamper(&self.material(&params.topic)?, &params).await?,
                            AttackKind::Replay => attacker.replay(&self.material(&params.topic)?, &params).await?,
                            _ => attacker.unauthorized_publish(&params).await?,
                        }
                    }
                };
                let handled = self.settle().await?;
                let (delivered, _) = tally_handled(&handled);
                out.outcome = match (kind, &out.latency) {
                    (AttackKind::Eavesdrop, _) if report.recovered == Some(true) => "recovered".into(),
                    (AttackKind::Eavesdrop, _) => "blocked".into(),
                    (AttackKind::Flood, Some(l)) if l.ratio <= 10.0 => "contained".into(),
                    (AttackKind::Flood, _) => "degraded".into(),
                    _ if delivered == 0 => "blocked".into(),
                    _ => "delivered".into(),
                };
                if kind != AttackKind::Eavesdrop && kind != AttackKind::Flood {
                    out.delivered = Some(delivered);
                }
                out.detail = report.detail.clone();
                out.attack = Some(report);
            }
            Act::Mark { label } => {
                self.settle().await?;
                self.marks.insert(label.clone(), self.agent.core().pose());
                out.outcome = "ok".into();
                out.detail = format!("{label} = {:?}", self.agent.core().pose());
            }
            Act::AssertPose { label, pose, tol } => {
                self.settle().await?;
                let now = self.agent.core().pose();
                let target = match (&label, pose) {
                    (Some(l), _) => *self
                        .marks
                        .get(l)
                        .ok_or_else(|| AgentError::ScenarioSetupFailure(format!("no mark named {l}")))?,
                    (None, Some(p)) => p,
                    (None, None) => unreachable!("validated"),
                };
                let exact = now == target;
                let close = (now.x - target.x).abs() <= tol
                    && (now.y - target.y).abs() <= tol
                    && (now.theta - target.theta).abs() <= tol;
                out.outcome = if exact || (tol > 0.0 && close) { "ok" } else { "mismatch" }.into();
                out.detail = format!("pose {now:?}, expected {target:?}");
            }
            Act::Wait => {
                self.settle().await?;
                out.outcome = "ok".into();
            }
        }
        for e in &self.broker.events()[events_before..] {
            *out.events.entry(format!("{:?}", e.kind)).or_default() += 1;
        }
        if let Some(report) = &mut out.attack {
            report.delivered = out.delivered;
            report.rejections = out.events.clone();
        }
        if let Some(exp) = &out.expected {
            out.passed = outcome_matches(exp, &out.outcome);
        }
        Ok(out)
    }
}

/// Runs `spec` against a fresh broker and cast, both torn down afterwards.
pub async fn scenario_run(spec: &ScenarioSpec) -> Result<ScenarioReport, AgentError> {
    spec.validate()?;
    let started = Instant::now();
    let temp;
    let capture = match &spec.capture {
        Some(p) => p.clone(),
        None => {
            temp = tempfile::Builder::new().prefix("pqc2-capture-").suffix(".pqcp").tempfile()?;
            temp.path().to_path_buf()
        }
    };
    let mut runner = Runner::start(spec, capture).await?;
    let mut order: Vec<(usize, &Step)> = spec.steps.iter().enumerate().collect();
    order.sort_by_key(|(_, s)| s.at);
    let mut outcomes = Vec::with_capacity(order.len());
    for (index, step) in order {
        let act = step.parse().map_err(AgentError::ScenarioSetupFailure)?;
        outcomes.push(runner.step(index, step, act).await?);
    }
    let last = spec.steps.iter().map(|s| s.at).max().unwrap_or(0);
    runner.advance_to(spec.ticks.max(last)).await?;
    runner.settle().await?;

    let core = runner.agent.core();
    let replayed = replay_trace(*core.config(), spec.start, core.trace(), core.tick_count());
    let trace_replay_matches = replayed == core.pose();
    let mut failures: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| {
            format!(
                "step {} ({} {} at {}): expected {}, got {}",
                o.index,
                o.actor,
                o.action,
                o.at,
                o.expected.as_deref().unwrap_or("-"),
                o.outcome
            )
        })
        .collect();
    if !trace_replay_matches {
        failures.push(format!("trace replay gives {replayed:?}, agent is at {:?}", core.pose()));
    }
    let report = ScenarioReport {
        name: spec.name.clone(),
        mode: runner.mode,
        decisions: std::mem::take(&mut runner.decisions),
        final_pose: core.pose(),
        final_tick: core.tick_count(),
        estop_engaged: core.estop_engaged(),
        trace_replay_matches,
        events: runner.broker.events(),
        passed: failures.is_empty(),
        failures,
        elapsed_ms: started.elapsed().as_millis() as u64,
        steps: {
            outcomes.sort_by_key(|o| o.index);
            outcomes
        },
    };
    runner.broker.shutdown().await;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_validate() {
        for (name, _) in BUNDLED_SCENARIOS {
            let spec = bundled_scenario(name).unwrap();
            assert_eq!(spec.name, name);
        }
    }

    #[test]
    fn per_mode_expectations_fall_back_to_default() {
        let e: Expect = serde_yaml::from_str("{none: delivered, default: blocked}").unwrap();
        assert_eq!(e.for_mode(BusMode::None), Some("delivered"));
        assert_eq!(e.for_mode(BusMode::Both), Some("blocked"));
        let e: Expect = serde_yaml::from_str("allow").unwrap();
        assert_eq!(e.for_mode(BusMode::AppSig), Some("allow"));
    }

    #[test]
    fn rejected_matches_any_reason() {
        assert!(outcome_matches("rejected", "rejected:BadSignature"));
        assert!(outcome_matches("rejected:Replay", "rejected:Replay"));
        assert!(!outcome_matches("rejected:Replay", "rejected:BadSignature"));
        assert!(!outcome_matches("applied", "ignored"));
    }

    #[test]
    fn invalid_steps_are_refused_up_front() {
        let bad = [
            "name: x\nsteps: [{actor: attacker, action: cmd, args: {v: 1, omega: 0}}]",
            "name: x\nsteps: [{actor: ground_station, action: fly}]",
            "name: x\nsteps: [{actor: ground_station, action: cmd, args: {v: 1}}]",
            "name: x\nsteps: [{actor: attacker, action: attack, args: {kind: eavesdrop}}]",
            "name: x\nsteps: [{actor: observer, action: assert_pose}]",
            "name: x\nscheme: x25519\nsteps: []",
        ];
        for text in bad {
            assert!(ScenarioSpec::from_yaml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn attack_args_flatten_into_params() {
        let spec = ScenarioSpec::from_yaml(
            "name: x\nsteps: [{actor: attacker, action: attack, args: {kind: forge, count: 7, impersonate: monitor}}]",
        )
        .unwrap();
        let Act::Attack { kind, params } = spec.steps[0].parse().unwrap() else { panic!() };
        assert_eq!(kind, AttackKind::Forge);
        assert_eq!((params.count, params.impersonate.as_str()), (7, "monitor"));
    }
}
