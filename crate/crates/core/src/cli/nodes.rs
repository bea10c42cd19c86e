use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crate::agents::{
    attacker_run, serve_console, AgentConfig, AttackKind, Attacker, ConsoleHub, EnvelopeSource, GroundStation,
    MobileAgent, Monitor, Relay, Verifier, COMMAND_IN_TOPIC, COMMAND_TOPIC, ESTOP_TOPIC, STATUS_TOPIC,
};
use crate::authz::AuthzPolicy;
use crate::bus::{broker_serve, node_connect, BrokerConfig, BusMode, NodeConfig, EVENTS_TOPIC};
use crate::channel::{ChannelConfig, Credentials, SharedKeyPair};
use crate::clock::{Clock, SystemClock};
use crate::crypto::{keyfile, PublicKey, SchemeId};
use crate::pki::{Certificate, Decision, Role, TrustStore};

use super::config::{Identity, RunConfig};
use super::pki::read_cert;
use super::{config_err, runtime_err, AttackerArgs, BrokerArgs, CliError};

const DEFAULT_LISTEN: &str = "127.0.0.1:7400";
const KEY_SYNC: Duration = Duration::from_millis(250);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Ground,
    Agent,
    Monitor,
    Relay,
}

impl NodeKind {
    fn default_subject(self) -> (&'static str, Role) {
        match self {
            NodeKind::Ground => ("ground_station", Role::GroundStation),
            NodeKind::Agent => ("agent", Role::Agent),
            NodeKind::Monitor => ("monitor", Role::Monitor),
            NodeKind::Relay => ("relay", Role::Relay),
        }
    }

    fn topics(self) -> (Vec<&'static str>, Vec<&'static str>) {
        match self {
            NodeKind::Ground => (vec![COMMAND_TOPIC, ESTOP_TOPIC], vec![STATUS_TOPIC, EVENTS_TOPIC]),
            NodeKind::Agent => (vec![STATUS_TOPIC], vec![COMMAND_TOPIC, ESTOP_TOPIC]),
            NodeKind::Monitor => (vec![ESTOP_TOPIC], vec![STATUS_TOPIC]),
            NodeKind::Relay => (vec![COMMAND_TOPIC], vec![COMMAND_IN_TOPIC]),
        }
    }

    /// Whether this node signs what it publishes in `mode`.
    fn signs(self, mode: BusMode) -> bool {
        self == NodeKind::Relay || mode.app_sig()
    }
}

/// A node identity read from disk and checked against its CA.
struct Loaded {
    credentials: Credentials,
    key_path: PathBuf,
}

impl Loaded {
    fn read(id: &Identity) -> Result<Self, CliError> {
        let ca = read_cert(&id.ca)?;
        let trust = TrustStore::new(vec![ca]).map_err(|e| config_err(format!("{}: {e}", id.ca.display())))?;
        let certificate = read_cert(&id.cert)?;
        if let Decision::Deny(r) = trust.verify_certificate(&certificate, SystemClock.now_secs()) {
            return Err(config_err(format!("{}: certificate rejected ({r:?})", id.cert.display())));
        }
        let keypair = keyfile::read_secret(&id.key).map_err(config_err)?;
        if keypair.public_key_bytes() != certificate.subject_public_key.as_slice() {
            return Err(config_err(format!("{} does not match {}", id.key.display(), id.cert.display())));
        }
        let credentials = Credentials::new(certificate, keypair, trust).map_err(config_err)?;
        Ok(Self { credentials, key_path: id.key.clone() })
    }

    fn stateful(&self) -> bool {
        self.credentials.certificate.scheme_id == SchemeId::HASH_MERKLE
    }
}

/// Writes a stateful key back whenever its remaining signature count changes,
/// so a restart never reuses a one-time leaf the previous run consumed.
fn sync_key(keypair: SharedKeyPair, path: PathBuf) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut last = keypair.lock().remaining_uses();
        let mut tick = tokio::time::interval(KEY_SYNC);
        loop {
            tick.tick().await;
            let now = keypair.lock().remaining_uses();
            if now != last {
                let result = keyfile::write_secret(&path, &keypair.lock());
                if let Err(e) = result {
                    tracing::error!("cannot persist key state to {}: {e}", path.display());
                }
                last = now;
            }
        }
    })
}

fn collect_certificates(paths: &[PathBuf]) -> Result<Vec<Certificate>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.extension().is_some_and(|x| x == "cert"))
                .collect();
            entries.sort();
            for e in entries {
                out.push(read_cert(&e)?);
            }
        } else {
            out.push(read_cert(p)?);
        }
    }
    Ok(out)
}

fn require_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let path = path.ok_or_else(|| config_err("--config FILE is required"))?;
    RunConfig::load(path)
}

pub struct PreparedNode {
    kind: NodeKind,
    config: RunConfig,
    channel: ChannelConfig,
    subject: String,
    role: Role,
    identity: Option<Loaded>,
    peers: HashMap<String, PublicKey>,
}

impl PreparedNode {
    pub fn log_level(&self) -> &str {
        self.config.log_level()
    }

    pub fn override_console(&mut self, port: Option<u16>, ui: Option<PathBuf>) -> Result<(), CliError> {
        if port.is_some() {
            self.config.console_port = port;
        }
        if ui.is_some() {
            self.config.serve_ui = ui;
        }
        check_ui(&self.config)
    }
}

fn check_ui(config: &RunConfig) -> Result<(), CliError> {
    if let Some(dir) = &config.serve_ui {
        if config.console_port.is_none() {
            return Err(config_err("serving the console UI needs a console port"));
        }
        if !dir.join("index.html").is_file() {
            return Err(config_err(format!("{} has no index.html", dir.display())));
        }
    }
    Ok(())
}

/// Loads and checks everything a node needs before it touches the network.
pub fn prepare(kind: NodeKind, path: Option<&Path>) -> Result<PreparedNode, CliError> {
    let config = require_config(path)?;
    let mode = config.mode;
    let channel = config.channel()?;
    let identity = config.identity.as_ref().map(Loaded::read).transpose()?;
    if identity.is_none() && (mode.secure_channel() || kind.signs(mode)) {
        return Err(config_err(format!("mode {mode} needs an identity (cert, key, ca) for this node")));
    }
    let (default_subject, default_role) = kind.default_subject();
    let (subject, role) = match &identity {
        Some(l) => (l.credentials.certificate.subject.clone(), l.credentials.certificate.role),
        None => (config.subject.clone().unwrap_or_else(|| default_subject.to_string()), default_role),
    };
    let peers = match &identity {
        Some(l) => {
            let certs = collect_certificates(&config.peers)?;
            Verifier::keys_from_certificates(&certs, &l.credentials.trust, SystemClock.now_secs())
        }
        None => HashMap::new(),
    };
    let verifies = mode.app_sig() || kind == NodeKind::Relay;
    if verifies && peers.is_empty() {
        return Err(config_err("peers: no valid certificates to verify incoming envelopes with"));
    }
    if kind != NodeKind::Ground && (config.console_port.is_some() || !config.script.is_empty()) {
        return Err(config_err("console_port and script only apply to the ground station"));
    }
    if config.status_hz.is_some_and(|hz| !(hz > 0.0 && hz.is_finite())) {
        return Err(config_err("status_hz must be positive"));
    }
    if config.geofence.is_some_and(|r| !(r > 0.0)) {
        return Err(config_err("geofence must be a positive radius"));
    }
    check_ui(&config)?;
    Ok(PreparedNode { kind, config, channel, subject, role, identity, peers })
}

pub async fn run_node(p: PreparedNode) -> Result<(), CliError> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let mode = p.config.mode;
    let (publishes, subscribes) = p.kind.topics();
    let mut cfg = NodeConfig::new(p.config.broker.clone(), mode, p.subject.clone(), p.role)
        .publishes(publishes)
        .subscribes(subscribes)
        .with_channel(p.channel.clone());
    if let (true, Some(l)) = (mode.secure_channel(), &p.identity) {
        cfg = cfg.with_credentials(l.credentials.clone());
    }
    let _sync = p.identity.as_ref().filter(|l| l.stateful()).map(|l| sync_key(l.credentials.keypair.clone(), l.key_path.clone()));
    let session = node_connect(cfg).await.map_err(runtime_err)?;
    tracing::info!(subject = %p.subject, %mode, broker = %p.config.broker, "connected");

    let signing_key = p.identity.as_ref().filter(|_| p.kind.signs(mode));
    // Starting at the wall clock keeps sequence numbers ahead of receivers
    // that remember this node's previous run.
    let mut source = EnvelopeSource::new(p.subject.clone(), signing_key.map(|l| l.credentials.keypair.clone()), clock.clone())
        .starting_at(clock.now_ms());
    if let Some(l) = signing_key.filter(|l| l.stateful()) {
        source = source.persisting_to(l.key_path.clone());
    }
    let verifier = match p.kind {
        NodeKind::Relay => Verifier::strict(p.peers.clone(), clock.clone()),
        _ => Verifier::new(mode, p.peers.clone(), clock.clone()),
    };

    let work = async {
        match p.kind {
            NodeKind::Agent => {
                let mut agent = MobileAgent::new(session, AgentConfig::default(), verifier, source);
                if let Some(start) = p.config.start {
                    agent = agent.with_pose(start);
                }
                agent.run(p.config.status_hz.unwrap_or(10.0)).await
            }
            NodeKind::Monitor => {
                Monitor::new(session, source, verifier, p.config.geofence.unwrap_or(f64::INFINITY)).run().await
            }
            NodeKind::Relay => Relay::new(session, source, verifier).run().await,
            NodeKind::Ground => {
                let station = GroundStation::new(session, source, verifier);
                let script = p.config.script.iter().map(|s| (Duration::from_millis(s.at_ms), s.command)).collect();
                match p.config.console_port {
                    Some(port) => {
                        let (hub, commands) = ConsoleHub::new();
                        let bridge = serve_console(&format!("127.0.0.1:{port}"), hub.clone(), p.config.serve_ui.clone()).await?;
                        println!("console bridge on ws://{}/", bridge.addr());
                        let result = station.run(Some(hub), Some(commands), script).await;
                        bridge.shutdown().await;
                        result
                    }
                    None => station.run(None, None, script).await,
                }
            }
        }
    };
    tokio::select! {
        r = work => r.map_err(runtime_err),
        _ = tokio::signal::ctrl_c() => Ok(()),
    }
}

pub struct PreparedBroker {
    config: BrokerConfig,
    log_level: String,
    identity: Option<Loaded>,
}

impl PreparedBroker {
    pub fn log_level(&self) -> &str {
        &self.log_level
    }
}

pub fn prepare_broker(args: &BrokerArgs) -> Result<PreparedBroker, CliError> {
    let file = args.config.as_deref().map(RunConfig::load).transpose()?;
    let mode = match (&args.mode, &file) {
        (Some(m), _) => m.parse::<BusMode>().map_err(config_err)?,
        (None, Some(f)) => f.mode,
        (None, None) => BusMode::default(),
    };
    let listen = args.listen.clone().or_else(|| file.as_ref().map(|f| f.broker.clone())).unwrap_or(DEFAULT_LISTEN.into());
    let authz = args
        .authz
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.authz.clone()))
        .ok_or_else(|| config_err("--authz FILE is required"))?;
    let policy = AuthzPolicy::load(&authz).map_err(|e| config_err(format!("{}: {e}", authz.display())))?;

    let file_id = file.as_ref().and_then(|f| f.identity.clone());
    let identity = match (&args.ca, &args.cert, &args.key) {
        (Some(ca), Some(cert), Some(key)) => Some(Identity { cert: cert.clone(), key: key.clone(), ca: ca.clone() }),
        (None, None, None) => file_id,
        _ => return Err(config_err("--ca, --cert and --key go together")),
    };
    let identity = identity.as_ref().map(Loaded::read).transpose()?;
    if mode.secure_channel() && identity.is_none() {
        return Err(config_err(format!("mode {mode} needs --ca, --cert and --key")));
    }
    let channel = match (&args.suites, &file) {
        (Some(path), _) => ChannelConfig::load(path).map_err(config_err)?,
        (None, Some(f)) => f.channel()?,
        (None, None) => ChannelConfig::default(),
    };
    let mut config = BrokerConfig::new(listen, mode, policy).with_channel(channel);
    if let Some(l) = &identity {
        config = config.with_credentials(l.credentials.clone());
    }
    for (path, is_capture) in [
        (args.capture.clone().or_else(|| file.as_ref().and_then(|f| f.capture.clone())), true),
        (args.event_log.clone().or_else(|| file.as_ref().and_then(|f| f.event_log.clone())), false),
    ] {
        let Some(path) = path else { continue };
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(config_err(format!("{}: directory does not exist", parent.display())));
        }
        config = if is_capture { config.with_capture(path) } else { config.with_event_log(path) };
    }
    let log_level = file.as_ref().map(|f| f.log_level().to_string()).unwrap_or_else(|| "info".into());
    Ok(PreparedBroker { config, log_level, identity })
}

pub async fn run_broker(p: PreparedBroker) -> Result<(), CliError> {
    let _sync = p.identity.as_ref().filter(|l| l.stateful()).map(|l| sync_key(l.credentials.keypair.clone(), l.key_path.clone()));
    let mode = p.config.mode;
    let broker = broker_serve(p.config).await.map_err(runtime_err)?;
    println!("broker listening on {} (mode {mode})", broker.addr());
    tokio::signal::ctrl_c().await.map_err(runtime_err)?;
    broker.shutdown().await;
    // Let the key sync task see the final state.
    tokio::time::sleep(KEY_SYNC * 2).await;
    Ok(())
}

pub struct PreparedAttacker {
    config: RunConfig,
    kind: AttackKind,
    identity: Option<Loaded>,
    channel: ChannelConfig,
    report: Option<PathBuf>,
}

impl PreparedAttacker {
    pub fn log_level(&self) -> &str {
        self.config.log_level()
    }
}

pub fn prepare_attacker(args: &AttackerArgs) -> Result<PreparedAttacker, CliError> {
    let mut config = require_config(args.config.as_deref())?;
    let section = config.attack.get_or_insert_with(|| super::AttackSection {
        kind: AttackKind::Forge,
        params: Default::default(),
    });
    let kind = match &args.kind {
        Some(k) => k.parse::<AttackKind>().map_err(config_err)?,
        None => section.kind,
    };
    if let Some(n) = args.count {
        section.params.count = n;
    }
    let needs_capture = matches!(kind, AttackKind::Tamper | AttackKind::Replay | AttackKind::Eavesdrop);
    match &section.params.capture {
        Some(c) if needs_capture && !c.is_file() => return Err(config_err(format!("{}: no such capture", c.display()))),
        None if needs_capture => return Err(config_err(format!("{kind} needs attack.capture"))),
        _ => {}
    }
    if kind == AttackKind::Eavesdrop && section.params.needle.is_none() {
        return Err(config_err("eavesdrop needs attack.needle"));
    }
    let identity = config.identity.as_ref().map(Loaded::read).transpose()?;
    if config.mode.secure_channel() && identity.is_none() && kind != AttackKind::Eavesdrop {
        return Err(config_err(format!("mode {} needs an attacker identity", config.mode)));
    }
    let channel = config.channel()?;
    Ok(PreparedAttacker { config, kind, identity, channel, report: args.report.clone() })
}

pub async fn run_attacker(p: PreparedAttacker) -> Result<(), CliError> {
    let params = p.config.attack.as_ref().map(|a| a.params.clone()).unwrap_or_default();
    let attacker = Attacker::new(p.config.broker.clone(), p.config.mode, p.identity.as_ref().map(|l| l.credentials.clone()))
        .with_channel(p.channel);
    let report = attacker_run(&attacker, p.kind, &params).await.map_err(runtime_err)?;
    if let Some(l) = p.identity.as_ref().filter(|l| l.stateful()) {
        keyfile::write_secret(&l.key_path, &l.credentials.keypair.lock()).map_err(runtime_err)?;
    }
    let json = serde_json::to_string_pretty(&report).map_err(runtime_err)?;
    if let Some(path) = &p.report {
        std::fs::write(path, &json).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
    }
    println!("{json}");
    Ok(())
}
