use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use tokio::io::{AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::{JoinHandle, JoinSet};

use super::capture::{CaptureWriter, ConnectionTap};
use super::events::{EventKind, EventLog, SecurityEvent};
use super::message::BusMessage;
use super::{BusError, BusMode, Sealer, EVENTS_TOPIC};
use crate::authz::{Action, AuthzPolicy};
use crate::channel::{
    accept_secure, read_frame, AlertReason, ChannelConfig, ChannelError, Credentials, FrameTap, FrameType,
};
use crate::clock::{Clock, SystemClock};
use crate::envelope::Envelope;
use crate::pki::Role;

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
/// Malformed-frame events logged per connection before thinning to one per 1,000.
const MALFORMED_BURST: u64 = 16;

#[derive(Clone)]
pub struct BrokerConfig {
    pub listen: String,
    pub mode: BusMode,
    pub policy: AuthzPolicy,
    /// Required whenever the mode uses the secure channel.
    pub credentials: Option<Credentials>,
    pub channel: ChannelConfig,
    pub capture: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
    pub queue_capacity: usize,
    pub clock: Arc<dyn Clock>,
}

impl BrokerConfig {
    pub fn new(listen: impl Into<String>, mode: BusMode, policy: AuthzPolicy) -> Self {
        Self {
            listen: listen.into(),
            mode,
            policy,
            credentials: None,
            channel: ChannelConfig::default(),
            capture: None,
            event_log: None,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_credentials(mut self, credentials: Credentials) -> Self {
        self.credentials = Some(credentials);
        self
    }

    pub fn with_capture(mut self, path: impl Into<PathBuf>) -> Self {
        self.capture = Some(path.into());
        self
    }

    pub fn with_event_log(mut self, path: impl Into<PathBuf>) -> Self {
        self.event_log = Some(path.into());
        self
    }

    pub fn with_channel(mut self, channel: ChannelConfig) -> Self {
        self.channel = channel;
        self
    }
}

type Outbound = Arc<Vec<u8>>;

struct Route {
    subject: String,
    subscribes: BTreeSet<String>,
    tx: mpsc::Sender<Outbound>,
}

struct Shared {
    mode: BusMode,
    policy: AuthzPolicy,
    credentials: Option<Credentials>,
    channel: ChannelConfig,
    clock: Arc<dyn Clock>,
    queue_capacity: usize,
    capture: Option<CaptureWriter>,
    events: EventLog,
    routes: Mutex<HashMap<u64, Route>>,
    delivered: AtomicU64,
    next_conn: AtomicU64,
}

impl Shared {
    fn emit(&self, kind: EventKind, subject: &str, topic: &str, detail: String) {
        let event = self.events.append(SecurityEvent {
            ts: self.clock.now_ms(),
            kind,
            subject: subject.to_string(),
            topic: topic.to_string(),
            detail,
        });
        let Ok(bytes) = BusMessage::Event(event).encode() else { return };
        let msg = Arc::new(bytes);
        // Fan-out failures are not themselves reported, or a full queue would
        // generate events about itself forever.
        for route in self.routes.lock().values() {
            if route.subscribes.contains(EVENTS_TOPIC)
                && self.policy.check(&route.subject, EVENTS_TOPIC, Action::Subscribe).allow
            {
                let _ = route.tx.try_send(msg.clone());
            }
        }
    }

    fn route(&self, topic: &str, envelope: Vec<u8>) {
        let Ok(bytes) = BusMessage::Deliver { envelope }.encode() else { return };
        let msg = Arc::new(bytes);
        let mut overflowed = Vec::new();
        {
            let routes = self.routes.lock();
            for route in routes.values() {
                if !route.subscribes.contains(topic) || !self.policy.check(&route.subject, topic, Action::Subscribe).allow {
                    continue;
                }
                match route.tx.try_send(msg.clone()) {
                    Ok(()) => {
                        self.delivered.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(mpsc::error::TrySendError::Full(_)) => overflowed.push(route.subject.clone()),
                    Err(mpsc::error::TrySendError::Closed(_)) => {}
                }
            }
        }
        for subject in overflowed {
            self.emit(EventKind::Overflow, &subject, topic, "delivery queue full, message dropped".into());
        }
    }
}

pub struct BrokerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl BrokerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn mode(&self) -> BusMode {
        self.shared.mode
    }

    pub fn events(&self) -> Vec<SecurityEvent> {
        self.shared.events.snapshot()
    }

    pub fn event_count(&self, kind: EventKind) -> usize {
        self.shared.events.count(kind)
    }

    /// Envelopes handed to subscriber queues so far.
    pub fn delivered(&self) -> u64 {
        self.shared.delivered.load(Ordering::Relaxed)
    }

    pub fn connected_nodes(&self) -> Vec<String> {
        let mut v: Vec<_> = self.shared.routes.lock().values().map(|r| r.subject.clone()).collect();
        v.sort();
        v
    }

    /// Stops accepting, drops every connection and waits for the tasks to end.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }

    /// Runs until the serving task ends, which only happens on shutdown.
    pub async fn join(mut self) {
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Binds the listener and serves connections on the current runtime until
/// the returned handle is shut down or dropped.
pub async fn broker_serve(config: BrokerConfig) -> Result<BrokerHandle, BusError> {
    if config.mode.secure_channel() && config.credentials.is_none() {
        return Err(BusError::Config(format!("mode {} needs broker credentials", config.mode)));
    }
    if !config.mode.secure_channel() {
        crate::channel::channel_mode(&ChannelConfig::plaintext());
    }
    let capture = match &config.capture {
        Some(p) => Some(CaptureWriter::create(p).map_err(|e| BusError::Config(e.to_string()))?),
        None => None,
    };
    let events = match &config.event_log {
        Some(p) => EventLog::with_file(p).map_err(|e| BusError::Config(format!("{}: {e}", p.display())))?,
        None => EventLog::new(),
    };
    let listener = TcpListener::bind(&config.listen)
        .await
        .map_err(|e| BusError::BindFailure { addr: config.listen.clone(), message: e.to_string() })?;
    let addr = listener
        .local_addr()
        .map_err(|e| BusError::BindFailure { addr: config.listen.clone(), message: e.to_string() })?;
    let shared = Arc::new(Shared {
        mode: config.mode,
        policy: config.policy,
        credentials: config.credentials,
        channel: config.channel,
        clock: config.clock,
        queue_capacity: config.queue_capacity.max(1),
        capture,
        events,
        routes: Mutex::new(HashMap::new()),
        delivered: AtomicU64::new(0),
        next_conn: AtomicU64::new(1),
    });
    let (tx, mut rx) = oneshot::channel();
    let task = {
        let shared = shared.clone();
        tokio::spawn(async move {
            let mut conns = JoinSet::new();
            loop {
                tokio::select! {
                    _ = &mut rx => break,
                    accepted = listener.accept() => match accepted {
                        Ok((stream, peer)) => {
                            conns.spawn(serve_connection(shared.clone(), stream, peer));
                        }
                        Err(e) => tracing::warn!("accept failed: {e}"),
                    },
                    Some(_) = conns.join_next(), if !conns.is_empty() => {}
                }
            }
            conns.shutdown().await;
            shared.routes.lock().clear();
        })
    };
    tracing::info!(%addr, mode = %shared.mode, "broker listening");
    Ok(BrokerHandle { addr, shared, shutdown: Some(tx), task: Some(task) })
}

struct Registration {
    subject: String,
    publishes: BTreeSet<String>,
}

struct Connection {
    shared: Arc<Shared>,
    id: u64,
    peer: String,
    authenticated: Option<(String, Role)>,
    registered: Option<Registration>,
    tx: mpsc::Sender<Outbound>,
    malformed: u64,
}

impl Connection {
    fn label(&self) -> &str {
        self.registered
            .as_ref()
            .map(|r| r.subject.as_str())
            .or(self.authenticated.as_ref().map(|a| a.0.as_str()))
            .unwrap_or(&self.peer)
    }

    fn malformed(&mut self, detail: String) {
        self.malformed += 1;
        let n = self.malformed;
        if n <= MALFORMED_BURST || n % 1000 == 0 {
            let label = self.label().to_string();
            self.shared.emit(EventKind::MalformedFrame, &label, "", format!("{detail} (#{n} on this connection)"));
        }
    }

    fn send(&self, msg: &BusMessage) {
        let Ok(bytes) = msg.encode() else { return };
        if let Err(mpsc::error::TrySendError::Full(_)) = self.tx.try_send(Arc::new(bytes)) {
            self.shared.emit(EventKind::Overflow, self.label(), "", "reply dropped, queue full".into());
        }
    }

    fn handle(&mut self, msg: BusMessage) {
        match msg {
            BusMessage::Register { subject, role, publishes, subscribes } => {
                self.register(subject, role, publishes, subscribes)
            }
            BusMessage::Publish { envelope } => self.publish(envelope),
            BusMessage::Ping(id) => self.send(&BusMessage::Pong(id)),
            BusMessage::Report { kind, subject, topic, detail } => match &self.registered {
                Some(r) => {
                    let detail = format!("reported by {}: {detail}", r.subject);
                    self.shared.emit(kind, &subject, &topic, detail)
                }
                None => self.malformed("report before registration".into()),
            },
            other => self.malformed(format!("unexpected {} message from node", message_name(&other))),
        }
    }

    fn register(&mut self, claimed: String, role: Role, publishes: Vec<String>, subscribes: Vec<String>) {
        if self.registered.is_some() {
            return self.malformed("duplicate registration".into());
        }
        let policy = &self.shared.policy;
        let pairs: Vec<(String, Action)> = publishes
            .iter()
            .map(|t| (crate::authz::normalize_topic(t), Action::Publish))
            .chain(subscribes.iter().map(|t| (crate::authz::normalize_topic(t), Action::Subscribe)))
            .collect();
        let (subject, denied) = match &self.authenticated {
            Some((cert_subject, _)) if *cert_subject != claimed => {
                let detail = format!("claimed subject {claimed:?} differs from certificate");
                self.shared.emit(EventKind::AuthzDenied, cert_subject, "", detail);
                (cert_subject.clone(), pairs.clone())
            }
            Some((cert_subject, _)) => (cert_subject.clone(), Vec::new()),
            None => (claimed, Vec::new()),
        };
        let mut denied = denied;
        if denied.is_empty() {
            denied = pairs.iter().filter(|(t, a)| !policy.check(&subject, t, *a).allow).cloned().collect();
        }
        let role = self.authenticated.as_ref().map(|a| a.1).unwrap_or(role);
        if !denied.is_empty() {
            for (topic, action) in &denied {
                self.shared.emit(EventKind::AuthzDenied, &subject, topic, format!("{action} refused at registration"));
            }
            return self.send(&BusMessage::Nack { denied });
        }
        let publishes: BTreeSet<String> =
            pairs.iter().filter(|p| p.1 == Action::Publish).map(|p| p.0.clone()).collect();
        let subscribes: BTreeSet<String> =
            pairs.iter().filter(|p| p.1 == Action::Subscribe).map(|p| p.0.clone()).collect();
        tracing::debug!(subject, ?role, ?publishes, ?subscribes, "node registered");
        {
            // Ack goes out before any delivery can be queued for this node.
            let mut routes = self.shared.routes.lock();
            routes.insert(self.id, Route { subject: subject.clone(), subscribes, tx: self.tx.clone() });
            let _ = self.tx.try_send(Arc::new(BusMessage::Ack.encode().expect("ack encodes")));
        }
        self.registered = Some(Registration { subject, publishes });
    }

    fn publish(&mut self, wire: Vec<u8>) {
        if self.registered.is_none() {
            return self.malformed("publish before registration".into());
        }
        let envelope = match Envelope::decode_wire(&wire) {
            Ok(e) => e,
            Err(e) => return self.malformed(e.to_string()),
        };
        let reg = self.registered.as_ref().expect("checked above");
        let topic = &envelope.topic;
        if !reg.publishes.contains(topic) {
            let subject = reg.subject.clone();
            return self.shared.emit(EventKind::AuthzDenied, &subject, topic, "publish to undeclared topic".into());
        }
        if !self.shared.policy.check(&reg.subject, topic, Action::Publish).allow {
            let subject = reg.subject.clone();
            return self.shared.emit(EventKind::AuthzDenied, &subject, topic, "publish refused".into());
        }
        if self.authenticated.is_some() && envelope.sender != reg.subject {
            let detail = format!("envelope sender {:?} differs from authenticated subject", envelope.sender);
            let subject = reg.subject.clone();
            return self.shared.emit(EventKind::AuthzDenied, &subject, topic, detail);
        }
        self.shared.route(topic, wire);
    }
}

fn message_name(m: &BusMessage) -> &'static str {
    match m {
        BusMessage::Register { .. } => "register",
        BusMessage::Ack => "ack",
        BusMessage::Nack { .. } => "nack",
        BusMessage::Publish { .. } => "publish",
        BusMessage::Deliver { .. } => "deliver",
        BusMessage::Ping(_) => "ping",
        BusMessage::Pong(_) => "pong",
        BusMessage::Report { .. } => "report",
        BusMessage::Event(_) => "event",
    }
}

async fn reject(stream: &mut TcpStream, tap: &dyn FrameTap, reason: AlertReason) {
    let alert = reason.frame();
    tap.record(true, &alert);
    let _ = stream.write_all(&alert).await;
    let _ = stream.shutdown().await;
}

async fn serve_connection(shared: Arc<Shared>, mut stream: TcpStream, peer: SocketAddr) {
    let _ = stream.set_nodelay(true);
    let peer = peer.to_string();
    let id = shared.next_conn.fetch_add(1, Ordering::Relaxed);
    let tap = ConnectionTap { capture: shared.capture.as_ref(), peer: &peer };

    let first = match read_frame(&mut stream).await {
        Ok(Some(f)) => f,
        Ok(None) => return,
        Err(e) => {
            shared.emit(EventKind::MalformedFrame, &peer, "", format!("first frame: {e}"));
            return;
        }
    };
    if let Ok(bytes) = first.encode() {
        tap.record(false, &bytes);
    }

    let mut pending = None;
    let mut authenticated = None;
    let sealer = if shared.mode.secure_channel() {
        let creds = shared.credentials.as_ref().expect("checked at startup");
        if first.frame_type == FrameType::ClientHello {
            match accept_secure(&mut stream, first, &shared.channel, creds, &*shared.clock, &tap).await {
                Ok(sa) => {
                    authenticated = Some((sa.peer_subject.clone(), sa.peer_role));
                    Sealer::secure(sa)
                }
                Err(e) => {
                    shared.emit(EventKind::HandshakeFailed, &peer, "", e.to_string());
                    return;
                }
            }
        } else if shared.channel.trap_all {
            reject(&mut stream, &tap, AlertReason::PlaintextRejected).await;
            shared.emit(EventKind::PlaintextRejected, &peer, "", "plaintext frame before handshake".into());
            return;
        } else {
            tracing::warn!(%peer, "accepting plaintext connection because trap_all is off");
            pending = Some(first);
            Sealer::plaintext()
        }
    } else if first.frame_type == FrameType::ClientHello {
        reject(&mut stream, &tap, AlertReason::ProtocolViolation).await;
        shared.emit(EventKind::HandshakeFailed, &peer, "", "broker runs without the secure channel".into());
        return;
    } else {
        pending = Some(first);
        Sealer::plaintext()
    };

    let (rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::channel::<Outbound>(shared.queue_capacity);
    let writer = {
        let (shared, sealer, peer) = (shared.clone(), sealer.clone(), peer.clone());
        tokio::spawn(async move {
            let tap = ConnectionTap { capture: shared.capture.as_ref(), peer: &peer };
            while let Some(msg) = rx.recv().await {
                let bytes = match sealer.wrap(&msg) {
                    Ok(b) => b,
                    Err(ChannelError::CounterExhausted) => break,
                    Err(e) => {
                        tracing::warn!("cannot frame outbound message: {e}");
                        continue;
                    }
                };
                tap.record(true, &bytes);
                if wr.write_all(&bytes).await.is_err() {
                    break;
                }
            }
        })
    };

    let mut conn = Connection { shared: shared.clone(), id, peer: peer.clone(), authenticated, registered: None, tx, malformed: 0 };
    let mut rd = BufReader::new(rd);
    loop {
        let frame = match pending.take() {
            Some(f) => f,
            None => match read_frame(&mut rd).await {
                Ok(Some(f)) => {
                    if let Ok(bytes) = f.encode() {
                        tap.record(false, &bytes);
                    }
                    f
                }
                Ok(None) | Err(ChannelError::ConnectionClosed) | Err(ChannelError::Io(_)) => break,
                Err(e) => {
                    // The stream is no longer frame-aligned.
                    conn.malformed(e.to_string());
                    break;
                }
            },
        };
        if frame.frame_type == FrameType::Alert {
            break;
        }
        let plaintext = match sealer.unwrap(frame) {
            Ok(p) => p,
            Err(ChannelError::Replay) => {
                let label = conn.label().to_string();
                shared.emit(EventKind::Replay, &label, "", "replayed channel frame".into());
                continue;
            }
            Err(e) => {
                conn.malformed(e.to_string());
                // A connection sending junk gives way to everyone else.
                tokio::task::yield_now().await;
                continue;
            }
        };
        match BusMessage::decode(&plaintext) {
            Ok(msg) => conn.handle(msg),
            Err(e) => {
                conn.malformed(format!("bad message: {e}"));
                tokio::task::yield_now().await;
            }
        }
    }
    shared.routes.lock().remove(&id);
    drop(conn);
    let _ = tokio::time::timeout(Duration::from_secs(1), writer).await;
}
