use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use tokio::io::{AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot};

use super::events::{EventKind, SecurityEvent};
use super::message::BusMessage;
use super::{BusError, BusMode, Sealer};
use crate::authz::normalize_topic;
use crate::channel::{connect_secure, read_frame, AlertReason, ChannelConfig, ChannelError, Credentials, FrameType};
use crate::clock::{Clock, SystemClock};
use crate::envelope::Envelope;
use crate::pki::Role;

const BARRIER_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone)]
pub struct NodeConfig {
    pub broker: String,
    pub mode: BusMode,
    /// Ignored in secure-channel modes, where the certificate subject is used.
    pub subject: String,
    pub role: Role,
    pub credentials: Option<Credentials>,
    pub channel: ChannelConfig,
    pub publishes: Vec<String>,
    pub subscribes: Vec<String>,
    pub clock: Arc<dyn Clock>,
}

impl NodeConfig {
    pub fn new(broker: impl Into<String>, mode: BusMode, subject: impl Into<String>, role: Role) -> Self {
        Self {
            broker: broker.into(),
            mode,
            subject: subject.into(),
            role,
            credentials: None,
            channel: ChannelConfig::default(),
            publishes: Vec::new(),
            subscribes: Vec::new(),
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_credentials(mut self, credentials: Credentials) -> Self {
        self.subject = credentials.certificate.subject.clone();
        self.role = credentials.certificate.role;
        self.credentials = Some(credentials);
        self
    }

    pub fn publishes<I: IntoIterator<Item = S>, S: Into<String>>(mut self, topics: I) -> Self {
        self.publishes = topics.into_iter().map(Into::into).collect();
        self
    }

    pub fn subscribes<I: IntoIterator<Item = S>, S: Into<String>>(mut self, topics: I) -> Self {
        self.subscribes = topics.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_channel(mut self, channel: ChannelConfig) -> Self {
        self.channel = channel;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inbound {
    Deliver { envelope: Envelope, raw: Vec<u8> },
    Event(SecurityEvent),
}

struct Inner {
    subject: String,
    writer: tokio::sync::Mutex<OwnedWriteHalf>,
    sealer: Sealer,
    publishes: BTreeSet<String>,
    pending: Mutex<HashMap<u64, oneshot::Sender<()>>>,
    next_ping: AtomicU64,
    closed: AtomicBool,
}

/// Sending half of a session. Cheap to clone.
#[derive(Clone)]
pub struct Publisher {
    inner: Arc<Inner>,
}

impl Publisher {
    pub fn subject(&self) -> &str {
        &self.inner.subject
    }

    pub fn is_secure(&self) -> bool {
        self.inner.sealer.is_secure()
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Relaxed)
    }

    /// Publishes an envelope on its own topic, which must have been declared.
    pub async fn publish(&self, envelope: &Envelope) -> Result<(), BusError> {
        if !self.inner.publishes.contains(&envelope.topic) {
            return Err(BusError::NotDeclared(envelope.topic.clone()));
        }
        let wire = envelope.encode_wire().map_err(|e| BusError::Config(e.to_string()))?;
        self.send(&BusMessage::Publish { envelope: wire }).await
    }

    /// Sends arbitrary envelope bytes without any local checks.
    pub async fn publish_wire(&self, wire: Vec<u8>) -> Result<(), BusError> {
        self.send(&BusMessage::Publish { envelope: wire }).await
    }

    pub async fn send(&self, msg: &BusMessage) -> Result<(), BusError> {
        let bytes = msg.encode().map_err(|e| BusError::Config(e.to_string()))?;
        let mut w = self.inner.writer.lock().await;
        // Sealing under the writer lock keeps counters in wire order.
        let frame = self.inner.sealer.wrap(&bytes)?;
        self.write(&mut w, &frame).await
    }

    /// Writes bytes to the socket exactly as given.
    pub async fn send_raw(&self, bytes: &[u8]) -> Result<(), BusError> {
        let mut w = self.inner.writer.lock().await;
        self.write(&mut w, bytes).await
    }

    async fn write(&self, w: &mut OwnedWriteHalf, bytes: &[u8]) -> Result<(), BusError> {
        if self.is_closed() {
            return Err(BusError::ConnectionLost);
        }
        w.write_all(bytes).await.map_err(|_| {
            self.inner.closed.store(true, Ordering::Relaxed);
            BusError::ConnectionLost
        })
    }

    /// Returns once the broker has processed everything sent before it, and
    /// everything the broker queued for this node before that has arrived.
    pub async fn barrier(&self) -> Result<(), BusError> {
        let id = self.inner.next_ping.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = oneshot::channel();
        self.inner.pending.lock().insert(id, tx);
        self.send(&BusMessage::Ping(id)).await?;
        match tokio::time::timeout(BARRIER_TIMEOUT, rx).await {
            Ok(Ok(())) => Ok(()),
            _ => Err(BusError::ConnectionLost),
        }
    }

    /// Forwards a locally observed rejection to the broker's event log.
    pub async fn report(&self, kind: EventKind, subject: &str, topic: &str, detail: &str) -> Result<(), BusError> {
        self.send(&BusMessage::Report {
            kind,
            subject: subject.to_string(),
            topic: topic.to_string(),
            detail: detail.to_string(),
        })
        .await
    }

    pub async fn close(&self) {
        let mut w = self.inner.writer.lock().await;
        let _ = w.shutdown().await;
        self.inner.closed.store(true, Ordering::Relaxed);
    }
}

/// A registered connection to the broker.
pub struct Session {
    publisher: Publisher,
    inbox: mpsc::UnboundedReceiver<Inbound>,
}

impl Session {
    pub fn publisher(&self) -> Publisher {
        self.publisher.clone()
    }

    pub fn subject(&self) -> &str {
        self.publisher.subject()
    }

    pub async fn publish(&self, envelope: &Envelope) -> Result<(), BusError> {
        self.publisher.publish(envelope).await
    }

    pub async fn barrier(&self) -> Result<(), BusError> {
        self.publisher.barrier().await
    }

    /// Next delivery or event, in arrival order. `None` once the connection is gone.
    pub async fn recv(&mut self) -> Option<Inbound> {
        self.inbox.recv().await
    }

    pub fn try_recv(&mut self) -> Option<Inbound> {
        self.inbox.try_recv().ok()
    }

    /// Everything that has arrived so far.
    pub fn drain(&mut self) -> Vec<Inbound> {
        std::iter::from_fn(|| self.try_recv()).collect()
    }

    pub fn into_parts(self) -> (Publisher, mpsc::UnboundedReceiver<Inbound>) {
        (self.publisher, self.inbox)
    }
}

async fn read_message(rd: &mut BufReader<OwnedReadHalf>, sealer: &Sealer) -> Result<BusMessage, BusError> {
    loop {
        let frame = read_frame(rd).await?.ok_or(BusError::ConnectionLost)?;
        if frame.frame_type == FrameType::Alert {
            let reason = AlertReason::from_code(frame.body.first().copied().unwrap_or(0));
            return Err(match reason {
                AlertReason::PlaintextRejected => BusError::Channel(ChannelError::PlaintextRejected),
                r => BusError::Channel(ChannelError::PeerAlert(r)),
            });
        }
        match sealer.unwrap(frame).map(|p| BusMessage::decode(&p)) {
            Ok(Ok(msg)) => return Ok(msg),
            Ok(Err(e)) => tracing::warn!("undecodable message from broker: {e}"),
            Err(e) => tracing::warn!("rejected frame from broker: {e}"),
        }
    }
}

/// Connects, runs the handshake when the mode calls for it, and registers.
/// Registration is all or nothing: any refused topic fails the whole call.
pub async fn node_connect(config: NodeConfig) -> Result<Session, BusError> {
    let mut stream = TcpStream::connect(&config.broker)
        .await
        .map_err(|e| BusError::Config(format!("cannot reach broker {}: {e}", config.broker)))?;
    let _ = stream.set_nodelay(true);
    let sealer = if config.mode.secure_channel() {
        let creds = config
            .credentials
            .as_ref()
            .ok_or_else(|| BusError::Config(format!("mode {} needs node credentials", config.mode)))?;
        let sa = connect_secure(&mut stream, &config.channel, creds, &*config.clock, &()).await?;
        Sealer::secure(sa)
    } else {
        Sealer::plaintext()
    };
    let subject = match (&config.credentials, config.mode.secure_channel()) {
        (Some(c), true) => c.certificate.subject.clone(),
        _ => config.subject.clone(),
    };
    let (rd, wr) = stream.into_split();
    let inner = Arc::new(Inner {
        subject: subject.clone(),
        writer: tokio::sync::Mutex::new(wr),
        sealer: sealer.clone(),
        publishes: config.publishes.iter().map(|t| normalize_topic(t)).collect(),
        pending: Mutex::new(HashMap::new()),
        next_ping: AtomicU64::new(1),
        closed: AtomicBool::new(false),
    });
    let publisher = Publisher { inner: inner.clone() };
    publisher
        .send(&BusMessage::Register {
            subject,
            role: config.role,
            publishes: config.publishes.clone(),
            subscribes: config.subscribes.clone(),
        })
        .await?;

    let mut rd = BufReader::new(rd);
    match read_message(&mut rd, &sealer).await? {
        BusMessage::Ack => {}
        BusMessage::Nack { denied } => return Err(BusError::NotAuthorized(denied)),
        other => {
            return Err(BusError::Channel(ChannelError::ProtocolViolation(format!(
                "expected registration reply, got {other:?}"
            ))))
        }
    }

    let (tx, inbox) = mpsc::unbounded_channel();
    tokio::spawn(async move {
        while let Ok(msg) = read_message(&mut rd, &sealer).await {
            match msg {
                BusMessage::Deliver { envelope } => match Envelope::decode_wire(&envelope) {
                    Ok(env) => {
                        if tx.send(Inbound::Deliver { envelope: env, raw: envelope }).is_err() {
                            break;
                        }
                    }
                    Err(e) => tracing::warn!("broker delivered a malformed envelope: {e}"),
                },
                BusMessage::Event(e) => {
                    let _ = tx.send(Inbound::Event(e));
                }
                BusMessage::Pong(id) => {
                    if let Some(waiter) = inner.pending.lock().remove(&id) {
                        let _ = waiter.send(());
                    }
                }
                other => tracing::debug!("ignoring {other:?} from broker"),
            }
        }
        inner.closed.store(true, Ordering::Relaxed);
        inner.pending.lock().clear();
    });
    Ok(Session { publisher, inbox })
}
