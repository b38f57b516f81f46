//! Client SDK for the SmartRescue broker.
//!
//! A [`Client`] is one session: it publishes fire-and-forget, heartbeats in the
//! background when it can publish, and hands out [`Subscription`] streams that
//! yield matching events plus publisher presence changes.
//!
//! There is no automatic reconnect. When the connection drops every call
//! returns [`ClientError::SessionClosed`] and subscriptions end.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::StreamExt;
use thiserror::Error;
use tokio::io::{AsyncWriteExt, BufWriter};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot};
use tokio_util::codec::{AnyDelimiterCodec, FramedRead};
use tokio_util::sync::CancellationToken;

use smartrescue_core::model::{GeoPosition, SensorEvent, SensorKind, SensorValue};
use smartrescue_core::predicate::Predicate;
use smartrescue_core::protocol::{
    decode_frame, encode_frame, ErrorBody, ErrorCode, Frame, Heartbeat, Presence, Role, Subscribe, Unsubscribe,
    WireEvent, MAX_FRAME_LEN, PROTOCOL_VERSION,
};

pub const DEFAULT_HEARTBEAT_INTERVAL: Duration = Duration::from_secs(5);
pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(3);
/// Per-subscription delivery buffer; mirrors the broker's per-session queue.
pub const DEFAULT_STREAM_BUFFER: usize = 1024;

#[derive(Debug, Clone)]
pub struct ClientConfig {
    /// `host:port` of the broker.
    pub broker_address: String,
    pub role: Role,
    /// Installation code; reuse it across reconnects to keep identity.
    pub client_id: String,
    pub heartbeat_interval: Duration,
    pub handshake_timeout: Duration,
    pub stream_buffer: usize,
    /// Keep a copy of every line sent and received.
    pub record_transcript: bool,
}

impl ClientConfig {
    pub fn new(broker_address: impl Into<String>, role: Role, client_id: impl Into<String>) -> Self {
        Self {
            broker_address: broker_address.into(),
            role,
            client_id: client_id.into(),
            heartbeat_interval: DEFAULT_HEARTBEAT_INTERVAL,
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            stream_buffer: DEFAULT_STREAM_BUFFER,
            record_transcript: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connection to {address} refused: {source}")]
    ConnectionRefused { address: String, source: io::Error },
    #[error("protocol version mismatch: {0}")]
    VersionMismatch(String),
    #[error("broker did not complete the handshake in time")]
    HandshakeTimeout,
    #[error("handshake rejected: {0}")]
    HandshakeRejected(String),
    #[error("invalid client id: {0}")]
    InvalidClientId(String),
    #[error("client role does not include publishing")]
    NotAPublisher,
    #[error("client role does not include subscribing")]
    NotASubscriber,
    #[error("session closed")]
    SessionClosed,
    #[error("invalid event: {0}")]
    EventInvalid(String),
    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),
    #[error("broker error {code:?}: {message}")]
    Broker { code: ErrorCode, message: String },
    #[error("no reply from broker within {0:?}")]
    Timeout(Duration),
}

/// One item on a subscription stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Event {
        subscription_ids: Vec<String>,
        event: WireEvent,
    },
    Presence(Presence),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Debug, Clone)]
pub struct TranscriptLine {
    pub direction: Direction,
    pub line: String,
}

type PendingAck = (oneshot::Sender<Result<String, ErrorBody>>, mpsc::Sender<Delivery>);

struct Shared {
    closed: AtomicBool,
    closing: CancellationToken,
    streams: Mutex<HashMap<String, mpsc::Sender<Delivery>>>,
    pending: Mutex<HashMap<u64, PendingAck>>,
    broker_errors: Mutex<Vec<ErrorBody>>,
    transcript: Option<Mutex<Vec<TranscriptLine>>>,
    dropped: AtomicU64,
}

impl Shared {
    fn record(&self, direction: Direction, line: &str) {
        if let Some(t) = &self.transcript {
            t.lock().unwrap().push(TranscriptLine {
                direction,
                line: line.trim_end_matches('\n').to_string(),
            });
        }
    }

    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.closing.cancel();
        self.streams.lock().unwrap().clear();
        self.pending.lock().unwrap().clear();
    }
}

pub struct Client {
    config: ClientConfig,
    shared: Arc<Shared>,
    out: mpsc::Sender<String>,
    next_seq: AtomicU64,
    last_published_seq: Mutex<u64>,
    next_request: AtomicU64,
    writer_task: Mutex<Option<tokio::task::JoinHandle<()>>>,
    local_addr: SocketAddr,
}

type Lines = FramedRead<OwnedReadHalf, AnyDelimiterCodec>;

impl Client {
    pub async fn connect(config: ClientConfig) -> Result<Self, ClientError> {
        smartrescue_core::model::validate_id("client_id", &config.client_id)
            .map_err(|e| ClientError::InvalidClientId(e.to_string()))?;
        let refused = |source| ClientError::ConnectionRefused {
            address: config.broker_address.clone(),
            source,
        };
        let stream =
            match tokio::time::timeout(config.handshake_timeout, TcpStream::connect(&config.broker_address)).await {
                Err(_) => return Err(ClientError::HandshakeTimeout),
                Ok(r) => r.map_err(refused)?,
            };
        let _ = stream.set_nodelay(true);
        let local_addr = stream.local_addr().map_err(refused)?;
        let (read, mut write) = stream.into_split();
        let mut lines = FramedRead::new(
            read,
            AnyDelimiterCodec::new_with_max_length(b"\n".to_vec(), Vec::new(), MAX_FRAME_LEN),
        );

        let shared = Arc::new(Shared {
            closed: AtomicBool::new(false),
            closing: CancellationToken::new(),
            streams: Mutex::new(HashMap::new()),
            pending: Mutex::new(HashMap::new()),
            broker_errors: Mutex::new(Vec::new()),
            transcript: config.record_transcript.then(|| Mutex::new(Vec::new())),
            dropped: AtomicU64::new(0),
        });

        let hello = encode_frame(&Frame::hello(config.client_id.clone(), config.role));
        shared.record(Direction::Sent, &hello);
        write
            .write_all(hello.as_bytes())
            .await
            .map_err(|_| ClientError::SessionClosed)?;

        let reply = tokio::time::timeout(config.handshake_timeout, lines.next())
            .await
            .map_err(|_| ClientError::HandshakeTimeout)?;
        let bytes = match reply {
            Some(Ok(b)) => b,
            _ => {
                return Err(ClientError::HandshakeRejected(
                    "connection closed during handshake".into(),
                ))
            }
        };
        shared.record(Direction::Received, &String::from_utf8_lossy(&bytes));
        match decode_frame(&bytes) {
            Ok(Frame::HelloAck(ack)) if ack.version == PROTOCOL_VERSION => {}
            Ok(Frame::HelloAck(ack)) => {
                return Err(ClientError::VersionMismatch(format!(
                    "client speaks {PROTOCOL_VERSION}, broker replied {}",
                    ack.version
                )))
            }
            Ok(Frame::Error(e)) if e.code == ErrorCode::VersionMismatch => {
                return Err(ClientError::VersionMismatch(e.message))
            }
            Ok(Frame::Error(e)) => return Err(ClientError::HandshakeRejected(e.message)),
            Ok(other) => {
                return Err(ClientError::HandshakeRejected(format!(
                    "expected HELLO_ACK, got {}",
                    other.type_name()
                )))
            }
            Err(e) => return Err(ClientError::HandshakeRejected(e.to_string())),
        }

        let (out, out_rx) = mpsc::channel::<String>(config.stream_buffer.max(1));
        let writer_task = tokio::spawn(write_loop(write, out_rx, shared.clone()));
        tokio::spawn(read_loop(lines, shared.clone()));
        if config.role.can_publish() {
            tokio::spawn(heartbeat_loop(
                out.clone(),
                shared.clone(),
                config.client_id.clone(),
                config.heartbeat_interval,
            ));
        }
        tracing::debug!(target: "smartrescue::client", client_id = %config.client_id, role = %config.role, "connected");

        Ok(Self {
            config,
            shared,
            out,
            next_seq: AtomicU64::new(1),
            last_published_seq: Mutex::new(0),
            next_request: AtomicU64::new(1),
            writer_task: Mutex::new(Some(writer_task)),
            local_addr,
        })
    }

    /// This end of the broker connection.
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn client_id(&self) -> &str {
        &self.config.client_id
    }

    pub fn role(&self) -> Role {
        self.config.role
    }

    pub fn is_closed(&self) -> bool {
        self.shared.closed.load(Ordering::SeqCst)
    }

    /// Build an event from this client with the next sequence number.
    /// Sequence numbers start at 1; the event id is `<client_id>-<seq>`.
    pub fn stamp(
        &self,
        kind: SensorKind,
        value: SensorValue,
        position: GeoPosition,
        timestamp_ms: i64,
    ) -> Result<SensorEvent, ClientError> {
        let seq = self.next_seq.fetch_add(1, Ordering::SeqCst);
        SensorEvent::new(
            format!("{}-{seq}", self.config.client_id),
            self.config.client_id.clone(),
            seq,
            timestamp_ms,
            kind,
            value,
            position,
        )
        .map_err(|e| ClientError::EventInvalid(e.to_string()))
    }

    /// Queue an event for sending. Returns once the frame is handed to the
    /// connection writer; the broker does not acknowledge events.
    pub async fn publish(&self, event: &SensorEvent) -> Result<(), ClientError> {
        if !self.config.role.can_publish() {
            return Err(ClientError::NotAPublisher);
        }
        if self.is_closed() {
            return Err(ClientError::SessionClosed);
        }
        if event.publisher_id != self.config.client_id {
            return Err(ClientError::EventInvalid(format!(
                "publisher_id {:?} is not this client's id {:?}",
                event.publisher_id, self.config.client_id
            )));
        }
        event.validate().map_err(|e| ClientError::EventInvalid(e.to_string()))?;
        {
            let mut last = self.last_published_seq.lock().unwrap();
            if event.seq <= *last {
                return Err(ClientError::EventInvalid(format!(
                    "seq {} does not follow previously published seq {}",
                    event.seq, *last
                )));
            }
            *last = event.seq;
        }
        self.send(encode_frame(&Frame::Publish(WireEvent::new(event.clone()))))
            .await
    }

    async fn send(&self, line: String) -> Result<(), ClientError> {
        self.out.send(line).await.map_err(|_| ClientError::SessionClosed)
    }

    /// Register a filter and return the stream of its deliveries. Events
    /// published after this returns and matching `filter` are delivered.
    pub async fn subscribe(&self, filter: &str) -> Result<Subscription, ClientError> {
        if !self.config.role.can_subscribe() {
            return Err(ClientError::NotASubscriber);
        }
        Predicate::parse(filter).map_err(|e| ClientError::InvalidPredicate(e.to_string()))?;
        if self.is_closed() {
            return Err(ClientError::SessionClosed);
        }
        let request_id = self.next_request.fetch_add(1, Ordering::SeqCst);
        let (ack_tx, ack_rx) = oneshot::channel();
        let (tx, rx) = mpsc::channel(self.config.stream_buffer.max(1));
        self.shared.pending.lock().unwrap().insert(request_id, (ack_tx, tx));
        self.send(encode_frame(&Frame::Subscribe(Subscribe {
            request_id,
            filter: filter.to_string(),
        })))
        .await?;
        let wait = self.config.handshake_timeout;
        match tokio::time::timeout(wait, ack_rx).await {
            Err(_) => {
                self.shared.pending.lock().unwrap().remove(&request_id);
                Err(ClientError::Timeout(wait))
            }
            Ok(Err(_)) => Err(ClientError::SessionClosed),
            Ok(Ok(Ok(id))) => Ok(Subscription { id, rx }),
            Ok(Ok(Err(e))) if e.code == ErrorCode::InvalidPredicate => Err(ClientError::InvalidPredicate(e.message)),
            Ok(Ok(Err(e))) => Err(ClientError::Broker {
                code: e.code,
                message: e.message,
            }),
        }
    }

    /// Remove a subscription; its stream ends.
    pub async fn unsubscribe(&self, subscription_id: &str) -> Result<(), ClientError> {
        if self.shared.streams.lock().unwrap().remove(subscription_id).is_none() {
            return Err(ClientError::Broker {
                code: ErrorCode::UnknownSubscription,
                message: format!("unknown subscription {subscription_id:?}"),
            });
        }
        self.send(encode_frame(&Frame::Unsubscribe(Unsubscribe {
            subscription_id: subscription_id.to_string(),
        })))
        .await
    }

    /// Send BYE, flush everything queued and close the connection.
    pub async fn close(&self) {
        if !self.is_closed() {
            let _ = self.send(encode_frame(&Frame::Bye)).await;
        }
        let task = self.writer_task.lock().unwrap().take();
        if let Some(task) = task {
            let _ = tokio::time::timeout(self.config.handshake_timeout, task).await;
        }
        self.shared.close();
    }

    /// Errors the broker sent that were not replies to a subscribe request.
    pub fn broker_errors(&self) -> Vec<ErrorBody> {
        self.shared.broker_errors.lock().unwrap().clone()
    }

    /// Deliveries discarded because a subscription buffer was full.
    pub fn dropped_deliveries(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    pub fn transcript(&self) -> Vec<TranscriptLine> {
        self.shared
            .transcript
            .as_ref()
            .map(|t| t.lock().unwrap().clone())
            .unwrap_or_default()
    }
}

pub struct Subscription {
    id: String,
    rx: mpsc::Receiver<Delivery>,
}

impl Subscription {
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Next delivery in arrival order; `None` once the session is closed or
    /// the subscription removed.
    pub async fn next(&mut self) -> Option<Delivery> {
        self.rx.recv().await
    }

    pub async fn next_within(&mut self, wait: Duration) -> Option<Delivery> {
        tokio::time::timeout(wait, self.rx.recv()).await.ok().flatten()
    }

    pub fn try_next(&mut self) -> Option<Delivery> {
        self.rx.try_recv().ok()
    }
}

/// Write queued lines, flushing whenever the queue runs dry. Exits after
/// writing BYE or on a socket error.
async fn write_loop(write: OwnedWriteHalf, mut rx: mpsc::Receiver<String>, shared: Arc<Shared>) {
    let bye = encode_frame(&Frame::Bye);
    let mut writer = BufWriter::new(write);
    'outer: loop {
        // queued lines still go out before a close is noticed
        let line = tokio::select! {
            biased;
            line = rx.recv() => match line {
                Some(line) => line,
                None => break,
            },
            _ = shared.closing.cancelled() => break,
        };
        let mut batch = vec![line];
        while let Ok(line) = rx.try_recv() {
            batch.push(line);
        }
        for line in &batch {
            shared.record(Direction::Sent, line);
            if writer.write_all(line.as_bytes()).await.is_err() || *line == bye {
                break 'outer;
            }
        }
        if writer.flush().await.is_err() {
            break;
        }
    }
    let _ = writer.flush().await;
    shared.close();
    let _ = writer.shutdown().await;
}

async fn read_loop(mut lines: Lines, shared: Arc<Shared>) {
    while let Some(Ok(bytes)) = lines.next().await {
        if shared.transcript.is_some() {
            shared.record(Direction::Received, &String::from_utf8_lossy(&bytes));
        }
        let frame = match decode_frame(&bytes) {
            Ok(f) => f,
            Err(e) => {
                tracing::warn!(target: "smartrescue::client", error = %e, "undecodable frame from broker");
                break;
            }
        };
        match frame {
            Frame::Notify {
                subscription_ids,
                event,
            } => {
                let streams = shared.streams.lock().unwrap();
                // one delivery per distinct local stream
                for id in &subscription_ids {
                    if let Some(tx) = streams.get(id) {
                        push(
                            &shared,
                            tx,
                            Delivery::Event {
                                subscription_ids: subscription_ids.clone(),
                                event: event.clone(),
                            },
                        );
                    }
                }
            }
            Frame::Presence(p) => {
                let streams = shared.streams.lock().unwrap();
                for tx in streams.values() {
                    push(&shared, tx, Delivery::Presence(p.clone()));
                }
            }
            Frame::SubscribeAck(ack) => {
                let pending = shared.pending.lock().unwrap().remove(&ack.request_id);
                if let Some((reply, tx)) = pending {
                    shared.streams.lock().unwrap().insert(ack.subscription_id.clone(), tx);
                    let _ = reply.send(Ok(ack.subscription_id));
                }
            }
            Frame::Error(e) => {
                let pending = e.request_id.and_then(|r| shared.pending.lock().unwrap().remove(&r));
                match pending {
                    Some((reply, _)) => {
                        let _ = reply.send(Err(e));
                    }
                    None => {
                        tracing::warn!(target: "smartrescue::client", code = ?e.code, message = %e.message, "broker error");
                        shared.broker_errors.lock().unwrap().push(e);
                    }
                }
            }
            other => {
                tracing::debug!(target: "smartrescue::client", frame = other.type_name(), "ignored frame");
            }
        }
    }
    shared.close();
}

fn push(shared: &Shared, tx: &mpsc::Sender<Delivery>, delivery: Delivery) {
    if let Err(mpsc::error::TrySendError::Full(_)) = tx.try_send(delivery) {
        shared.dropped.fetch_add(1, Ordering::Relaxed);
    }
}

async fn heartbeat_loop(out: mpsc::Sender<String>, shared: Arc<Shared>, client_id: String, every: Duration) {
    let line = encode_frame(&Frame::Heartbeat(Heartbeat { client_id }));
    let mut ticker = tokio::time::interval(every);
    ticker.tick().await;
    loop {
        ticker.tick().await;
        if shared.closed.load(Ordering::SeqCst) || out.send(line.clone()).await.is_err() {
            return;
        }
    }
}
