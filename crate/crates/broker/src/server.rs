//! TCP front end for [`Router`]: NDJSON framing, the HELLO handshake, one
//! reader and one writer task per connection, and the periodic presence scan.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use tokio::io::{AsyncWriteExt, BufWriter};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_util::codec::{AnyDelimiterCodec, AnyDelimiterCodecError, FramedRead};
use tokio_util::sync::CancellationToken;
use tokio_util::task::TaskTracker;

use smartrescue_core::protocol::{
    decode_frame, encode_frame, ErrorCode, Frame, HelloAck, ProtocolError, SubscribeAck, MAX_FRAME_LEN,
    PROTOCOL_VERSION,
};
use smartrescue_core::Clock;

use crate::router::{BrokerSettings, Outbound, Router, SessionError, SessionId};

pub const DEFAULT_PORT: u16 = 7470;

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub bind: SocketAddr,
    pub settings: BrokerSettings,
    pub handshake_timeout: Duration,
    pub scan_interval: Duration,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            settings: BrokerSettings::default(),
            handshake_timeout: Duration::from_secs(3),
            scan_interval: Duration::from_secs(1),
        }
    }
}

/// A running broker. Dropping the handle does not stop it; call
/// [`BrokerHandle::shutdown`].
pub struct BrokerHandle {
    local_addr: SocketAddr,
    router: Arc<Router>,
    cancel: CancellationToken,
    tracker: TaskTracker,
}

impl BrokerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn router(&self) -> &Arc<Router> {
        &self.router
    }

    /// Broadcast GONE for every publisher, close all sessions and wait for
    /// connection tasks to finish flushing.
    pub async fn shutdown(self) {
        self.router.shutdown();
        self.cancel.cancel();
        self.tracker.close();
        if tokio::time::timeout(Duration::from_secs(3), self.tracker.wait())
            .await
            .is_err()
        {
            tracing::warn!(target: "smartrescue::broker", event = "shutdown_timeout");
        }
        tracing::info!(target: "smartrescue::broker", event = "shutdown");
    }
}

pub async fn serve(config: BrokerConfig, clock: Arc<dyn Clock>) -> io::Result<BrokerHandle> {
    let listener = TcpListener::bind(config.bind).await?;
    let local_addr = listener.local_addr()?;
    let router = Arc::new(Router::new(config.settings.clone(), clock.clone()));
    let cancel = CancellationToken::new();
    let tracker = TaskTracker::new();
    tracing::info!(target: "smartrescue::broker", event = "listening", addr = %local_addr);

    tracker.spawn(accept_loop(
        listener,
        router.clone(),
        cancel.clone(),
        tracker.clone(),
        config.handshake_timeout,
    ));
    tracker.spawn(scan_loop(router.clone(), clock, cancel.clone(), config.scan_interval));

    Ok(BrokerHandle {
        local_addr,
        router,
        cancel,
        tracker,
    })
}

async fn scan_loop(router: Arc<Router>, clock: Arc<dyn Clock>, cancel: CancellationToken, every: Duration) {
    let mut ticker = tokio::time::interval(every);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = cancel.cancelled() => return,
            _ = ticker.tick() => {
                router.heartbeat_scan(clock.now_ms());
            }
        }
    }
}

async fn accept_loop(
    listener: TcpListener,
    router: Arc<Router>,
    cancel: CancellationToken,
    tracker: TaskTracker,
    handshake_timeout: Duration,
) {
    loop {
        let accepted = tokio::select! {
            _ = cancel.cancelled() => return,
            a = listener.accept() => a,
        };
        match accepted {
            Ok((stream, peer)) => {
                let _ = stream.set_nodelay(true);
                let router = router.clone();
                let cancel = cancel.clone();
                let inner = tracker.clone();
                tracker.spawn(async move {
                    if let Err(e) = handle_connection(stream, router, cancel, inner, handshake_timeout).await {
                        tracing::debug!(target: "smartrescue::broker", event = "connection_error", %peer, error = %e);
                    }
                });
            }
            Err(e) => {
                tracing::warn!(target: "smartrescue::broker", event = "accept_error", error = %e);
                tokio::time::sleep(Duration::from_millis(50)).await;
            }
        }
    }
}

type Lines = FramedRead<tokio::net::tcp::OwnedReadHalf, AnyDelimiterCodec>;

fn line_codec() -> AnyDelimiterCodec {
    AnyDelimiterCodec::new_with_max_length(b"\n".to_vec(), Vec::new(), MAX_FRAME_LEN)
}

enum ReadOutcome {
    Frame(Frame),
    Fatal(ProtocolError),
    Closed,
}

async fn next_frame(lines: &mut Lines) -> ReadOutcome {
    match lines.next().await {
        None => ReadOutcome::Closed,
        Some(Ok(bytes)) => match decode_frame(&bytes) {
            Ok(frame) => ReadOutcome::Frame(frame),
            Err(e) => ReadOutcome::Fatal(e),
        },
        Some(Err(AnyDelimiterCodecError::MaxChunkLengthExceeded)) => {
            ReadOutcome::Fatal(ProtocolError::OversizeFrame(MAX_FRAME_LEN + 1))
        }
        Some(Err(AnyDelimiterCodecError::Io(_))) => ReadOutcome::Closed,
    }
}

async fn write_direct(writer: &mut OwnedWriteHalf, frame: &Frame) {
    let _ = writer.write_all(encode_frame(frame).as_bytes()).await;
    let _ = writer.flush().await;
}

async fn handle_connection(
    stream: TcpStream,
    router: Arc<Router>,
    cancel: CancellationToken,
    tracker: TaskTracker,
    handshake_timeout: Duration,
) -> io::Result<()> {
    let (read, mut write) = stream.into_split();
    let mut lines = FramedRead::new(read, line_codec());

    let first = tokio::select! {
        _ = cancel.cancelled() => return Ok(()),
        r = tokio::time::timeout(handshake_timeout, next_frame(&mut lines)) => r,
    };
    let hello = match first {
        Err(_) => {
            write_direct(
                &mut write,
                &Frame::error(ErrorCode::ProtocolViolation, "no HELLO within handshake timeout", None),
            )
            .await;
            return Ok(());
        }
        Ok(ReadOutcome::Closed) => return Ok(()),
        Ok(ReadOutcome::Fatal(e)) => {
            write_direct(&mut write, &Frame::error(e.code(), e.to_string(), None)).await;
            return Ok(());
        }
        Ok(ReadOutcome::Frame(Frame::Hello(h))) => h,
        Ok(ReadOutcome::Frame(other)) => {
            write_direct(
                &mut write,
                &Frame::error(
                    ErrorCode::ProtocolViolation,
                    format!("expected HELLO, got {}", other.type_name()),
                    None,
                ),
            )
            .await;
            return Ok(());
        }
    };
    if hello.version != PROTOCOL_VERSION {
        write_direct(
            &mut write,
            &Frame::error(
                ErrorCode::VersionMismatch,
                format!("broker speaks {PROTOCOL_VERSION}, client sent {}", hello.version),
                None,
            ),
        )
        .await;
        return Ok(());
    }

    // The ack goes out before open_session so it precedes any presence
    // broadcast queued for this session.
    write_direct(
        &mut write,
        &Frame::HelloAck(HelloAck {
            version: PROTOCOL_VERSION.to_string(),
        }),
    )
    .await;
    let (session, rx) = match router.open_session(&hello.client_id, hello.role) {
        Ok(s) => s,
        Err(e) => {
            let code = match e {
                SessionError::ShuttingDown => ErrorCode::ShuttingDown,
                _ => ErrorCode::ProtocolViolation,
            };
            write_direct(&mut write, &Frame::error(code, e.to_string(), None)).await;
            return Ok(());
        }
    };
    let tx = router.sender(session);
    tracker.spawn(write_loop(write, rx));
    let Some(tx) = tx else {
        return Ok(());
    };

    let graceful = read_loop(&mut lines, &router, session, &tx, &cancel).await;
    drop(tx);
    router.close_session(session, graceful);
    Ok(())
}

/// Process frames until the session ends. Returns true on BYE.
async fn read_loop(
    lines: &mut Lines,
    router: &Router,
    session: SessionId,
    tx: &mpsc::Sender<Outbound>,
    cancel: &CancellationToken,
) -> bool {
    let reply = |frame: Frame| {
        let line: Outbound = encode_frame(&frame).into();
        let tx = tx.clone();
        async move {
            let _ = tx.send(line).await;
        }
    };
    loop {
        let outcome = tokio::select! {
            _ = cancel.cancelled() => return false,
            o = next_frame(lines) => o,
        };
        let frame = match outcome {
            ReadOutcome::Closed => return false,
            ReadOutcome::Fatal(e) => {
                tracing::warn!(target: "smartrescue::broker", event = "bad_frame", session, error = %e);
                reply(Frame::error(e.code(), e.to_string(), None)).await;
                return false;
            }
            ReadOutcome::Frame(f) => f,
        };
        match frame {
            Frame::Publish(event) => {
                if let Err(e) = router.publish(session, &event) {
                    reply(Frame::error(error_code(&e), e.to_string(), None)).await;
                }
            }
            Frame::Subscribe(sub) => match router.subscribe(session, &sub.filter) {
                Ok(subscription_id) => {
                    reply(Frame::SubscribeAck(SubscribeAck {
                        request_id: sub.request_id,
                        subscription_id,
                    }))
                    .await
                }
                Err(e) => reply(Frame::error(error_code(&e), e.to_string(), Some(sub.request_id))).await,
            },
            Frame::Unsubscribe(u) => {
                if let Err(e) = router.unsubscribe(session, &u.subscription_id) {
                    reply(Frame::error(error_code(&e), e.to_string(), None)).await;
                }
            }
            Frame::Heartbeat(_) => {
                let _ = router.heartbeat(session);
            }
            Frame::Bye => return true,
            other => {
                reply(Frame::error(
                    ErrorCode::ProtocolViolation,
                    format!("{} is not valid from a client after HELLO", other.type_name()),
                    None,
                ))
                .await;
            }
        }
    }
}

fn error_code(e: &SessionError) -> ErrorCode {
    match e {
        SessionError::NotAPublisher => ErrorCode::NotAPublisher,
        SessionError::NotASubscriber => ErrorCode::NotASubscriber,
        SessionError::InvalidPredicate(_) => ErrorCode::InvalidPredicate,
        SessionError::TooManySubscriptions(_) => ErrorCode::TooManySubscriptions,
        SessionError::UnknownSubscription(_) => ErrorCode::UnknownSubscription,
        SessionError::IdentityMismatch { .. } => ErrorCode::IdentityMismatch,
        SessionError::ShuttingDown => ErrorCode::ShuttingDown,
        SessionError::UnknownSession | SessionError::InvalidClientId(_) => ErrorCode::ProtocolViolation,
    }
}

/// Drain the session queue to the socket, flushing whenever the queue runs
/// dry. Ends when every sender is gone.
async fn write_loop(write: OwnedWriteHalf, mut rx: mpsc::Receiver<Outbound>) {
    let mut writer = BufWriter::new(write);
    while let Some(line) = rx.recv().await {
        if writer.write_all(line.as_bytes()).await.is_err() {
            return;
        }
        while let Ok(line) = rx.try_recv() {
            if writer.write_all(line.as_bytes()).await.is_err() {
                return;
            }
        }
        if writer.flush().await.is_err() {
            return;
        }
    }
    let _ = writer.flush().await;
    let _ = writer.shutdown().await;
}
