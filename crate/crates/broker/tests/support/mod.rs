#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use smartrescue_broker::{serve, BrokerConfig, BrokerHandle};
use smartrescue_core::model::{GeoPosition, SensorEvent, SensorKind, SensorValue};
use smartrescue_core::protocol::{decode_frame, encode_frame, Frame, Role};
use smartrescue_core::SystemClock;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

pub async fn start_broker() -> BrokerHandle {
    let config = BrokerConfig {
        bind: SocketAddr::from(([127, 0, 0, 1], 0)),
        ..Default::default()
    };
    serve(config, Arc::new(SystemClock)).await.unwrap()
}

/// Minimal line-level client that records every line it reads.
pub struct RawClient {
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
    pub received: Vec<String>,
}

impl RawClient {
    pub async fn connect(addr: SocketAddr) -> Self {
        let (r, w) = TcpStream::connect(addr).await.unwrap().into_split();
        Self {
            reader: BufReader::new(r),
            writer: w,
            received: Vec::new(),
        }
    }

    pub async fn hello(addr: SocketAddr, client_id: &str, role: Role) -> Self {
        let mut c = Self::connect(addr).await;
        c.send(&Frame::hello(client_id, role)).await;
        match c.recv().await {
            Some(Frame::HelloAck(_)) => c,
            other => panic!("expected HELLO_ACK, got {other:?}"),
        }
    }

    pub async fn send(&mut self, frame: &Frame) {
        self.send_raw(encode_frame(frame).as_bytes()).await;
    }

    pub async fn send_raw(&mut self, bytes: &[u8]) {
        self.writer.write_all(bytes).await.unwrap();
        self.writer.flush().await.unwrap();
    }

    /// Next frame, or None on EOF or after two seconds of silence.
    pub async fn recv(&mut self) -> Option<Frame> {
        self.recv_within(Duration::from_secs(2)).await
    }

    pub async fn recv_within(&mut self, wait: Duration) -> Option<Frame> {
        let mut line = String::new();
        match tokio::time::timeout(wait, self.reader.read_line(&mut line)).await {
            Ok(Ok(n)) if n > 0 => {
                self.received.push(line.clone());
                Some(decode_frame(line.as_bytes()).unwrap())
            }
            _ => None,
        }
    }

    /// Read frames until one satisfies `pred`.
    pub async fn recv_until(&mut self, mut pred: impl FnMut(&Frame) -> bool) -> Frame {
        loop {
            match self.recv().await {
                Some(f) if pred(&f) => return f,
                Some(_) => continue,
                None => panic!("stream ended while waiting"),
            }
        }
    }

    pub async fn subscribe(&mut self, request_id: u64, filter: &str) -> String {
        self.send(&Frame::Subscribe(smartrescue_core::protocol::Subscribe {
            request_id,
            filter: filter.into(),
        }))
        .await;
        match self
            .recv_until(|f| matches!(f, Frame::SubscribeAck(_) | Frame::Error(_)))
            .await
        {
            Frame::SubscribeAck(a) => {
                assert_eq!(a.request_id, request_id);
                a.subscription_id
            }
            other => panic!("subscribe failed: {other:?}"),
        }
    }

    pub async fn is_closed(&mut self) -> bool {
        let mut line = String::new();
        matches!(
            tokio::time::timeout(Duration::from_secs(2), self.reader.read_line(&mut line)).await,
            Ok(Ok(0)) | Ok(Err(_))
        )
    }
}

pub fn thermo(publisher: &str, seq: u64, value: f64) -> SensorEvent {
    SensorEvent::new(
        format!("{publisher}-{seq}"),
        publisher,
        seq,
        1_700_000_000_000 + seq as i64,
        SensorKind::Thermometer,
        SensorValue::Scalar(value),
        GeoPosition::new(58.1, 8.0, 5.0).unwrap(),
    )
    .unwrap()
}
