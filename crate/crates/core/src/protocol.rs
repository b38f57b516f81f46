//! Newline-delimited JSON frames.
//!
//! Each frame is one UTF-8 JSON object whose first key is `"type"`, followed
//! by the type-specific fields, terminated by a single `\n`. Events inside
//! `PUBLISH` and `NOTIFY` frames are carried byte-for-byte as received, so a
//! subscriber sees exactly what the publisher sent.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EventError, GeoPosition, PresenceState, SensorEvent};

pub const PROTOCOL_VERSION: &str = "v1";
/// Longest accepted frame line, excluding the terminating newline.
pub const MAX_FRAME_LEN: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Publisher,
    Subscriber,
    Both,
}

impl Role {
    pub fn can_publish(self) -> bool {
        matches!(self, Role::Publisher | Role::Both)
    }

    pub fn can_subscribe(self) -> bool {
        matches!(self, Role::Subscriber | Role::Both)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Publisher => "publisher",
            Role::Subscriber => "subscriber",
            Role::Both => "both",
        })
    }
}

/// A validated event together with the exact JSON text it travelled as.
#[derive(Debug, Clone, PartialEq)]
pub struct WireEvent {
    event: SensorEvent,
    raw: Arc<str>,
}

impl WireEvent {
    pub fn new(event: SensorEvent) -> Self {
        let raw = event.canonical_encode().into();
        Self { event, raw }
    }

    pub fn from_raw(raw: &str) -> Result<Self, EventError> {
        let event = SensorEvent::decode(raw)?;
        Ok(Self { event, raw: raw.into() })
    }

    pub fn event(&self) -> &SensorEvent {
        &self.event
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn raw_shared(&self) -> Arc<str> {
        self.raw.clone()
    }

    pub fn into_event(self) -> SensorEvent {
        self.event
    }
}

impl From<SensorEvent> for WireEvent {
    fn from(event: SensorEvent) -> Self {
        WireEvent::new(event)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub version: String,
    pub client_id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelloAck {
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscribe {
    pub request_id: u64,
    pub filter: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscribeAck {
    pub request_id: u64,
    pub subscription_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unsubscribe {
    pub subscription_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub client_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Presence {
    pub publisher_id: String,
    pub state: PresenceState,
    pub last_seen_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<GeoPosition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    VersionMismatch,
    MalformedFrame,
    UnknownFrameType,
    OversizeFrame,
    ProtocolViolation,
    InvalidPredicate,
    TooManySubscriptions,
    UnknownSubscription,
    NotAPublisher,
    NotASubscriber,
    InvalidEvent,
    IdentityMismatch,
    ShuttingDown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Hello(Hello),
    HelloAck(HelloAck),
    Publish(WireEvent),
    Subscribe(Subscribe),
    SubscribeAck(SubscribeAck),
    Unsubscribe(Unsubscribe),
    Notify {
        subscription_ids: Vec<String>,
        event: WireEvent,
    },
    Heartbeat(Heartbeat),
    Presence(Presence),
    Bye,
    Error(ErrorBody),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown frame type {0:?}")]
    UnknownFrameType(String),
    #[error("frame of {0} bytes exceeds the 64 KiB limit")]
    OversizeFrame(usize),
    #[error("invalid event: {0}")]
    InvalidEvent(#[from] EventError),
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::MalformedFrame(_) => ErrorCode::MalformedFrame,
            ProtocolError::UnknownFrameType(_) => ErrorCode::UnknownFrameType,
            ProtocolError::OversizeFrame(_) => ErrorCode::OversizeFrame,
            ProtocolError::InvalidEvent(_) => ErrorCode::InvalidEvent,
        }
    }
}

impl Frame {
    pub fn type_name(&self) -> &'static str {
        match self {
            Frame::Hello(_) => "HELLO",
            Frame::HelloAck(_) => "HELLO_ACK",
            Frame::Publish(_) => "PUBLISH",
            Frame::Subscribe(_) => "SUBSCRIBE",
            Frame::SubscribeAck(_) => "SUBSCRIBE_ACK",
            Frame::Unsubscribe(_) => "UNSUBSCRIBE",
            Frame::Notify { .. } => "NOTIFY",
            Frame::Heartbeat(_) => "HEARTBEAT",
            Frame::Presence(_) => "PRESENCE",
            Frame::Bye => "BYE",
            Frame::Error(_) => "ERROR",
        }
    }

    pub fn hello(client_id: impl Into<String>, role: Role) -> Self {
        Frame::Hello(Hello {
            version: PROTOCOL_VERSION.to_string(),
            client_id: client_id.into(),
            role,
        })
    }

    pub fn error(code: ErrorCode, message: impl Into<String>, request_id: Option<u64>) -> Self {
        Frame::Error(ErrorBody {
            code,
            message: message.into(),
            request_id,
        })
    }

    /// The frame as one JSON object, without the trailing newline.
    pub fn to_json(&self) -> String {
        let body = match self {
            Frame::Hello(b) => to_body(b),
            Frame::HelloAck(b) => to_body(b),
            Frame::Subscribe(b) => to_body(b),
            Frame::SubscribeAck(b) => to_body(b),
            Frame::Unsubscribe(b) => to_body(b),
            Frame::Heartbeat(b) => to_body(b),
            Frame::Presence(b) => to_body(b),
            Frame::Error(b) => to_body(b),
            Frame::Bye => String::new(),
            Frame::Publish(ev) => format!("\"event\":{}", ev.raw()),
            Frame::Notify {
                subscription_ids,
                event,
            } => notify_body(subscription_ids, event.raw()),
        };
        wrap(self.type_name(), &body)
    }
}

fn to_body<T: Serialize>(body: &T) -> String {
    let json = serde_json::to_string(body).expect("frame bodies always serialize");
    // strip the enclosing braces so the body can follow the type key
    json[1..json.len() - 1].to_string()
}

fn notify_body(subscription_ids: &[String], raw_event: &str) -> String {
    let ids = serde_json::to_string(subscription_ids).expect("string lists serialize");
    format!("\"subscription_ids\":{ids},\"event\":{raw_event}")
}

fn wrap(type_name: &str, body: &str) -> String {
    if body.is_empty() {
        format!("{{\"type\":\"{type_name}\"}}")
    } else {
        format!("{{\"type\":\"{type_name}\",{body}}}")
    }
}

/// Encode `frame` as one newline-terminated line.
pub fn encode_frame(frame: &Frame) -> String {
    let mut line = frame.to_json();
    line.push('\n');
    line
}

/// Build a NOTIFY line directly from an already encoded event.
pub fn encode_notify(subscription_ids: &[String], raw_event: &str) -> String {
    let mut line = wrap("NOTIFY", &notify_body(subscription_ids, raw_event));
    line.push('\n');
    line
}

#[derive(Deserialize)]
struct Head<'a> {
    #[serde(rename = "type", borrow)]
    frame_type: std::borrow::Cow<'a, str>,
}

#[derive(Deserialize)]
struct EventBody<'a> {
    #[serde(borrow)]
    event: &'a serde_json::value::RawValue,
}

#[derive(Deserialize)]
struct NotifyBody<'a> {
    subscription_ids: Vec<String>,
    #[serde(borrow)]
    event: &'a serde_json::value::RawValue,
}

/// Decode one frame line. A single trailing `\n` (or `\r\n`) is tolerated.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, ProtocolError> {
    let line = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if line.len() > MAX_FRAME_LEN {
        return Err(ProtocolError::OversizeFrame(line.len()));
    }
    let text = std::str::from_utf8(line).map_err(|e| ProtocolError::MalformedFrame(format!("not UTF-8: {e}")))?;
    if text.contains('\n') {
        return Err(ProtocolError::MalformedFrame("embedded newline".into()));
    }
    let head: Head<'_> = serde_json::from_str(text).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))?;

    fn body<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T, ProtocolError> {
        serde_json::from_str(text).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))
    }

    let frame = match head.frame_type.as_ref() {
        "HELLO" => Frame::Hello(body(text)?),
        "HELLO_ACK" => Frame::HelloAck(body(text)?),
        "PUBLISH" => {
            let b: EventBody<'_> = body(text)?;
            Frame::Publish(WireEvent::from_raw(b.event.get())?)
        }
        "SUBSCRIBE" => Frame::Subscribe(body(text)?),
        "SUBSCRIBE_ACK" => Frame::SubscribeAck(body(text)?),
        "UNSUBSCRIBE" => Frame::Unsubscribe(body(text)?),
        "NOTIFY" => {
            let b: NotifyBody<'_> = body(text)?;
            Frame::Notify {
                subscription_ids: b.subscription_ids,
                event: WireEvent::from_raw(b.event.get())?,
            }
        }
        "HEARTBEAT" => Frame::Heartbeat(body(text)?),
        "PRESENCE" => Frame::Presence(body(text)?),
        "BYE" => Frame::Bye,
        "ERROR" => Frame::Error(body(text)?),
        other => return Err(ProtocolError::UnknownFrameType(other.to_string())),
    };
    Ok(frame)
}
