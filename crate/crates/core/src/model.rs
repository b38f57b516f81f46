//! Sensor events and the values they carry.
//!
//! Every event travels as one canonical JSON object whose keys appear in this
//! order: `event_id`, `publisher_id`, `seq`, `timestamp_ms`, `kind`, `value`,
//! `unit`, `position` (`lat`, `lon`, `accuracy_m`), then the optional
//! `activity` (`state`, `confidence`) and `alert` objects. Absent optional
//! fields are omitted entirely. The same bytes are used on the wire and in the
//! aggregation store.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_ID_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SensorKind {
    Accelerometer,
    Barometer,
    Thermometer,
    Humidity,
    Light,
    Gps,
}

impl SensorKind {
    pub const ALL: [SensorKind; 6] = [
        SensorKind::Accelerometer,
        SensorKind::Barometer,
        SensorKind::Thermometer,
        SensorKind::Humidity,
        SensorKind::Light,
        SensorKind::Gps,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Accelerometer => "ACCELEROMETER",
            SensorKind::Barometer => "BAROMETER",
            SensorKind::Thermometer => "THERMOMETER",
            SensorKind::Humidity => "HUMIDITY",
            SensorKind::Light => "LIGHT",
            SensorKind::Gps => "GPS",
        }
    }

    /// The only unit accepted for this kind.
    pub fn unit(self) -> &'static str {
        match self {
            SensorKind::Accelerometer => "g",
            SensorKind::Barometer => "hpa",
            SensorKind::Thermometer => "celsius",
            SensorKind::Humidity => "percent_rh",
            SensorKind::Light => "lux",
            SensorKind::Gps => "degrees",
        }
    }

    /// Number of value components: three for the accelerometer, one otherwise.
    pub fn arity(self) -> usize {
        match self {
            SensorKind::Accelerometer => 3,
            _ => 1,
        }
    }

    /// Case-insensitive lookup.
    pub fn parse_loose(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensorKind {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EventError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActivityState {
    Still,
    Walking,
    Running,
    InVehicle,
    Unknown,
}

impl ActivityState {
    pub const ALL: [ActivityState; 5] = [
        ActivityState::Still,
        ActivityState::Walking,
        ActivityState::Running,
        ActivityState::InVehicle,
        ActivityState::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityState::Still => "STILL",
            ActivityState::Walking => "WALKING",
            ActivityState::Running => "RUNNING",
            ActivityState::InVehicle => "IN_VEHICLE",
            ActivityState::Unknown => "UNKNOWN",
        }
    }

    pub fn parse_loose(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for ActivityState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityState {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| EventError::UnknownActivity(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPosition {
    pub lat: f64,
    pub lon: f64,
    pub accuracy_m: f64,
}

impl GeoPosition {
    pub fn new(lat: f64, lon: f64, accuracy_m: f64) -> Result<Self, EventError> {
        let pos = Self { lat, lon, accuracy_m };
        pos.validate()?;
        Ok(pos)
    }

    pub fn validate(&self) -> Result<(), EventError> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(EventError::OutOfRangePosition(format!("lat {}", self.lat)));
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(EventError::OutOfRangePosition(format!("lon {}", self.lon)));
        }
        if !(self.accuracy_m.is_finite() && self.accuracy_m >= 0.0) {
            return Err(EventError::OutOfRangePosition(format!(
                "accuracy_m {}",
                self.accuracy_m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActivityEstimate {
    pub state: ActivityState,
    pub confidence: u8,
}

impl ActivityEstimate {
    pub fn new(state: ActivityState, confidence: u8) -> Result<Self, EventError> {
        if confidence > 100 {
            return Err(EventError::ConfidenceOutOfRange(confidence as i64));
        }
        Ok(Self { state, confidence })
    }

    /// Operator-facing text, e.g. "Still with a confidence level of 100".
    pub fn describe(&self) -> String {
        let name = match self.state {
            ActivityState::Still => "Still",
            ActivityState::Walking => "Walking",
            ActivityState::Running => "Running",
            ActivityState::InVehicle => "In vehicle",
            ActivityState::Unknown => "Unknown",
        };
        format!("{name} with a confidence level of {}", self.confidence)
    }
}

/// A scalar reading, or an (x, y, z) triple in g for the accelerometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SensorValue {
    Scalar(f64),
    Vector([f64; 3]),
}

impl SensorValue {
    /// The scalar itself, or the vector magnitude.
    pub fn magnitude(&self) -> f64 {
        match *self {
            SensorValue::Scalar(v) => v,
            SensorValue::Vector([x, y, z]) => (x * x + y * y + z * z).sqrt(),
        }
    }

    fn arity(&self) -> usize {
        match self {
            SensorValue::Scalar(_) => 1,
            SensorValue::Vector(_) => 3,
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            SensorValue::Scalar(v) => v.is_finite(),
            SensorValue::Vector(v) => v.iter().all(|c| c.is_finite()),
        }
    }
}

/// Marker carried by events that report a detected fall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventAlert {
    Fall { impact_time_ms: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvent")]
pub struct SensorEvent {
    pub event_id: String,
    pub publisher_id: String,
    pub seq: u64,
    pub timestamp_ms: i64,
    pub kind: SensorKind,
    pub value: SensorValue,
    pub unit: String,
    pub position: GeoPosition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activity: Option<ActivityEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alert: Option<EventAlert>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EventError {
    #[error("unknown sensor kind {0:?}")]
    UnknownKind(String),
    #[error("unknown activity state {0:?}")]
    UnknownActivity(String),
    #[error("position out of range: {0}")]
    OutOfRangePosition(String),
    #[error("{kind} expects {expected} value component(s), got {got}")]
    ArityMismatch {
        kind: SensorKind,
        expected: usize,
        got: usize,
    },
    #[error("value is not finite")]
    NonFiniteValue,
    #[error("{kind} must use unit {expected:?}, got {got:?}")]
    UnitMismatch {
        kind: SensorKind,
        expected: &'static str,
        got: String,
    },
    #[error("confidence {0} outside 0..=100")]
    ConfidenceOutOfRange(i64),
    #[error("invalid {field}: {reason}")]
    InvalidId { field: &'static str, reason: String },
    #[error("alert markers are only valid on ACCELEROMETER events")]
    MisplacedAlert,
    #[error("malformed event: {0}")]
    Malformed(String),
}

/// A syntactically decoded but unvalidated event record.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEvent {
    pub event_id: String,
    pub publisher_id: String,
    pub seq: u64,
    pub timestamp_ms: i64,
    pub kind: String,
    pub value: RawValue,
    pub unit: String,
    pub position: GeoPosition,
    #[serde(default)]
    pub activity: Option<RawActivity>,
    #[serde(default)]
    pub alert: Option<EventAlert>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Scalar(f64),
    Components(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawActivity {
    pub state: String,
    pub confidence: i64,
}

pub fn validate_id(field: &'static str, id: &str) -> Result<(), EventError> {
    let reason = if id.is_empty() {
        "empty"
    } else if id.len() > MAX_ID_LEN {
        "longer than 64 characters"
    } else if !id.bytes().all(|b| b.is_ascii() && !b.is_ascii_control()) {
        "not printable ASCII"
    } else {
        return Ok(());
    };
    Err(EventError::InvalidId {
        field,
        reason: reason.to_string(),
    })
}

/// Check a decoded record against every event invariant.
pub fn validate_event(raw: RawEvent) -> Result<SensorEvent, EventError> {
    let kind: SensorKind = raw.kind.parse()?;
    validate_id("event_id", &raw.event_id)?;
    validate_id("publisher_id", &raw.publisher_id)?;
    raw.position.validate()?;

    let value = match raw.value {
        RawValue::Scalar(v) => SensorValue::Scalar(v),
        RawValue::Components(c) if c.len() == 3 => SensorValue::Vector([c[0], c[1], c[2]]),
        RawValue::Components(c) => {
            return Err(EventError::ArityMismatch {
                kind,
                expected: kind.arity(),
                got: c.len(),
            })
        }
    };
    if value.arity() != kind.arity() {
        return Err(EventError::ArityMismatch {
            kind,
            expected: kind.arity(),
            got: value.arity(),
        });
    }
    if !value.is_finite() {
        return Err(EventError::NonFiniteValue);
    }
    if raw.unit != kind.unit() {
        return Err(EventError::UnitMismatch {
            kind,
            expected: kind.unit(),
            got: raw.unit,
        });
    }
    let activity = match raw.activity {
        None => None,
        Some(a) => {
            let state: ActivityState = a.state.parse()?;
            if !(0..=100).contains(&a.confidence) {
                return Err(EventError::ConfidenceOutOfRange(a.confidence));
            }
            Some(ActivityEstimate {
                state,
                confidence: a.confidence as u8,
            })
        }
    };
    if raw.alert.is_some() && kind != SensorKind::Accelerometer {
        return Err(EventError::MisplacedAlert);
    }

    Ok(SensorEvent {
        event_id: raw.event_id,
        publisher_id: raw.publisher_id,
        seq: raw.seq,
        timestamp_ms: raw.timestamp_ms,
        kind,
        value,
        unit: raw.unit,
        position: raw.position,
        activity,
        alert: raw.alert,
    })
}

impl TryFrom<RawEvent> for SensorEvent {
    type Error = EventError;

    fn try_from(raw: RawEvent) -> Result<Self, Self::Error> {
        validate_event(raw)
    }
}

impl SensorEvent {
    /// Build an event with the unit filled in from the unit table, then validate it.
    pub fn new(
        event_id: impl Into<String>,
        publisher_id: impl Into<String>,
        seq: u64,
        timestamp_ms: i64,
        kind: SensorKind,
        value: SensorValue,
        position: GeoPosition,
    ) -> Result<Self, EventError> {
        let event = Self {
            event_id: event_id.into(),
            publisher_id: publisher_id.into(),
            seq,
            timestamp_ms,
            kind,
            value,
            unit: kind.unit().to_string(),
            position,
            activity: None,
            alert: None,
        };
        event.validate()?;
        Ok(event)
    }

    pub fn with_activity(mut self, activity: ActivityEstimate) -> Self {
        self.activity = Some(activity);
        self
    }

    pub fn with_alert(mut self, alert: EventAlert) -> Self {
        self.alert = Some(alert);
        self
    }

    /// Re-check all invariants on an already constructed value.
    pub fn validate(&self) -> Result<(), EventError> {
        let raw = RawEvent {
            event_id: self.event_id.clone(),
            publisher_id: self.publisher_id.clone(),
            seq: self.seq,
            timestamp_ms: self.timestamp_ms,
            kind: self.kind.as_str().to_string(),
            value: match self.value {
                SensorValue::Scalar(v) => RawValue::Scalar(v),
                SensorValue::Vector(v) => RawValue::Components(v.to_vec()),
            },
            unit: self.unit.clone(),
            position: self.position,
            activity: self.activity.map(|a| RawActivity {
                state: a.state.as_str().to_string(),
                confidence: a.confidence as i64,
            }),
            alert: self.alert,
        };
        validate_event(raw).map(|_| ())
    }

    /// Canonical one-line JSON encoding. Pure function of the event value.
    pub fn canonical_encode(&self) -> String {
        serde_json::to_string(self).expect("sensor events always serialize")
    }

    pub fn decode(text: &str) -> Result<Self, EventError> {
        let raw: RawEvent = serde_json::from_str(text).map_err(|e| EventError::Malformed(e.to_string()))?;
        validate_event(raw)
    }

    /// The scalar used for comparisons and aggregation (vector magnitude for
    /// the accelerometer).
    pub fn scalar(&self) -> f64 {
        self.value.magnitude()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PresenceState {
    Fresh,
    Stale,
    Gone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublisherPresence {
    pub publisher_id: String,
    pub last_seen_ms: i64,
    pub last_position: Option<GeoPosition>,
    pub stale: bool,
}

impl PublisherPresence {
    pub fn is_stale_at(&self, now_ms: i64, timeout_ms: i64) -> bool {
        now_ms - self.last_seen_ms > timeout_ms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(kind: &str, value: RawValue, unit: &str, lat: f64) -> RawEvent {
        RawEvent {
            event_id: "e1".into(),
            publisher_id: "p1".into(),
            seq: 1,
            timestamp_ms: 1_700_000_000_000,
            kind: kind.into(),
            value,
            unit: unit.into(),
            position: GeoPosition {
                lat,
                lon: 8.0,
                accuracy_m: 5.0,
            },
            activity: None,
            alert: None,
        }
    }

    #[test]
    fn in_range_thermometer_is_valid() {
        let ev = validate_event(raw("THERMOMETER", RawValue::Scalar(21.5), "celsius", 58.0)).unwrap();
        assert_eq!(ev.kind, SensorKind::Thermometer);
        assert_eq!(ev.value, SensorValue::Scalar(21.5));
    }

    #[test]
    fn scalar_accelerometer_is_arity_mismatch() {
        let err = validate_event(raw("ACCELEROMETER", RawValue::Scalar(9.81), "g", 58.0)).unwrap_err();
        assert!(matches!(
            err,
            EventError::ArityMismatch {
                expected: 3,
                got: 1,
                ..
            }
        ));
        let err = validate_event(raw(
            "THERMOMETER",
            RawValue::Components(vec![1.0, 2.0, 3.0]),
            "celsius",
            58.0,
        ))
        .unwrap_err();
        assert!(matches!(
            err,
            EventError::ArityMismatch {
                expected: 1,
                got: 3,
                ..
            }
        ));
        let err = validate_event(raw("ACCELEROMETER", RawValue::Components(vec![1.0, 2.0]), "g", 58.0)).unwrap_err();
        assert!(matches!(err, EventError::ArityMismatch { got: 2, .. }));
    }

    #[test]
    fn latitude_out_of_range() {
        let err = validate_event(raw("GPS", RawValue::Scalar(1.0), "degrees", 91.0)).unwrap_err();
        assert!(matches!(err, EventError::OutOfRangePosition(_)));
    }

    #[test]
    fn unknown_kind_and_unit_mismatch() {
        let err = validate_event(raw("PLASMA", RawValue::Scalar(1.0), "x", 0.0)).unwrap_err();
        assert_eq!(err, EventError::UnknownKind("PLASMA".into()));
        let err = validate_event(raw("LIGHT", RawValue::Scalar(1.0), "celsius", 0.0)).unwrap_err();
        assert!(matches!(err, EventError::UnitMismatch { .. }));
        // lowercase kind names are not canonical
        let err = validate_event(raw("light", RawValue::Scalar(1.0), "lux", 0.0)).unwrap_err();
        assert!(matches!(err, EventError::UnknownKind(_)));
    }

    #[test]
    fn non_finite_value_rejected() {
        let err = validate_event(raw("LIGHT", RawValue::Scalar(f64::NAN), "lux", 0.0)).unwrap_err();
        assert_eq!(err, EventError::NonFiniteValue);
        let err = validate_event(raw(
            "ACCELEROMETER",
            RawValue::Components(vec![0.0, f64::INFINITY, 1.0]),
            "g",
            0.0,
        ))
        .unwrap_err();
        assert_eq!(err, EventError::NonFiniteValue);
    }

    #[test]
    fn confidence_and_alert_rules() {
        let mut r = raw("GPS", RawValue::Scalar(1.0), "degrees", 0.0);
        r.activity = Some(RawActivity {
            state: "STILL".into(),
            confidence: 101,
        });
        assert_eq!(validate_event(r).unwrap_err(), EventError::ConfidenceOutOfRange(101));
        let mut r = raw("GPS", RawValue::Scalar(1.0), "degrees", 0.0);
        r.alert = Some(EventAlert::Fall { impact_time_ms: 3 });
        assert_eq!(validate_event(r).unwrap_err(), EventError::MisplacedAlert);
    }

    #[test]
    fn publisher_id_rules() {
        let mut r = raw("GPS", RawValue::Scalar(1.0), "degrees", 0.0);
        r.publisher_id = "x".repeat(65);
        assert!(matches!(
            validate_event(r).unwrap_err(),
            EventError::InvalidId {
                field: "publisher_id",
                ..
            }
        ));
        let mut r = raw("GPS", RawValue::Scalar(1.0), "degrees", 0.0);
        r.publisher_id = String::new();
        assert!(validate_event(r).is_err());
    }

    #[test]
    fn encoding_has_fixed_key_order_and_omits_absent_fields() {
        let ev = SensorEvent::new(
            "e1",
            "p1",
            7,
            1_700_000_000_000,
            SensorKind::Thermometer,
            SensorValue::Scalar(21.5),
            GeoPosition::new(58.0, 8.0, 5.0).unwrap(),
        )
        .unwrap();
        assert_eq!(
            ev.canonical_encode(),
            r#"{"event_id":"e1","publisher_id":"p1","seq":7,"timestamp_ms":1700000000000,"kind":"THERMOMETER","value":21.5,"unit":"celsius","position":{"lat":58.0,"lon":8.0,"accuracy_m":5.0}}"#
        );
        let with = ev
            .clone()
            .with_activity(ActivityEstimate::new(ActivityState::InVehicle, 40).unwrap());
        assert!(with
            .canonical_encode()
            .ends_with(r#""activity":{"state":"IN_VEHICLE","confidence":40}}"#));
    }

    #[test]
    fn accelerometer_encodes_as_array_with_alert() {
        let ev = SensorEvent::new(
            "e2",
            "p1",
            1,
            5,
            SensorKind::Accelerometer,
            SensorValue::Vector([0.0, 0.0, 3.0]),
            GeoPosition::new(0.0, 0.0, 0.0).unwrap(),
        )
        .unwrap()
        .with_alert(EventAlert::Fall { impact_time_ms: 4 });
        let text = ev.canonical_encode();
        assert!(text.contains(r#""value":[0.0,0.0,3.0]"#));
        assert!(text.ends_with(r#""alert":{"type":"FALL","impact_time_ms":4}}"#));
        assert_eq!(SensorEvent::decode(&text).unwrap(), ev);
        assert_eq!(ev.scalar(), 3.0);
    }

    #[test]
    fn decode_rejects_unknown_fields() {
        let text = r#"{"event_id":"e1","publisher_id":"p1","seq":7,"timestamp_ms":1,"kind":"LIGHT","value":2,"unit":"lux","position":{"lat":0,"lon":0,"accuracy_m":0},"extra":1}"#;
        assert!(matches!(
            SensorEvent::decode(text).unwrap_err(),
            EventError::Malformed(_)
        ));
    }

    #[test]
    fn unit_table_is_total() {
        let units: std::collections::BTreeSet<_> = SensorKind::ALL.iter().map(|k| k.unit()).collect();
        assert_eq!(units.len(), SensorKind::ALL.len());
    }

    #[test]
    fn activity_description() {
        let a = ActivityEstimate::new(ActivityState::Still, 100).unwrap();
        assert_eq!(a.describe(), "Still with a confidence level of 100");
    }
}
