//! Shared vocabulary for the SmartRescue sensing platform.
//!
//! - [`model`]: sensor events, positions, activity estimates and their
//!   canonical JSON encoding.
//! - [`predicate`]: the subscription language and the content matcher.
//! - [`protocol`]: newline-delimited JSON frames exchanged with the broker.
//! - [`edge`]: publisher-side activity classification, fall detection and
//!   light interpretation.
//! - [`clock`]: wall and manual clocks so time-dependent code can be tested.

pub mod clock;
pub mod edge;
pub mod model;
pub mod predicate;
pub mod protocol;

pub use clock::{Clock, ManualClock, SystemClock};
pub use model::{
    ActivityEstimate, ActivityState, EventAlert, EventError, GeoPosition, PresenceState, PublisherPresence,
    SensorEvent, SensorKind, SensorValue,
};
pub use predicate::{AtomicConstraint, ParseError, Predicate, SubscriptionPredicate};
pub use protocol::{Frame, ProtocolError, Role, WireEvent};
