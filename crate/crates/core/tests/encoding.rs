use proptest::option;
use proptest::prelude::*;
use smartrescue_core::model::{
    ActivityEstimate, ActivityState, EventAlert, GeoPosition, PresenceState, SensorEvent, SensorKind, SensorValue,
};
use smartrescue_core::protocol::{
    decode_frame, encode_frame, ErrorBody, ErrorCode, Frame, Heartbeat, HelloAck, Presence, Role, Subscribe,
    SubscribeAck, Unsubscribe, WireEvent,
};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO,
        -1e3..1e3f64,
    ]
}

fn id() -> impl Strategy<Value = String> {
    "[ -~]{1,64}"
}

fn position() -> impl Strategy<Value = GeoPosition> {
    (-90.0..=90.0f64, -180.0..=180.0f64, 0.0..1e4f64)
        .prop_map(|(lat, lon, acc)| GeoPosition::new(lat, lon, acc).unwrap())
}

fn activity() -> impl Strategy<Value = ActivityEstimate> {
    (0..ActivityState::ALL.len(), 0u8..=100).prop_map(|(i, c)| ActivityEstimate::new(ActivityState::ALL[i], c).unwrap())
}

prop_compose! {
    fn event()(
        event_id in id(),
        publisher_id in id(),
        seq in any::<u64>(),
        timestamp_ms in any::<i64>(),
        kind_idx in 0..SensorKind::ALL.len(),
        scalar in finite(),
        vector in [finite(), finite(), finite()],
        position in position(),
        activity in option::of(activity()),
        alert in option::of(any::<i64>()),
    ) -> SensorEvent {
        let kind = SensorKind::ALL[kind_idx];
        let value = if kind == SensorKind::Accelerometer {
            SensorValue::Vector(vector)
        } else {
            SensorValue::Scalar(scalar)
        };
        let mut ev = SensorEvent::new(event_id, publisher_id, seq, timestamp_ms, kind, value, position).unwrap();
        ev.activity = activity;
        if kind == SensorKind::Accelerometer {
            ev.alert = alert.map(|t| EventAlert::Fall { impact_time_ms: t });
        }
        ev
    }
}

fn frame() -> impl Strategy<Value = Frame> {
    prop_oneof![
        (id(), 0..3usize).prop_map(|(c, r)| Frame::hello(c, [Role::Publisher, Role::Subscriber, Role::Both][r])),
        "v[0-9]".prop_map(|v| Frame::HelloAck(HelloAck { version: v })),
        event().prop_map(|e| Frame::Publish(WireEvent::new(e))),
        (any::<u64>(), ".{0,40}").prop_map(|(r, f)| Frame::Subscribe(Subscribe {
            request_id: r,
            filter: f
        })),
        (any::<u64>(), id()).prop_map(|(r, s)| Frame::SubscribeAck(SubscribeAck {
            request_id: r,
            subscription_id: s
        })),
        id().prop_map(|s| Frame::Unsubscribe(Unsubscribe { subscription_id: s })),
        (proptest::collection::vec(id(), 1..4), event()).prop_map(|(ids, e)| Frame::Notify {
            subscription_ids: ids,
            event: WireEvent::new(e)
        }),
        id().prop_map(|c| Frame::Heartbeat(Heartbeat { client_id: c })),
        (id(), 0..3usize, any::<i64>(), option::of(position())).prop_map(|(p, s, t, pos)| {
            Frame::Presence(Presence {
                publisher_id: p,
                state: [PresenceState::Fresh, PresenceState::Stale, PresenceState::Gone][s],
                last_seen_ms: t,
                position: pos,
            })
        }),
        Just(Frame::Bye),
        (".{0,40}", option::of(any::<u64>())).prop_map(|(m, r)| Frame::Error(ErrorBody {
            code: ErrorCode::InvalidPredicate,
            message: m,
            request_id: r,
        })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn events_round_trip_and_encode_deterministically(ev in event()) {
        let text = ev.canonical_encode();
        prop_assert!(!text.contains('\n'));
        prop_assert_eq!(&SensorEvent::decode(&text).unwrap(), &ev);
        prop_assert_eq!(ev.clone().canonical_encode(), text.clone());
        if ev.activity.is_none() {
            prop_assert!(!text.contains("\"activity\""));
        }
        if ev.alert.is_none() {
            prop_assert!(!text.contains("\"alert\""));
        }
    }

    #[test]
    fn frames_round_trip(f in frame()) {
        let line = encode_frame(&f);
        prop_assert!(line.ends_with('\n'));
        prop_assert_eq!(line.matches('\n').count(), 1);
        let prefix = "{\"type\":";
        prop_assert!(line.starts_with(prefix));
        let decoded = decode_frame(line.as_bytes()).unwrap();
        prop_assert_eq!(encode_frame(&decoded), line);
        prop_assert_eq!(decoded, f);
    }
}
