#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::prelude::*;
use smartrescue_core::model::{ActivityEstimate, ActivityState, GeoPosition, SensorEvent, SensorKind, SensorValue};
use smartrescue_core::predicate::{AtomicConstraint, BoundingBox, CmpOp, Predicate};

pub const PUBLISHERS: [&str; 4] = ["alpha", "bravo", "c3", "d4x"];

/// Values on a coarse lattice so equality and boundary comparisons are hit often.
fn lattice_value<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(-20i32..=120) as f64 * 0.5
}

pub fn random_event<R: Rng>(rng: &mut R, seq: u64) -> SensorEvent {
    let kind = SensorKind::ALL[rng.random_range(0..SensorKind::ALL.len())];
    let value = if kind == SensorKind::Accelerometer {
        SensorValue::Vector([
            lattice_value(rng) / 10.0,
            lattice_value(rng) / 10.0,
            lattice_value(rng) / 10.0,
        ])
    } else {
        SensorValue::Scalar(lattice_value(rng))
    };
    let position = GeoPosition::new(
        rng.random_range(-8i32..=8) as f64 * 0.25 + 58.0,
        rng.random_range(-8i32..=8) as f64 * 0.25 + 8.0,
        5.0,
    )
    .unwrap();
    let publisher = PUBLISHERS[rng.random_range(0..PUBLISHERS.len())];
    let mut ev = SensorEvent::new(
        format!("{publisher}-{seq}"),
        publisher,
        seq,
        1_700_000_000_000 + seq as i64,
        kind,
        value,
        position,
    )
    .unwrap();
    if rng.random_bool(0.6) {
        let state = ActivityState::ALL[rng.random_range(0..ActivityState::ALL.len())];
        ev = ev.with_activity(ActivityEstimate::new(state, rng.random_range(0..=100)).unwrap());
    }
    ev
}

fn subset<T: Copy + Ord, R: Rng>(rng: &mut R, all: &[T]) -> BTreeSet<T> {
    let mut set: BTreeSet<T> = all.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
    if set.is_empty() {
        set.insert(all[rng.random_range(0..all.len())]);
    }
    set
}

pub fn random_constraint<R: Rng>(rng: &mut R) -> AtomicConstraint {
    match rng.random_range(0..6) {
        0 => AtomicConstraint::KindIs(subset(rng, &SensorKind::ALL)),
        1 => AtomicConstraint::ValueCmp {
            op: CmpOp::ALL[rng.random_range(0..CmpOp::ALL.len())],
            threshold: lattice_value(rng),
        },
        2 => AtomicConstraint::PublisherIs(PUBLISHERS[rng.random_range(0..PUBLISHERS.len())].into()),
        3 => {
            let a = rng.random_range(-8i32..=8) as f64 * 0.25 + 58.0;
            let b = rng.random_range(-8i32..=8) as f64 * 0.25 + 58.0;
            let c = rng.random_range(-8i32..=8) as f64 * 0.25 + 8.0;
            let d = rng.random_range(-8i32..=8) as f64 * 0.25 + 8.0;
            AtomicConstraint::GeoWithin(BoundingBox::new(a.min(b), c.min(d), a.max(b), c.max(d)).unwrap())
        }
        4 => AtomicConstraint::ActivityIs(subset(rng, &ActivityState::ALL)),
        _ => AtomicConstraint::MinConfidence(rng.random_range(0..=100)),
    }
}

pub fn random_predicate<R: Rng>(rng: &mut R) -> Predicate {
    let n = rng.random_range(0..4);
    Predicate::new((0..n).map(|_| random_constraint(rng)).collect()).unwrap()
}

/// Naive reference matcher: evaluates the *printed* predicate text clause by
/// clause against the event's canonical JSON, sharing no code with the
/// library parser or matcher.
pub fn naive_matches(predicate_text: &str, event: &SensorEvent) -> bool {
    let json: serde_json::Value = serde_json::from_str(&event.canonical_encode()).unwrap();
    let kind = json["kind"].as_str().unwrap();
    let value = match &json["value"] {
        serde_json::Value::Array(c) => c.iter().map(|v| v.as_f64().unwrap().powi(2)).sum::<f64>().sqrt(),
        v => v.as_f64().unwrap(),
    };
    let publisher = json["publisher_id"].as_str().unwrap();
    let lat = json["position"]["lat"].as_f64().unwrap();
    let lon = json["position"]["lon"].as_f64().unwrap();
    let state = json.get("activity").map(|a| a["state"].as_str().unwrap().to_string());
    let confidence = json.get("activity").map(|a| a["confidence"].as_i64().unwrap());

    if predicate_text.trim().is_empty() {
        return true;
    }
    for clause in predicate_text.split(" and ") {
        let ok = if let Some(list) = clause.strip_prefix("kind=") {
            list.split(',').any(|k| k == kind)
        } else if let Some(list) = clause.strip_prefix("activity=") {
            match &state {
                Some(s) => list.split(',').any(|k| k == s),
                None => false,
            }
        } else if let Some(rest) = clause.strip_prefix("confidence>=") {
            match confidence {
                Some(c) => c >= rest.parse::<i64>().unwrap(),
                None => false,
            }
        } else if let Some(rest) = clause.strip_prefix("publisher=") {
            rest.trim_matches('"') == publisher
        } else if let Some(rest) = clause.strip_prefix("geo in [") {
            let nums: Vec<f64> = rest
                .trim_end_matches(']')
                .split(',')
                .map(|n| n.parse().unwrap())
                .collect();
            nums[0] <= lat && lat <= nums[2] && nums[1] <= lon && lon <= nums[3]
        } else if let Some(rest) = clause.strip_prefix("value") {
            let (op, num) = ["<=", ">=", "!=", "<", ">", "="]
                .iter()
                .find_map(|op| rest.strip_prefix(op).map(|n| (*op, n)))
                .unwrap();
            let t: f64 = num.parse().unwrap();
            match op {
                "<=" => value <= t,
                ">=" => value >= t,
                "!=" => value != t,
                "<" => value < t,
                ">" => value > t,
                _ => value == t,
            }
        } else {
            panic!("oracle cannot read clause {clause:?}");
        };
        if !ok {
            return false;
        }
    }
    true
}
