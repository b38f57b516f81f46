#![allow(dead_code)]

use rand::Rng;
use smartrescue_core::model::{ActivityEstimate, ActivityState, GeoPosition, SensorEvent, SensorKind, SensorValue};
use smartrescue_core::protocol::WireEvent;

pub const PUBLISHERS: [&str; 3] = ["alpha", "bravo", "charlie"];

/// Random events on a coarse lattice so grid edges and equal timestamps are
/// hit often.
pub fn random_events<R: Rng>(rng: &mut R, n: usize) -> Vec<WireEvent> {
    let mut seqs = [0u64; 3];
    (0..n)
        .map(|_| {
            let p = rng.random_range(0..PUBLISHERS.len());
            seqs[p] += 1;
            let kind = SensorKind::ALL[rng.random_range(0..SensorKind::ALL.len())];
            let value = if kind == SensorKind::Accelerometer {
                SensorValue::Vector([0.0, rng.random_range(0..20) as f64 * 0.1, 1.0])
            } else {
                SensorValue::Scalar(rng.random_range(-50..400) as f64 * 0.5)
            };
            let position = GeoPosition::new(
                58.0 + rng.random_range(0..=40) as f64 * 0.0025,
                8.0 + rng.random_range(0..=40) as f64 * 0.0025,
                5.0,
            )
            .unwrap();
            let mut ev = SensorEvent::new(
                format!("{}-{}", PUBLISHERS[p], seqs[p]),
                PUBLISHERS[p],
                seqs[p],
                1_700_000_000_000 + rng.random_range(0..600) as i64 * 100,
                kind,
                value,
                position,
            )
            .unwrap();
            if rng.random_bool(0.3) {
                ev = ev.with_activity(ActivityEstimate::new(ActivityState::Walking, 80).unwrap());
            }
            WireEvent::new(ev)
        })
        .collect()
}
