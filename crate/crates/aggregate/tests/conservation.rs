mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartrescue_aggregate::{heatmap, query_series, AppendOutcome, BBox, EventStore, QueryError, Series};
use smartrescue_core::model::{GeoPosition, SensorEvent, SensorKind, SensorValue};
use smartrescue_core::protocol::WireEvent;
use support::{random_events, PUBLISHERS};

fn store_with(events: &[WireEvent]) -> EventStore {
    let mut s = EventStore::in_memory(1_000_000).unwrap();
    for e in events {
        s.append(e).unwrap();
    }
    s
}

/// Brute force: test the point against every cell's half-open box, closing
/// the last row/column on the top/right edge.
fn oracle_cell(lat: f64, lon: f64, b: &BBox, rows: u32, cols: u32) -> Option<(usize, usize)> {
    let lat_edge = |k: u32| b.min_lat + (b.max_lat - b.min_lat) * k as f64 / rows as f64;
    let lon_edge = |k: u32| b.min_lon + (b.max_lon - b.min_lon) * k as f64 / cols as f64;
    let mut hits = Vec::new();
    for r in 0..rows {
        let (lo, hi) = (lat_edge(r), lat_edge(r + 1));
        let in_row = lo <= lat && (lat < hi || (r == rows - 1 && lat <= b.max_lat));
        for c in 0..cols {
            let (wo, eo) = (lon_edge(c), lon_edge(c + 1));
            let in_col = wo <= lon && (lon < eo || (c == cols - 1 && lon <= b.max_lon));
            if in_row && in_col {
                hits.push((r as usize, c as usize));
            }
        }
    }
    assert!(hits.len() <= 1, "cells overlap: {hits:?}");
    hits.pop()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heatmap_counts_are_conserved(seed in any::<u64>(), rows in 1u32..12, cols in 1u32..12, a in 0u32..20, b in 21u32..41, c in 0u32..20, d in 21u32..41) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = random_events(&mut rng, 600);
        let store = store_with(&events);
        let bbox = BBox::new(58.0 + a as f64 * 0.0025, 8.0 + c as f64 * 0.0025, 58.0 + b as f64 * 0.0025, 8.0 + d as f64 * 0.0025).unwrap();
        let (from, to) = (1_700_000_010_000, 1_700_000_050_000);
        let grid = heatmap(&store, SensorKind::Thermometer, bbox, rows, cols, from, to).unwrap();

        let qualifying: Vec<&SensorEvent> = events.iter().map(|w| w.event())
            .filter(|e| e.kind == SensorKind::Thermometer && (from..=to).contains(&e.timestamp_ms))
            .filter(|e| bbox.min_lat <= e.position.lat && e.position.lat <= bbox.max_lat && bbox.min_lon <= e.position.lon && e.position.lon <= bbox.max_lon)
            .collect();
        let sum: u64 = grid.cells.iter().flatten().map(|c| c.count).sum();
        prop_assert_eq!(sum, qualifying.len() as u64);
        prop_assert_eq!(grid.total, sum);

        let mut expected = vec![vec![(0u64, 0.0f64, f64::NEG_INFINITY); cols as usize]; rows as usize];
        for e in &qualifying {
            let (r, c) = oracle_cell(e.position.lat, e.position.lon, &bbox, rows, cols).expect("point inside bbox");
            let cell = &mut expected[r][c];
            cell.0 += 1;
            cell.1 += e.scalar();
            cell.2 = cell.2.max(e.scalar());
        }
        prop_assert_eq!(grid.cells.len(), rows as usize);
        prop_assert!(grid.cells.iter().all(|row| row.len() == cols as usize));
        for (got_row, want_row) in grid.cells.iter().zip(&expected) {
            for (got, &(n, s, m)) in got_row.iter().zip(want_row) {
                prop_assert_eq!(got.count, n);
                if n > 0 {
                    prop_assert_eq!(got.max, Some(m));
                    prop_assert!((got.mean.unwrap() - s / n as f64).abs() < 1e-9);
                } else {
                    prop_assert_eq!(got.mean, None);
                }
            }
        }
    }

    #[test]
    fn series_buckets_conserve_counts(seed in any::<u64>(), max_points in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = random_events(&mut rng, 500);
        let store = store_with(&events);
        for p in PUBLISHERS {
            for kind in SensorKind::ALL {
                let raw = query_series(&store, p, kind, i64::MIN, i64::MAX, usize::MAX).unwrap();
                let Series::Raw(all) = &raw else { panic!("expected raw") };
                let expected = events.iter().filter(|w| w.event().publisher_id == p && w.event().kind == kind).count();
                prop_assert_eq!(all.len(), expected);
                prop_assert!(all.windows(2).all(|w| (w[0].event.timestamp_ms, w[0].event.seq) <= (w[1].event.timestamp_ms, w[1].event.seq)));
                let s = query_series(&store, p, kind, i64::MIN, i64::MAX, max_points).unwrap();
                prop_assert_eq!(s.total_count(), expected as u64);
                if let Series::Buckets(b) = &s {
                    prop_assert!(b.len() <= max_points);
                    for bucket in b {
                        prop_assert!(bucket.min <= bucket.mean && bucket.mean <= bucket.max);
                    }
                    prop_assert!(b.windows(2).all(|w| w[0].start_ms <= w[1].start_ms));
                } else {
                    prop_assert!(expected <= max_points);
                }
            }
        }
    }
}

#[test]
fn thousand_events_in_ten_buckets() {
    let mut store = EventStore::in_memory(10_000).unwrap();
    for i in 0..1000u64 {
        let ev = SensorEvent::new(
            format!("p-{i}"),
            "p",
            i + 1,
            i as i64 * 1000,
            SensorKind::Thermometer,
            SensorValue::Scalar(i as f64),
            GeoPosition::new(0.0, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        store.append(&WireEvent::new(ev)).unwrap();
    }
    let Series::Buckets(b) = query_series(&store, "p", SensorKind::Thermometer, i64::MIN, i64::MAX, 10).unwrap() else {
        panic!("expected buckets")
    };
    assert_eq!(b.len(), 10);
    assert_eq!(b.iter().map(|b| b.count).sum::<u64>(), 1000);
    assert_eq!(b[0].min, 0.0);
    assert_eq!(b[9].max, 999.0);

    let Series::Raw(r) = query_series(&store, "p", SensorKind::Thermometer, 0, 9_000, 100).unwrap() else {
        panic!()
    };
    assert_eq!(r.len(), 10);
    assert_eq!(
        query_series(&store, "p", SensorKind::Thermometer, 5, 4, 10).unwrap_err(),
        QueryError::BadRange("from 5 is after to 4".into())
    );
    assert!(matches!(
        query_series(&store, "p", SensorKind::Thermometer, 0, 4, 1),
        Err(QueryError::BadRange(_))
    ));
}

#[test]
fn single_event_heatmap_and_grid_limits() {
    let mut store = EventStore::in_memory(10).unwrap();
    let ev = SensorEvent::new(
        "e1",
        "p",
        1,
        5,
        SensorKind::Thermometer,
        SensorValue::Scalar(80.0),
        GeoPosition::new(0.5, 0.5, 1.0).unwrap(),
    )
    .unwrap();
    store.append(&WireEvent::new(ev)).unwrap();
    let bbox = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let g = heatmap(&store, SensorKind::Thermometer, bbox, 3, 3, 0, 10).unwrap();
    assert_eq!(g.cells[1][1].count, 1);
    assert_eq!((g.cells[1][1].mean, g.cells[1][1].max), (Some(80.0), Some(80.0)));
    assert_eq!(g.cells.iter().flatten().filter(|c| c.count == 0).count(), 8);
    assert_eq!(g.hottest(), Some((1, 1)));
    assert!(matches!(
        heatmap(&store, SensorKind::Thermometer, bbox, 0, 3, 0, 1),
        Err(QueryError::BadGrid(_))
    ));
    assert!(matches!(
        heatmap(&store, SensorKind::Thermometer, bbox, 3, 257, 0, 1),
        Err(QueryError::BadGrid(_))
    ));
    assert!(matches!(
        heatmap(&store, SensorKind::Thermometer, bbox, 3, 3, 2, 1),
        Err(QueryError::BadRange(_))
    ));
}

#[test]
fn raw_lines_come_back_byte_identical_and_duplicates_count_once() {
    let raw = r#"{"event_id":"x-1","publisher_id":"x","seq":1,"timestamp_ms":1,"kind":"LIGHT","value":1.50E2,"unit":"lux","position":{"lat":0,"lon":0.0,"accuracy_m":5.000}}"#;
    let mut store = EventStore::in_memory(10).unwrap();
    let wire = WireEvent::from_raw(raw).unwrap();
    assert_eq!(store.append(&wire).unwrap(), AppendOutcome::Stored(0));
    assert_eq!(store.append(&wire).unwrap(), AppendOutcome::Duplicate);
    assert_eq!(&*store.get("x-1").unwrap().raw, raw);
    assert_eq!(store.counters().duplicates, 1);
    assert_eq!(store.len(), 1);
}
