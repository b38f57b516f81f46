//! Read-side computations over the store: time series with downsampling and
//! the gridded heat map.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use smartrescue_core::model::SensorKind;

use crate::store::{EventStore, StoredEvent};

pub const MAX_GRID_DIM: u32 = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("bad range: {0}")]
    BadRange(String),
    #[error("bad grid: {0}")]
    BadGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bucket {
    pub start_ms: i64,
    pub end_ms: i64,
    pub count: u64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub enum Series {
    /// Every matching event, oldest first.
    Raw(Vec<Arc<StoredEvent>>),
    /// Non-empty equal-width time buckets, oldest first.
    Buckets(Vec<Bucket>),
}

impl Series {
    pub fn total_count(&self) -> u64 {
        match self {
            Series::Raw(v) => v.len() as u64,
            Series::Buckets(b) => b.iter().map(|b| b.count).sum(),
        }
    }
}

/// Events of one publisher and kind in `[from_ms, to_ms]`. When more than
/// `max_points` match, the span from the first to the last matching
/// timestamp is cut into `max_points` equal buckets and each non-empty one
/// reports count/min/mean/max of the event values (vector magnitude for the
/// accelerometer).
pub fn query_series(
    store: &EventStore,
    publisher_id: &str,
    kind: SensorKind,
    from_ms: i64,
    to_ms: i64,
    max_points: usize,
) -> Result<Series, QueryError> {
    if from_ms > to_ms {
        return Err(QueryError::BadRange(format!("from {from_ms} is after to {to_ms}")));
    }
    if max_points < 2 {
        return Err(QueryError::BadRange("max_points must be at least 2".into()));
    }
    let events = store.range(publisher_id, kind, from_ms, to_ms);
    if events.len() <= max_points {
        return Ok(Series::Raw(events));
    }
    let first = events[0].event.timestamp_ms;
    let last = events[events.len() - 1].event.timestamp_ms;
    let span = (last - first) as f64;
    let width = span / max_points as f64;
    let mut acc: Vec<Option<(u64, f64, f64, f64)>> = vec![None; max_points];
    for e in &events {
        let offset = (e.event.timestamp_ms - first) as f64;
        let i = if width > 0.0 {
            ((offset / width).floor() as usize).min(max_points - 1)
        } else {
            0
        };
        let v = e.event.scalar();
        let slot = acc[i].get_or_insert((0, f64::INFINITY, 0.0, f64::NEG_INFINITY));
        slot.0 += 1;
        slot.1 = slot.1.min(v);
        slot.2 += v;
        slot.3 = slot.3.max(v);
    }
    let buckets = acc
        .into_iter()
        .enumerate()
        .filter_map(|(i, slot)| {
            let (count, min, sum, max) = slot?;
            let start = first as f64 + i as f64 * width;
            let end = if i + 1 == max_points {
                last as f64
            } else {
                first as f64 + (i + 1) as f64 * width
            };
            // keep mean inside [min, max] despite summation rounding
            let mean = (sum / count as f64).clamp(min, max);
            Some(Bucket {
                start_ms: start.floor() as i64,
                end_ms: end.ceil() as i64,
                count,
                min,
                mean,
                max,
            })
        })
        .collect();
    Ok(Series::Buckets(buckets))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self, QueryError> {
        let all_finite = [min_lat, min_lon, max_lat, max_lon].iter().all(|v| v.is_finite());
        if !all_finite || min_lat >= max_lat || min_lon >= max_lon {
            return Err(QueryError::BadRange(format!(
                "bbox [{min_lat},{min_lon},{max_lat},{max_lon}] must have min < max on both axes"
            )));
        }
        Ok(Self {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        })
    }

    /// Parse `min_lat,min_lon,max_lat,max_lon`.
    pub fn parse(text: &str) -> Result<Self, QueryError> {
        let parts: Vec<f64> = text
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| QueryError::BadRange(format!("bbox {text:?} is not four numbers")))?;
        match parts[..] {
            [a, b, c, d] => Self::new(a, b, c, d),
            _ => Err(QueryError::BadRange(format!("bbox {text:?} is not four numbers"))),
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.min_lat <= lat && lat <= self.max_lat && self.min_lon <= lon && lon <= self.max_lon
    }
}

/// Index of the band holding `v` when `[lo, hi]` is cut into `n` equal bands.
/// Bands are closed below; `hi` itself belongs to the last band. Band `k`
/// starts at `lo + (hi - lo) * k / n` exactly as computed here, so the
/// rounding of the initial estimate cannot move a point across an edge.
pub fn band_index(v: f64, lo: f64, hi: f64, n: u32) -> usize {
    let n = n as usize;
    let edge = |k: usize| lo + (hi - lo) * k as f64 / n as f64;
    let mut i = (((v - lo) / (hi - lo)) * n as f64).floor().clamp(0.0, (n - 1) as f64) as usize;
    while i + 1 < n && v >= edge(i + 1) {
        i += 1;
    }
    while i > 0 && v < edge(i) {
        i -= 1;
    }
    i
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatCell {
    pub count: u64,
    pub mean: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatMapGrid {
    pub kind: SensorKind,
    pub bbox: BBox,
    pub rows: u32,
    pub cols: u32,
    pub from_ms: i64,
    pub to_ms: i64,
    /// Row-major; row 0 is the southern edge, column 0 the western edge.
    pub cells: Vec<Vec<HeatCell>>,
    pub total: u64,
}

impl HeatMapGrid {
    /// The (row, col) of the cell with the greatest maximum, if any.
    pub fn hottest(&self) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (r, row) in self.cells.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if let Some(m) = cell.max {
                    if best.is_none_or(|(_, b)| m > b) {
                        best = Some(((r, c), m));
                    }
                }
            }
        }
        best.map(|(rc, _)| rc)
    }

    /// Geographic bounds `(min_lat, min_lon, max_lat, max_lon)` of one cell.
    pub fn cell_bounds(&self, row: usize, col: usize) -> (f64, f64, f64, f64) {
        let b = &self.bbox;
        let lat = |k: usize| b.min_lat + (b.max_lat - b.min_lat) * k as f64 / self.rows as f64;
        let lon = |k: usize| b.min_lon + (b.max_lon - b.min_lon) * k as f64 / self.cols as f64;
        (lat(row), lon(col), lat(row + 1), lon(col + 1))
    }
}

pub fn heatmap(
    store: &EventStore,
    kind: SensorKind,
    bbox: BBox,
    rows: u32,
    cols: u32,
    from_ms: i64,
    to_ms: i64,
) -> Result<HeatMapGrid, QueryError> {
    for (name, n) in [("rows", rows), ("cols", cols)] {
        if !(1..=MAX_GRID_DIM).contains(&n) {
            return Err(QueryError::BadGrid(format!(
                "{name} must be in 1..={MAX_GRID_DIM}, got {n}"
            )));
        }
    }
    if from_ms > to_ms {
        return Err(QueryError::BadRange(format!("from {from_ms} is after to {to_ms}")));
    }
    let mut acc = vec![vec![(0u64, 0.0f64, f64::NEG_INFINITY); cols as usize]; rows as usize];
    let mut total = 0;
    for e in store.kind_range(kind, from_ms, to_ms) {
        let p = e.event.position;
        if !bbox.contains(p.lat, p.lon) {
            continue;
        }
        let r = band_index(p.lat, bbox.min_lat, bbox.max_lat, rows);
        let c = band_index(p.lon, bbox.min_lon, bbox.max_lon, cols);
        let v = e.event.scalar();
        let cell = &mut acc[r][c];
        cell.0 += 1;
        cell.1 += v;
        cell.2 = cell.2.max(v);
        total += 1;
    }
    let cells = acc
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(count, sum, max)| HeatCell {
                    count,
                    mean: (count > 0).then(|| (sum / count as f64).min(max)),
                    max: (count > 0).then_some(max),
                })
                .collect()
        })
        .collect();
    Ok(HeatMapGrid {
        kind,
        bbox,
        rows,
        cols,
        from_ms,
        to_ms,
        cells,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_are_closed_below_and_top_edge_joins_last_band() {
        assert_eq!(band_index(0.0, 0.0, 1.0, 4), 0);
        assert_eq!(band_index(0.25, 0.0, 1.0, 4), 1);
        assert_eq!(band_index(0.2499999, 0.0, 1.0, 4), 0);
        assert_eq!(band_index(1.0, 0.0, 1.0, 4), 3);
        assert_eq!(band_index(0.3, 0.0, 0.9, 3), 1);
        assert_eq!(band_index(5.0, 5.0, 6.0, 1), 0);
    }

    #[test]
    fn bbox_validation() {
        assert!(BBox::parse("1,2,3,4").is_ok());
        assert!(BBox::parse("3,2,1,4").is_err());
        assert!(BBox::parse("1,2,3").is_err());
        assert!(BBox::parse("a,b,c,d").is_err());
    }
}
