//! JSON query API, the server-sent live stream and static dashboard files.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::Serialize;
use serde_json::value::RawValue;
use tokio_stream::wrappers::errors::BroadcastStreamRecvError;
use tokio_stream::wrappers::BroadcastStream;
use tower_http::services::ServeDir;

use smartrescue_core::edge::{interpret_light, LightInterpretation};
use smartrescue_core::model::{ActivityState, SensorKind};
use smartrescue_core::predicate::Predicate;

use crate::query::{heatmap, query_series, BBox, Bucket, QueryError, Series};
use crate::service::{Aggregator, LiveItem, PublisherRecord};
use crate::store::StoredEvent;

pub const DEFAULT_MAX_POINTS: usize = 200;
pub const DEFAULT_GRID: u32 = 16;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let code = match e {
            QueryError::BadRange(_) => "BAD_RANGE",
            QueryError::BadGrid(_) => "BAD_GRID",
        };
        Self::bad_request(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({"error": self.code, "message": self.message})),
        )
            .into_response()
    }
}

type Params = Query<HashMap<String, String>>;

fn param<T: std::str::FromStr>(params: &HashMap<String, String>, name: &str, default: T) -> Result<T, ApiError> {
    match params.get(name).map(|s| s.trim()).filter(|s| !s.is_empty()) {
        None => Ok(default),
        Some(text) => text
            .parse()
            .map_err(|_| ApiError::bad_request("BAD_PARAMETER", format!("cannot parse {name}={text:?}"))),
    }
}

fn kind_param(params: &HashMap<String, String>, default: Option<SensorKind>) -> Result<SensorKind, ApiError> {
    match params.get("kind").map(|s| s.trim()).filter(|s| !s.is_empty()) {
        Some(text) => SensorKind::parse_loose(text)
            .ok_or_else(|| ApiError::bad_request("UNKNOWN_KIND", format!("unknown sensor kind {text:?}"))),
        None => default.ok_or_else(|| ApiError::bad_request("BAD_PARAMETER", "kind is required")),
    }
}

fn raw_json(e: &StoredEvent) -> Box<RawValue> {
    RawValue::from_string(e.raw.to_string()).expect("stored lines are valid JSON")
}

pub struct ApiConfig {
    /// Directory holding the built dashboard, served under `/ui/`.
    pub ui_dir: Option<PathBuf>,
}

pub fn api_router(aggregator: Arc<Aggregator>, config: ApiConfig) -> Router {
    let api = Router::new()
        .route("/api/publishers", get(publishers))
        .route("/api/publishers/{id}/latest", get(latest))
        .route("/api/publishers/{id}/series", get(series))
        .route("/api/heatmap", get(heat))
        .route("/api/stream", get(stream))
        .route("/api/stats", get(stats))
        .route("/", get(|| async { axum::response::Redirect::temporary("/ui/") }))
        .with_state(aggregator);
    match config.ui_dir {
        Some(dir) => api.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.route("/ui/", get(placeholder_ui)).route("/ui", get(placeholder_ui)),
    }
}

async fn placeholder_ui() -> Html<&'static str> {
    Html(
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>SmartRescue</title></head>\
         <body><h1>SmartRescue aggregation service</h1>\
         <p>No dashboard build is configured. Start the service with <code>--ui-dir</code> \
         pointing at the built dashboard, or use the JSON API under <code>/api/</code>.</p></body></html>",
    )
}

async fn publishers(State(agg): State<Arc<Aggregator>>) -> Json<Vec<PublisherRecord>> {
    Json(agg.publishers())
}

#[derive(Serialize)]
struct ActivityView {
    state: ActivityState,
    confidence: u8,
    text: String,
    timestamp_ms: i64,
}

#[derive(Serialize)]
struct LatestView {
    publisher_id: String,
    presence: Option<PublisherRecord>,
    activity: Option<ActivityView>,
    light: Option<LightInterpretation>,
    events: BTreeMap<SensorKind, Box<RawValue>>,
}

async fn latest(State(agg): State<Arc<Aggregator>>, Path(id): Path<String>) -> Json<LatestView> {
    let store = agg.store();
    let newest = store.latest(&id);
    let activity = store.latest_with_activity(&id).and_then(|e| {
        e.event.activity.map(|a| ActivityView {
            state: a.state,
            confidence: a.confidence,
            text: a.describe(),
            timestamp_ms: e.event.timestamp_ms,
        })
    });
    let light = newest
        .iter()
        .find(|e| e.event.kind == SensorKind::Light)
        .and_then(|e| interpret_light(e.event.scalar()).ok());
    let events = newest.iter().map(|e| (e.event.kind, raw_json(e))).collect();
    drop(store);
    Json(LatestView {
        presence: agg.publisher(&id),
        publisher_id: id,
        activity,
        light,
        events,
    })
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
enum SeriesBody {
    Raw { events: Vec<Box<RawValue>> },
    Buckets { buckets: Vec<Bucket> },
}

#[derive(Serialize)]
struct SeriesView {
    publisher_id: String,
    kind: SensorKind,
    from_ms: i64,
    to_ms: i64,
    max_points: usize,
    count: u64,
    #[serde(flatten)]
    body: SeriesBody,
}

async fn series(
    State(agg): State<Arc<Aggregator>>,
    Path(id): Path<String>,
    Query(params): Params,
) -> Result<Json<SeriesView>, ApiError> {
    let kind = kind_param(&params, None)?;
    let from_ms = param(&params, "from", i64::MIN)?;
    let to_ms = param(&params, "to", i64::MAX)?;
    let max_points = param(&params, "max_points", DEFAULT_MAX_POINTS)?;
    let result = query_series(&agg.store(), &id, kind, from_ms, to_ms, max_points)?;
    let count = result.total_count();
    let body = match result {
        Series::Raw(events) => SeriesBody::Raw {
            events: events.iter().map(|e| raw_json(e)).collect(),
        },
        Series::Buckets(buckets) => SeriesBody::Buckets { buckets },
    };
    Ok(Json(SeriesView {
        publisher_id: id,
        kind,
        from_ms,
        to_ms,
        max_points,
        count,
        body,
    }))
}

async fn heat(
    State(agg): State<Arc<Aggregator>>,
    Query(params): Params,
) -> Result<Json<crate::query::HeatMapGrid>, ApiError> {
    let kind = kind_param(&params, Some(SensorKind::Thermometer))?;
    let bbox = match params.get("bbox") {
        Some(text) => BBox::parse(text)?,
        None => return Err(ApiError::bad_request("BAD_RANGE", "bbox is required")),
    };
    let rows = param(&params, "rows", DEFAULT_GRID)?;
    let cols = param(&params, "cols", DEFAULT_GRID)?;
    let from_ms = param(&params, "from", i64::MIN)?;
    let to_ms = param(&params, "to", i64::MAX)?;
    Ok(Json(heatmap(&agg.store(), kind, bbox, rows, cols, from_ms, to_ms)?))
}

async fn stats(State(agg): State<Arc<Aggregator>>) -> Json<crate::service::ServiceStats> {
    Json(agg.stats())
}

/// Server-sent events: `sensor` items carry the raw event line, `presence`
/// items a presence record. Presence items pass every filter.
async fn stream(
    State(agg): State<Arc<Aggregator>>,
    Query(params): Params,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let filter = params.get("filter").map(String::as_str).unwrap_or("");
    let predicate = Predicate::parse(filter).map_err(|e| ApiError::bad_request("INVALID_PREDICATE", e.to_string()))?;
    let rx = agg.subscribe_live();
    let counter = agg.clone();
    let events = BroadcastStream::new(rx).filter_map(move |item| {
        let out = match item {
            Ok(LiveItem::Sensor(wire)) => predicate
                .matches(wire.event())
                .then(|| SseEvent::default().event("sensor").data(wire.raw())),
            Ok(LiveItem::Presence(p)) => {
                let json = serde_json::to_string(&p).expect("presence serializes");
                Some(SseEvent::default().event("presence").data(json))
            }
            Err(BroadcastStreamRecvError::Lagged(n)) => {
                counter.count_stream_drops(n);
                None
            }
        };
        futures::future::ready(out.map(Ok))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
