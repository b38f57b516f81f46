//! Declarative scenario description and the deck-grid geometry.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use smartrescue_core::model::{ActivityState, GeoPosition};

use crate::SimError;

/// Mean Earth radius used for the local equirectangular projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Reported horizontal accuracy of simulated GPS fixes.
pub const POSITION_ACCURACY_M: f64 = 5.0;

/// A deck cell addressed by column `x` and row `y`; serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

impl From<[u32; 2]> for Cell {
    fn from([x, y]: [u32; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Cell> for [u32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeckGrid {
    pub width: u32,
    pub height: u32,
    pub cell_size_m: f64,
}

/// Where the grid sits on the globe. `lat`/`lon` locate the center of cell
/// (0, 0); `bearing_deg` is the compass bearing of the +x (column) axis. The
/// +y (row) axis points 90 degrees counter-clockwise from it, so a bearing of
/// 90 puts columns east and rows north.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoAnchor {
    pub lat: f64,
    pub lon: f64,
    #[serde(default = "default_bearing")]
    pub bearing_deg: f64,
}

fn default_bearing() -> f64 {
    90.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ambient {
    pub temp_c: f64,
    pub humidity_pct: f64,
    pub pressure_hpa: f64,
    pub light_lux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireSpec {
    pub origin_cell: Cell,
    pub start_time_s: f64,
    pub spread_speed_m_per_s: f64,
    pub peak_temp_c: f64,
    pub decay_length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub cell: Cell,
    pub t_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub start_s: f64,
    pub state: ActivityState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub agent_id: String,
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub activity_schedule: Vec<ScheduleEntry>,
    /// Time of a simulated fall. From then on the agent lies still where it fell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fall_at_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Free-form note; ignored by the simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub deck_grid: DeckGrid,
    pub geo_anchor: GeoAnchor,
    pub ambient: Ambient,
    pub fire: FireSpec,
    pub agents: Vec<AgentSpec>,
    pub duration_s: f64,
    pub seed: u64,
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidScenario(msg.into())
}

fn finite(name: &str, v: f64) -> Result<(), SimError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite")))
    }
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| invalid(format!("unreadable scenario: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let g = &self.deck_grid;
        if g.width == 0 || g.height == 0 {
            return Err(invalid("deck_grid width and height must be positive"));
        }
        if !(g.cell_size_m.is_finite() && g.cell_size_m > 0.0) {
            return Err(invalid("deck_grid.cell_size_m must be positive"));
        }
        GeoPosition::new(self.geo_anchor.lat, self.geo_anchor.lon, 0.0)
            .map_err(|e| invalid(format!("geo_anchor: {e}")))?;
        finite("geo_anchor.bearing_deg", self.geo_anchor.bearing_deg)?;
        let a = &self.ambient;
        for (name, v) in [
            ("ambient.temp_c", a.temp_c),
            ("ambient.humidity_pct", a.humidity_pct),
            ("ambient.pressure_hpa", a.pressure_hpa),
            ("ambient.light_lux", a.light_lux),
        ] {
            finite(name, v)?;
        }
        if a.light_lux < 0.0 {
            return Err(invalid("ambient.light_lux must be non-negative"));
        }
        let f = &self.fire;
        if !self.contains(f.origin_cell) {
            return Err(invalid(format!("fire origin {} is outside the grid", f.origin_cell)));
        }
        finite("fire.start_time_s", f.start_time_s)?;
        finite("fire.peak_temp_c", f.peak_temp_c)?;
        if !(f.spread_speed_m_per_s.is_finite() && f.spread_speed_m_per_s > 0.0) {
            return Err(invalid("fire.spread_speed_m_per_s must be positive"));
        }
        if !(f.decay_length_m.is_finite() && f.decay_length_m > 0.0) {
            return Err(invalid("fire.decay_length_m must be positive"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("duration_s must be positive"));
        }
        let mut ids = std::collections::HashSet::new();
        for agent in &self.agents {
            smartrescue_core::model::validate_id("agent_id", &agent.agent_id).map_err(|e| invalid(e.to_string()))?;
            if !ids.insert(agent.agent_id.as_str()) {
                return Err(invalid(format!("duplicate agent_id {:?}", agent.agent_id)));
            }
            if agent.waypoints.is_empty() {
                return Err(invalid(format!("agent {:?} has no waypoints", agent.agent_id)));
            }
            for w in &agent.waypoints {
                finite("waypoint t_s", w.t_s)?;
                if !self.contains(w.cell) {
                    return Err(invalid(format!(
                        "agent {:?} waypoint {} is outside the grid",
                        agent.agent_id, w.cell
                    )));
                }
            }
            if agent.waypoints.windows(2).any(|w| w[1].t_s <= w[0].t_s) {
                return Err(invalid(format!(
                    "agent {:?} waypoint times must strictly increase",
                    agent.agent_id
                )));
            }
            if agent.activity_schedule.windows(2).any(|w| w[1].start_s <= w[0].start_s) {
                return Err(invalid(format!(
                    "agent {:?} activity_schedule start times must strictly increase",
                    agent.agent_id
                )));
            }
            if let Some(t) = agent.fall_at_s {
                if !(t.is_finite() && t >= 0.0) {
                    return Err(invalid("fall_at_s must be non-negative"));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.deck_grid.width && cell.y < self.deck_grid.height
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.deck_grid.height).flat_map(move |y| (0..self.deck_grid.width).map(move |x| Cell::new(x, y)))
    }

    /// Local deck coordinates in meters of a cell's center, relative to the
    /// center of cell (0, 0).
    pub fn cell_center_m(&self, cell: Cell) -> (f64, f64) {
        let s = self.deck_grid.cell_size_m;
        (cell.x as f64 * s, cell.y as f64 * s)
    }

    /// Distance in meters between two cell centers.
    pub fn cell_distance_m(&self, a: Cell, b: Cell) -> f64 {
        let (ax, ay) = self.cell_center_m(a);
        let (bx, by) = self.cell_center_m(b);
        (ax - bx).hypot(ay - by)
    }

    /// Map local deck meters to latitude/longitude.
    pub fn local_to_geo(&self, x_m: f64, y_m: f64) -> GeoPosition {
        let theta = self.geo_anchor.bearing_deg.to_radians();
        let east = x_m * theta.sin() - y_m * theta.cos();
        let north = x_m * theta.cos() + y_m * theta.sin();
        let lat0 = self.geo_anchor.lat;
        let lat = lat0 + (north / EARTH_RADIUS_M).to_degrees();
        let lon = self.geo_anchor.lon + (east / (EARTH_RADIUS_M * lat0.to_radians().cos())).to_degrees();
        GeoPosition {
            lat,
            lon,
            accuracy_m: POSITION_ACCURACY_M,
        }
    }

    /// Inverse of [`Self::local_to_geo`].
    pub fn geo_to_local(&self, lat: f64, lon: f64) -> (f64, f64) {
        let theta = self.geo_anchor.bearing_deg.to_radians();
        let lat0 = self.geo_anchor.lat;
        let north = (lat - lat0).to_radians() * EARTH_RADIUS_M;
        let east = (lon - self.geo_anchor.lon).to_radians() * EARTH_RADIUS_M * lat0.to_radians().cos();
        // rotate (east, north) back into the deck frame
        let x = east * theta.sin() + north * theta.cos();
        let y = -east * theta.cos() + north * theta.sin();
        (x, y)
    }

    pub fn cell_to_geo(&self, cell: Cell) -> GeoPosition {
        let (x, y) = self.cell_center_m(cell);
        self.local_to_geo(x, y)
    }

    /// The grid cell whose center is nearest to a geographic point, if the
    /// point lies on the deck.
    pub fn geo_to_cell(&self, lat: f64, lon: f64) -> Option<Cell> {
        let (x, y) = self.geo_to_local(lat, lon);
        self.nearest_cell(x, y)
    }

    pub fn nearest_cell(&self, x_m: f64, y_m: f64) -> Option<Cell> {
        let s = self.deck_grid.cell_size_m;
        let cx = (x_m / s).round();
        let cy = (y_m / s).round();
        if cx < 0.0 || cy < 0.0 {
            return None;
        }
        let cell = Cell::new(cx as u32, cy as u32);
        self.contains(cell).then_some(cell)
    }

    /// Geographic bounding box `(min_lat, min_lon, max_lat, max_lon)` that
    /// covers every cell of the deck including its half-cell margin.
    pub fn geo_bbox(&self) -> (f64, f64, f64, f64) {
        let s = self.deck_grid.cell_size_m;
        let w = self.deck_grid.width as f64 * s;
        let h = self.deck_grid.height as f64 * s;
        let corners = [
            (-s / 2.0, -s / 2.0),
            (w - s / 2.0, -s / 2.0),
            (-s / 2.0, h - s / 2.0),
            (w - s / 2.0, h - s / 2.0),
        ];
        let mut bbox = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in corners {
            let p = self.local_to_geo(x, y);
            bbox.0 = bbox.0.min(p.lat);
            bbox.1 = bbox.1.min(p.lon);
            bbox.2 = bbox.2.max(p.lat);
            bbox.3 = bbox.3.max(p.lon);
        }
        bbox
    }
}

impl AgentSpec {
    /// Continuous deck position in meters at time `t_s`, following straight
    /// segments between waypoints. Before the first waypoint the agent waits
    /// at it; after the last it stays there.
    pub fn position_m(&self, spec: &ScenarioSpec, t_s: f64) -> (f64, f64) {
        let t = match self.fall_at_s {
            Some(fall) if t_s > fall => fall,
            _ => t_s,
        };
        let first = &self.waypoints[0];
        if t <= first.t_s {
            return spec.cell_center_m(first.cell);
        }
        for pair in self.waypoints.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if t <= b.t_s {
                let u = (t - a.t_s) / (b.t_s - a.t_s);
                let (ax, ay) = spec.cell_center_m(a.cell);
                let (bx, by) = spec.cell_center_m(b.cell);
                return (ax + u * (bx - ax), ay + u * (by - ay));
            }
        }
        spec.cell_center_m(self.waypoints[self.waypoints.len() - 1].cell)
    }

    /// The cell the agent occupies at `t_s`.
    pub fn cell_at(&self, spec: &ScenarioSpec, t_s: f64) -> Cell {
        let (x, y) = self.position_m(spec, t_s);
        spec.nearest_cell(x, y)
            .expect("waypoints are validated to lie inside the grid")
    }

    /// Horizontal speed in m/s at `t_s`.
    pub fn speed_m_per_s(&self, spec: &ScenarioSpec, t_s: f64) -> f64 {
        if matches!(self.fall_at_s, Some(fall) if t_s >= fall) {
            return 0.0;
        }
        for pair in self.waypoints.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.t_s <= t_s && t_s < b.t_s {
                return spec.cell_distance_m(a.cell, b.cell) / (b.t_s - a.t_s);
            }
        }
        0.0
    }

    /// Scheduled activity at `t_s`; STILL before the first entry. A fallen
    /// agent is STILL regardless of the schedule.
    pub fn activity_at(&self, t_s: f64) -> ActivityState {
        if matches!(self.fall_at_s, Some(fall) if t_s >= fall) {
            return ActivityState::Still;
        }
        self.activity_schedule
            .iter()
            .rev()
            .find(|e| e.start_s <= t_s)
            .map(|e| e.state)
            .unwrap_or(ActivityState::Still)
    }
}
