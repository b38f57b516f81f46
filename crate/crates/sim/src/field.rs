//! Closed-form hazard fields over the deck.

use serde::Serialize;

use crate::scenario::{Cell, ScenarioSpec};
use crate::SimError;

/// Keeps the smoke term finite at the moment of ignition.
pub const SMOKE_EPSILON_M: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldSample {
    pub temp_c: f64,
    pub light_lux: f64,
    pub humidity_pct: f64,
    pub pressure_hpa: f64,
}

/// Radius in meters the fire front has reached at `t_s`.
pub fn front_radius_m(spec: &ScenarioSpec, t_s: f64) -> f64 {
    spec.fire.spread_speed_m_per_s * (t_s - spec.fire.start_time_s).max(0.0)
}

/// Field values at a cell center. Temperature decays exponentially with
/// distance from the fire origin inside the advancing front and is ambient
/// outside it; light is dimmed by smoke that thickens toward the origin.
pub fn field_at(spec: &ScenarioSpec, cell: Cell, t_s: f64) -> Result<FieldSample, SimError> {
    if !spec.contains(cell) {
        return Err(SimError::CellOutOfGrid(cell));
    }
    let ambient = &spec.ambient;
    let fire = &spec.fire;
    let d = spec.cell_distance_m(cell, fire.origin_cell);
    let r = front_radius_m(spec, t_s);
    let ignited = t_s >= fire.start_time_s;

    let temp_c = if ignited && d <= r {
        ambient.temp_c + (fire.peak_temp_c - ambient.temp_c) * (-d / fire.decay_length_m).exp()
    } else {
        ambient.temp_c
    };
    let smoke = if ignited {
        2.0 * (1.0 - d / (r + SMOKE_EPSILON_M)).max(0.0)
    } else {
        0.0
    };
    Ok(FieldSample {
        temp_c,
        light_lux: ambient.light_lux * (-smoke).exp(),
        humidity_pct: ambient.humidity_pct,
        pressure_hpa: ambient.pressure_hpa,
    })
}
