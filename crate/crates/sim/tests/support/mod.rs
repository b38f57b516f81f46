#![allow(dead_code)]

use smartrescue_sim::ScenarioSpec;

pub fn small_spec() -> ScenarioSpec {
    ScenarioSpec::from_json(
        r#"{
        "deck_grid": {"width": 12, "height": 6, "cell_size_m": 5.0},
        "geo_anchor": {"lat": 58.0, "lon": 8.0, "bearing_deg": 90},
        "ambient": {"temp_c": 20.0, "humidity_pct": 45.0, "pressure_hpa": 1013.25, "light_lux": 400.0},
        "fire": {"origin_cell": [2, 1], "start_time_s": 5.0, "spread_speed_m_per_s": 0.5, "peak_temp_c": 300.0, "decay_length_m": 10.0},
        "agents": [
            {"agent_id": "walker", "waypoints": [{"cell": [0, 0], "t_s": 0}, {"cell": [11, 0], "t_s": 40}],
             "activity_schedule": [{"start_s": 0, "state": "WALKING"}, {"start_s": 40, "state": "STILL"}]},
            {"agent_id": "runner", "waypoints": [{"cell": [11, 5], "t_s": 0}, {"cell": [0, 5], "t_s": 20}],
             "activity_schedule": [{"start_s": 0, "state": "RUNNING"}, {"start_s": 20, "state": "STILL"}]},
            {"agent_id": "faller", "waypoints": [{"cell": [3, 1], "t_s": 0}],
             "activity_schedule": [{"start_s": 0, "state": "WALKING"}], "fall_at_s": 12.0}
        ],
        "duration_s": 60, "seed": 42
    }"#,
    )
    .unwrap()
}
