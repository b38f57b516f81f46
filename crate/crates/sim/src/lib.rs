//! Ship-fire simulator: hazard fields on a deck grid, agents moving between
//! waypoints, synthetic accelerometer streams and a runner that publishes
//! each agent's readings through its own client.

pub mod accel;
pub mod field;
pub mod runner;
pub mod scenario;

use thiserror::Error;

pub use accel::{accel_trace, accel_trace_with_fall, AccelGenerator};
pub use field::{field_at, FieldSample};
pub use runner::{
    plan_agent, plan_scenario, run_scenario, AgentReport, PlannedEvent, RunOptions, RunReport, PUBLISH_PERIOD_MS,
    VIRTUAL_EPOCH_MS,
};
pub use scenario::{Cell, ScenarioSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("cell {0} is outside the deck grid")]
    CellOutOfGrid(Cell),
    #[error("unsupported sample rate {0} Hz (only 50 Hz is generated)")]
    UnsupportedRate(f64),
    #[error("broker unreachable: {0}")]
    BrokerUnreachable(String),
    #[error("agent {agent_id}: {message}")]
    Publish { agent_id: String, message: String },
}
