//! Vehicle physics, lane measurement, driving models and episode execution.

pub mod controller;
pub mod episode;
pub mod lane;
pub mod sensor;
pub mod vehicle;

pub use controller::{
    pid_raw, pid_steering, throttle_law, Driver, DrivingModelConfig, ModelKind, PidGains, PidState,
};
pub use episode::{initial_state, run_episode, EpisodeLimits, EpisodeResult, Outcome, TraceStep};
pub use lane::{lateral_measures, LaneMeasure, LaneTracker};
pub use sensor::{Observation, Sensor};
pub use vehicle::{step, DrivingCommand, Engine, SimulatorConfig, VehicleState};
