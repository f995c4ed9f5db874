//! One execution of a driving model on a road, with the out-of-bound oracle.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::controller::{Driver, DrivingModelConfig};
use super::lane::LaneTracker;
use super::sensor::{Observation, Sensor};
use super::vehicle::{step, DrivingCommand, SimulatorConfig, VehicleState};
use crate::road::{Point, RoadPolyline};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Oob,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLimits {
    pub max_steps: usize,
    pub record_trace: bool,
}

impl EpisodeLimits {
    /// Budget of four times the road length at half the speed limit.
    pub fn for_road(road: &RoadPolyline, cfg: &SimulatorConfig) -> Self {
        let nominal = road.total_length() / (0.5 * cfg.max_speed) / cfg.timestep;
        EpisodeLimits {
            max_steps: (4.0 * nominal).ceil() as usize + 200,
            record_trace: false,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// State after applying `command`.
    pub state: VehicleState,
    pub lateral_position: f64,
    pub lateral_distance: f64,
    pub observation: Observation,
    pub command: DrivingCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    /// Minimum lateral distance over the episode, meters.
    pub fitness: f64,
    /// Maximum absolute lateral position over the episode, meters.
    pub max_lateral_position: f64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceStep>,
}

impl EpisodeResult {
    pub fn is_failure(&self) -> bool {
        self.outcome == Outcome::Oob
    }

    /// One CSV row per step: time, x, y, heading, speed, lp, ld, steering, throttle.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,x,y,heading,speed,lp,ld,steering,throttle")?;
        for t in &self.trace {
            let s = &t.state;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                s.time,
                s.x,
                s.y,
                s.heading,
                s.speed,
                t.lateral_position,
                t.lateral_distance,
                t.command.steering,
                t.command.throttle
            )?;
        }
        Ok(())
    }
}

/// Vehicle placed on the first drivable point, on the lane center, aligned
/// with the road, at rest.
pub fn initial_state(road: &RoadPolyline) -> VehicleState {
    let p = road.start();
    VehicleState {
        x: p.x,
        y: p.y,
        heading: road.headings[0],
        ..Default::default()
    }
}

/// Runs observe -> drive -> step -> measure until the vehicle leaves the
/// lane, passes the road end, or exhausts `limits.max_steps`.
pub fn run_episode(
    model: &DrivingModelConfig,
    cfg: &SimulatorConfig,
    road: &RoadPolyline,
    lane_width: f64,
    limits: &EpisodeLimits,
    seed: u64,
) -> EpisodeResult {
    let mut sensor = Sensor::new(cfg, derive_seed(seed, &["sensor"]));
    let mut driver = Driver::new(model, derive_seed(seed, &["driver"]));
    let mut tracker = LaneTracker::new(road, lane_width);

    let mut state = initial_state(road);
    let mut measure = tracker.measure(Point::new(state.x, state.y));
    let mut fitness = measure.lateral_distance;
    let mut max_lp = measure.lateral_position.abs();
    let mut trace = Vec::new();
    let mut steps = 0;
    let mut outcome = Outcome::Timeout;

    while steps < limits.max_steps {
        let obs = sensor.observe(&state, &measure, road);
        let cmd = driver.drive(&obs, state.speed, cfg);
        state = step(&state, cmd, cfg);
        measure = tracker.measure(Point::new(state.x, state.y));
        steps += 1;
        fitness = fitness.min(measure.lateral_distance);
        max_lp = max_lp.max(measure.lateral_position.abs());
        if limits.record_trace {
            trace.push(TraceStep {
                state,
                lateral_position: measure.lateral_position,
                lateral_distance: measure.lateral_distance,
                observation: obs,
                command: cmd,
            });
        }
        if measure.lateral_distance < 0.0 {
            outcome = Outcome::Oob;
            break;
        }
        if measure.past_end {
            outcome = Outcome::Success;
            break;
        }
    }

    EpisodeResult {
        outcome,
        fitness,
        max_lateral_position: max_lp,
        steps,
        trace,
    }
}
