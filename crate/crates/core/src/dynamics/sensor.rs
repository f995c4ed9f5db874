//! Perception stand-in: exact geometry plus per-simulator bias, noise and
//! latency on the channels the driving model sees.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::lane::{lookahead_curvature, LaneMeasure};
use super::vehicle::{SimulatorConfig, VehicleState};
use crate::road::{wrap_angle, RoadPolyline};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub lateral_position: f64,
    pub heading_error: f64,
    pub lookahead_curvature: f64,
    /// Exact lateral position. Only the autopilot may read it.
    pub true_lateral_position: f64,
}

#[derive(Debug, Clone, Copy)]
struct Reading {
    lateral_position: f64,
    heading_error: f64,
    lookahead_curvature: f64,
}

#[derive(Debug, Clone)]
pub struct Sensor {
    bias: f64,
    noise: Option<Normal<f64>>,
    delay: usize,
    history: VecDeque<Reading>,
    rng: ChaCha8Rng,
}

impl Sensor {
    pub fn new(cfg: &SimulatorConfig, seed: u64) -> Self {
        let noise = (cfg.sensor_noise_sd > 0.0)
            .then(|| Normal::new(0.0, cfg.sensor_noise_sd).expect("validated noise sd"));
        Sensor {
            bias: cfg.sensor_bias,
            noise,
            delay: cfg.sensor_delay_steps,
            history: VecDeque::with_capacity(cfg.sensor_delay_steps + 1),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Produces the observation for the current step. The visible channels
    /// lag by `delay` steps, holding the first reading until enough history
    /// exists.
    pub fn observe(
        &mut self,
        state: &VehicleState,
        measure: &LaneMeasure,
        polyline: &RoadPolyline,
    ) -> Observation {
        let noise = self.noise.map_or(0.0, |n| n.sample(&mut self.rng));
        let reading = Reading {
            lateral_position: measure.lateral_position + self.bias + noise,
            heading_error: wrap_angle(state.heading - measure.road_heading),
            lookahead_curvature: lookahead_curvature(polyline, measure.progress),
        };
        self.history.push_back(reading);
        if self.history.len() > self.delay + 1 {
            self.history.pop_front();
        }
        let visible = self.history[0];
        Observation {
            lateral_position: visible.lateral_position,
            heading_error: visible.heading_error,
            lookahead_curvature: visible.lookahead_curvature,
            true_lateral_position: measure.lateral_position,
        }
    }
}
