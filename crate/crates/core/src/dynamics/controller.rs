//! PID autopilot, throttle law and the imperfect driving models under test.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sensor::Observation;
use super::vehicle::{DrivingCommand, SimulatorConfig};
use crate::error::{require, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
}

impl PidGains {
    /// Autopilot gains, tuned on the random-road corpus for the default
    /// vehicle at 20 fps.
    pub const REFERENCE: PidGains = PidGains {
        kp: 0.35,
        kd: 9.0,
        ki: 0.0005,
    };
}

impl Default for PidGains {
    fn default() -> Self {
        Self::REFERENCE
    }
}

/// Previous error and running error sum; reset per episode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub prev: Option<f64>,
    pub total: f64,
}

/// Unclipped PID output. The derivative term is zero on the first call.
pub fn pid_raw(state: &mut PidState, lp: f64, gains: &PidGains) -> f64 {
    let diff = state.prev.map_or(0.0, |p| lp - p);
    state.total += lp;
    state.prev = Some(lp);
    gains.kp * lp + gains.kd * diff + gains.ki * state.total
}

pub fn pid_steering(state: &mut PidState, lp: f64, gains: &PidGains) -> f64 {
    pid_raw(state, lp, gains).clamp(-1.0, 1.0)
}

/// `1 - steering^2 - (speed / K)^2`, clipped to `[0, 1]`, with `K = k_low`
/// above the speed limit and `k_high` otherwise.
pub fn throttle_law(steering: f64, speed: f64, cfg: &SimulatorConfig) -> f64 {
    let k = if speed > cfg.max_speed {
        cfg.k_low
    } else {
        cfg.k_high
    };
    (1.0 - steering * steering - (speed / k).powi(2)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Autopilot,
    MistunedPid,
    DelayedPid,
    NoisyPid,
    RateLimitedPid,
}

/// A driving model under test. The autopilot reads the exact lateral
/// position with the reference gains; every other kind reads the simulator's
/// visible channel through `gains` and its own degradation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrivingModelConfig {
    pub kind: ModelKind,
    pub gains: PidGains,
    /// Constant added to the steering before clipping.
    pub steering_bias: f64,
    /// DelayedPid: extra observation latency in steps.
    pub delay_steps: usize,
    /// NoisyPid: standard deviation of the noise on the lateral position.
    pub noise_sd: f64,
    /// RateLimitedPid: largest steering change per step.
    pub max_slew: f64,
}

impl Default for DrivingModelConfig {
    fn default() -> Self {
        DrivingModelConfig {
            kind: ModelKind::Autopilot,
            gains: PidGains::REFERENCE,
            steering_bias: 0.0,
            delay_steps: 0,
            noise_sd: 0.0,
            max_slew: 1.0,
        }
    }
}

impl DrivingModelConfig {
    pub fn autopilot() -> Self {
        Self::default()
    }

    pub fn of_kind(kind: ModelKind) -> Self {
        DrivingModelConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("gains.kp", self.gains.kp),
            ("gains.kd", self.gains.kd),
            ("gains.ki", self.gains.ki),
            ("steering_bias", self.steering_bias),
            ("noise_sd", self.noise_sd),
            ("max_slew", self.max_slew),
        ] {
            require(v.is_finite(), name, "must be finite")?;
        }
        require(self.noise_sd >= 0.0, "noise_sd", "must be >= 0")?;
        require(self.max_slew > 0.0, "max_slew", "must be > 0")?;
        Ok(())
    }
}

/// Per-episode state of a driving model.
#[derive(Debug, Clone)]
pub struct Driver {
    config: DrivingModelConfig,
    pid: PidState,
    history: VecDeque<f64>,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    prev_steering: f64,
    last_raw: f64,
}

impl Driver {
    pub fn new(config: &DrivingModelConfig, seed: u64) -> Self {
        let noise = (config.kind == ModelKind::NoisyPid && config.noise_sd > 0.0)
            .then(|| Normal::new(0.0, config.noise_sd).expect("validated noise sd"));
        Driver {
            config: config.clone(),
            pid: PidState::default(),
            history: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            prev_steering: 0.0,
            last_raw: 0.0,
        }
    }

    /// Unclipped PID output of the most recent `drive` call, before bias,
    /// clipping and slew limiting.
    pub fn last_raw(&self) -> f64 {
        self.last_raw
    }

    pub fn drive(
        &mut self,
        obs: &Observation,
        speed: f64,
        sim: &SimulatorConfig,
    ) -> DrivingCommand {
        let cfg = &self.config;
        let (lp, gains) = match cfg.kind {
            ModelKind::Autopilot => (obs.true_lateral_position, PidGains::REFERENCE),
            ModelKind::MistunedPid | ModelKind::RateLimitedPid => (obs.lateral_position, cfg.gains),
            ModelKind::DelayedPid => {
                self.history.push_back(obs.lateral_position);
                if self.history.len() > cfg.delay_steps + 1 {
                    self.history.pop_front();
                }
                (self.history[0], cfg.gains)
            }
            ModelKind::NoisyPid => {
                let n = self.noise.map_or(0.0, |d| d.sample(&mut self.rng));
                (obs.lateral_position + n, cfg.gains)
            }
        };
        self.last_raw = pid_raw(&mut self.pid, lp, &gains);
        let mut steering = (self.last_raw + cfg.steering_bias).clamp(-1.0, 1.0);
        if cfg.kind == ModelKind::RateLimitedPid {
            let slew = cfg.max_slew;
            steering = self.prev_steering + (steering - self.prev_steering).clamp(-slew, slew);
        }
        self.prev_steering = steering;
        DrivingCommand::new(steering, throttle_law(steering, speed, sim))
    }
}
