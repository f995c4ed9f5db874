use serde::{Deserialize, Serialize};

use crate::error::{require, ConfigError};

/// 30 km/h in m/s.
pub const DEFAULT_MAX_SPEED: f64 = 30.0 / 3.6;
/// 20 frames per second.
pub const DEFAULT_TIMESTEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    Kinematic,
    Dynamic,
}

/// Physics, throttle-law and sensor parameters of one simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub engine: Engine,
    pub timestep: f64,
    pub wheelbase: f64,
    pub max_steer_angle: f64,
    pub max_speed: f64,
    /// Longitudinal acceleration at full throttle, m/s^2.
    pub throttle_gain: f64,
    /// Linear drag coefficient, 1/s.
    pub drag: f64,
    /// Dynamic engine only: wheelbase over tire relaxation length. The
    /// realized yaw rate follows the commanded one with rate
    /// `tire_stiffness * speed / wheelbase`.
    pub tire_stiffness: f64,
    /// Throttle-law denominator above `max_speed`.
    pub k_low: f64,
    /// Throttle-law denominator at or below `max_speed`.
    pub k_high: f64,
    pub sensor_bias: f64,
    pub sensor_noise_sd: f64,
    pub sensor_delay_steps: usize,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            engine: Engine::Kinematic,
            timestep: DEFAULT_TIMESTEP,
            wheelbase: 2.5,
            max_steer_angle: 0.6,
            max_speed: DEFAULT_MAX_SPEED,
            throttle_gain: 5.0,
            drag: 0.3,
            tire_stiffness: 2.0,
            k_low: 0.5 * DEFAULT_MAX_SPEED,
            k_high: 1.5 * DEFAULT_MAX_SPEED,
            sensor_bias: 0.0,
            sensor_noise_sd: 0.0,
            sensor_delay_steps: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn dynamic() -> Self {
        SimulatorConfig {
            engine: Engine::Dynamic,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let finite = [
            ("timestep", self.timestep),
            ("wheelbase", self.wheelbase),
            ("max_steer_angle", self.max_steer_angle),
            ("max_speed", self.max_speed),
            ("throttle_gain", self.throttle_gain),
            ("drag", self.drag),
            ("tire_stiffness", self.tire_stiffness),
            ("k_low", self.k_low),
            ("k_high", self.k_high),
            ("sensor_bias", self.sensor_bias),
            ("sensor_noise_sd", self.sensor_noise_sd),
        ];
        for (name, v) in finite {
            require(v.is_finite(), name, "must be finite")?;
        }
        require(self.timestep > 0.0, "timestep", "must be > 0")?;
        require(self.wheelbase > 0.0, "wheelbase", "must be > 0")?;
        require(
            self.max_steer_angle > 0.0 && self.max_steer_angle < std::f64::consts::FRAC_PI_2,
            "max_steer_angle",
            "must lie in (0, pi/2)",
        )?;
        require(self.max_speed > 0.0, "max_speed", "must be > 0")?;
        require(self.throttle_gain >= 0.0, "throttle_gain", "must be >= 0")?;
        require(self.drag >= 0.0, "drag", "must be >= 0")?;
        require(
            self.drag * self.timestep <= 1.0,
            "drag",
            "drag * timestep must be <= 1",
        )?;
        require(self.tire_stiffness > 0.0, "tire_stiffness", "must be > 0")?;
        require(self.k_low > 0.0, "k_low", "must be > 0")?;
        require(self.k_low < self.k_high, "k_low", "must be < k_high")?;
        require(
            self.sensor_noise_sd >= 0.0,
            "sensor_noise_sd",
            "must be >= 0",
        )?;
        Ok(())
    }

    /// Speed the longitudinal law converges to at full throttle.
    pub fn terminal_speed(&self) -> f64 {
        if self.drag > 0.0 {
            self.throttle_gain / self.drag
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Counter-clockwise from the +x axis, radians.
    pub heading: f64,
    pub speed: f64,
    pub time: f64,
    /// Realized yaw rate, rad/s (lagging state of the dynamic engine).
    pub yaw_rate: f64,
}

/// Normalized actuator command. Positive steering turns counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DrivingCommand {
    pub steering: f64,
    pub throttle: f64,
}

impl DrivingCommand {
    pub fn new(steering: f64, throttle: f64) -> Self {
        DrivingCommand { steering, throttle }.clipped()
    }

    pub fn clipped(self) -> Self {
        DrivingCommand {
            steering: self.steering.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(0.0, 1.0),
        }
    }
}

/// Advances the vehicle by one timestep.
pub fn step(state: &VehicleState, cmd: DrivingCommand, cfg: &SimulatorConfig) -> VehicleState {
    let cmd = cmd.clipped();
    let dt = cfg.timestep;
    let v = state.speed;
    let commanded_yaw = v / cfg.wheelbase * (cmd.steering * cfg.max_steer_angle).tan();
    let yaw_rate = match cfg.engine {
        Engine::Kinematic => commanded_yaw,
        Engine::Dynamic => {
            let rate = cfg.tire_stiffness * v / cfg.wheelbase;
            let blend = 1.0 - (-rate * dt).exp();
            state.yaw_rate + blend * (commanded_yaw - state.yaw_rate)
        }
    };
    let (sin, cos) = state.heading.sin_cos();
    VehicleState {
        x: state.x + v * cos * dt,
        y: state.y + v * sin * dt,
        heading: state.heading + yaw_rate * dt,
        speed: (v + (cfg.throttle_gain * cmd.throttle - cfg.drag * v) * dt).max(0.0),
        time: state.time + dt,
        yaw_rate,
    }
}
