//! Executes road test cases on a named simulator with reproducible seeds.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::dynamics::{
    run_episode, DrivingModelConfig, EpisodeLimits, EpisodeResult, SimulatorConfig,
};
use crate::road::{interpolate_catmull_rom, road_features, RoadError, RoadFeatures, RoadSpec};
use crate::seeds::{derive_seed, short_digest};

/// A named simulator. Serialized flat: `name` next to the physics fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simulator {
    pub name: String,
    #[serde(flatten)]
    pub config: SimulatorConfig,
}

// Flattening would silently accept unknown physics keys, so the config is
// split off by hand and parsed strictly.
impl<'de> Deserialize<'de> for Simulator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut fields = serde_json::Map::deserialize(d)?;
        let name = match fields.remove("name") {
            Some(serde_json::Value::String(s)) => s,
            Some(_) => return Err(D::Error::custom("name must be a string")),
            None => return Err(D::Error::missing_field("name")),
        };
        let config = SimulatorConfig::deserialize(serde_json::Value::Object(fields))
            .map_err(D::Error::custom)?;
        Ok(Simulator { name, config })
    }
}

impl Simulator {
    pub fn new(name: impl Into<String>, config: SimulatorConfig) -> Self {
        Simulator {
            name: name.into(),
            config,
        }
    }

    /// Digest of the physics and sensor parameters. Two simulators with the
    /// same parameters draw the same random streams.
    pub fn physics_key(&self) -> String {
        short_digest(&serde_json::to_vec(&self.config).expect("config serializes"))
    }
}

/// Result of running one test case once.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub test_id: String,
    pub features: RoadFeatures,
    pub episode_seed: u64,
    pub episode: EpisodeResult,
}

#[derive(Debug, Clone)]
pub struct Executor<'a> {
    pub model: &'a DrivingModelConfig,
    pub simulator: &'a Simulator,
    pub global_seed: u64,
    pub turn_threshold_deg: f64,
    /// Overrides the road-length based step budget.
    pub max_steps: Option<usize>,
}

impl<'a> Executor<'a> {
    pub fn new(model: &'a DrivingModelConfig, simulator: &'a Simulator, global_seed: u64) -> Self {
        Executor {
            model,
            simulator,
            global_seed,
            turn_threshold_deg: crate::road::DEFAULT_TURN_THRESHOLD_DEG,
            max_steps: None,
        }
    }

    pub fn with_turn_threshold(mut self, deg: f64) -> Self {
        self.turn_threshold_deg = deg;
        self
    }

    /// Seed of the episode stream for (test, simulator).
    pub fn episode_seed(&self, test_id: &str) -> u64 {
        derive_seed(
            self.global_seed,
            &["episode", &self.simulator.physics_key(), test_id],
        )
    }

    pub fn execute(&self, spec: &RoadSpec) -> Result<Execution, RoadError> {
        self.execute_with(spec, None, false)
    }

    /// Runs with an explicit episode seed and optional trace recording.
    pub fn execute_with(
        &self,
        spec: &RoadSpec,
        seed: Option<u64>,
        trace: bool,
    ) -> Result<Execution, RoadError> {
        let poly = interpolate_catmull_rom(spec)?;
        let test_id = spec.content_id();
        let features = road_features(&poly, self.turn_threshold_deg);
        let episode_seed = seed.unwrap_or_else(|| self.episode_seed(&test_id));
        let mut limits = EpisodeLimits::for_road(&poly, &self.simulator.config);
        if let Some(m) = self.max_steps {
            limits.max_steps = m;
        }
        limits.record_trace = trace;
        let episode = run_episode(
            self.model,
            &self.simulator.config,
            &poly,
            spec.lane_width,
            &limits,
            episode_seed,
        );
        Ok(Execution {
            test_id,
            features,
            episode_seed,
            episode,
        })
    }
}
