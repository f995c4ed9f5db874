//! Offline evaluation: the model under test replays the observations an
//! autopilot recorded on each simulator, and its steering is compared with
//! the autopilot's.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    make_density, wasserstein_1d, wilcoxon_signed_rank, PairedSeries, StatsError, WilcoxonResult,
};
use crate::dynamics::{Driver, DrivingModelConfig, Observation};
use crate::error::{require, ConfigError};
use crate::execution::{Executor, Simulator};
use crate::road::{generate_random_road, RoadError, RoadGenParams, RoadSpec};
use crate::seeds::derive_seed;

/// One recorded step: what the vehicle saw and how the autopilot steered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledObservation {
    pub observation: Observation,
    pub speed: f64,
    pub autopilot_steering: f64,
}

/// Autopilot recordings on one simulator, one sequence per road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutopilotDataset {
    pub simulator: String,
    pub episodes: Vec<Vec<LabeledObservation>>,
}

impl AutopilotDataset {
    pub fn n_samples(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    /// `|model - autopilot|` steering.
    pub value: f64,
    pub source: String,
}

/// Steering errors of the model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub source: String,
    pub errors: Vec<f64>,
    /// `model - autopilot`, same order as `errors`.
    pub signed: Vec<f64>,
}

impl ErrorSeries {
    pub fn samples(&self) -> Vec<ErrorSample> {
        self.errors
            .iter()
            .map(|&value| ErrorSample {
                value,
                source: self.source.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineSettings {
    /// Distinct roads; each is driven in both directions.
    pub n_roads: usize,
    pub n_bins: usize,
    pub range: (f64, f64),
}

impl OfflineSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        require(self.n_roads >= 1, "n_roads", "must be >= 1")?;
        require(self.n_bins >= 1, "n_bins", "must be >= 1")?;
        let (lo, hi) = self.range;
        require(
            lo.is_finite() && hi.is_finite() && lo < hi,
            "range",
            "must be a finite [lo, hi] with lo < hi",
        )?;
        Ok(())
    }
}

impl Default for OfflineSettings {
    fn default() -> Self {
        OfflineSettings {
            n_roads: 10,
            n_bins: 25,
            range: (0.0, 1.0),
        }
    }
}

/// `n_roads` seeded random roads followed by their reversals.
pub fn offline_roads(
    global_seed: u64,
    n_roads: usize,
    params: &RoadGenParams,
) -> Result<Vec<RoadSpec>, RoadError> {
    let forward = (0..n_roads)
        .map(|i| {
            generate_random_road(
                derive_seed(global_seed, &["offline", "road", &i.to_string()]),
                params,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let backward: Vec<RoadSpec> = forward.iter().map(RoadSpec::reversed).collect();
    Ok(forward.into_iter().chain(backward).collect())
}

/// Drives every road with the autopilot on `simulator` and records each step.
pub fn collect_autopilot_dataset(
    simulator: &Simulator,
    roads: &[RoadSpec],
    global_seed: u64,
) -> Result<AutopilotDataset, RoadError> {
    let autopilot = DrivingModelConfig::autopilot();
    let executor = Executor::new(&autopilot, simulator, global_seed);
    let episodes = roads
        .par_iter()
        .map(|spec| {
            let ex = executor.execute_with(spec, None, true)?;
            let mut speed = 0.0;
            Ok(ex
                .episode
                .trace
                .iter()
                .map(|t| {
                    let s = LabeledObservation {
                        observation: t.observation,
                        speed,
                        autopilot_steering: t.command.steering,
                    };
                    speed = t.state.speed;
                    s
                })
                .collect())
        })
        .collect::<Result<Vec<_>, RoadError>>()?;
    Ok(AutopilotDataset {
        simulator: simulator.name.clone(),
        episodes,
    })
}

/// Replays `model` over each recorded sequence of `dataset`. The model's
/// state is reset per sequence.
pub fn model_errors(
    model: &DrivingModelConfig,
    simulator: &Simulator,
    dataset: &AutopilotDataset,
    seed: u64,
) -> Result<ErrorSeries, StatsError> {
    if dataset.n_samples() == 0 {
        return Err(StatsError::EmptyDataset);
    }
    let mut errors = Vec::with_capacity(dataset.n_samples());
    let mut signed = Vec::with_capacity(dataset.n_samples());
    for (i, episode) in dataset.episodes.iter().enumerate() {
        let mut driver = Driver::new(
            model,
            derive_seed(seed, &["offline", &dataset.simulator, &i.to_string()]),
        );
        for s in episode {
            let cmd = driver.drive(&s.observation, s.speed, &simulator.config);
            let d = cmd.steering - s.autopilot_steering;
            signed.push(d);
            errors.push(d.abs());
        }
    }
    Ok(ErrorSeries {
        source: dataset.simulator.clone(),
        errors,
        signed,
    })
}

/// Concatenation of the sibling error lists, each truncated to the shortest
/// list's length so every sibling weighs the same.
pub fn pool_errors(series: &[ErrorSeries], label: &str) -> Result<ErrorSeries, StatsError> {
    let n = series
        .iter()
        .map(|s| s.errors.len())
        .min()
        .ok_or(StatsError::EmptyDataset)?;
    if n == 0 {
        return Err(StatsError::EmptyDataset);
    }
    let mut errors = Vec::with_capacity(n * series.len());
    let mut signed = Vec::with_capacity(n * series.len());
    for s in series {
        errors.extend_from_slice(&s.errors[..n]);
        signed.extend_from_slice(&s.signed[..n]);
    }
    Ok(ErrorSeries {
        source: label.to_string(),
        errors,
        signed,
    })
}

/// Per-sibling error series plus the pooled one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineErrors {
    pub siblings: Vec<ErrorSeries>,
    pub pooled: ErrorSeries,
}

pub fn offline_eval(
    model: &DrivingModelConfig,
    siblings: &[(&Simulator, &AutopilotDataset)],
    seed: u64,
    pooled_label: &str,
) -> Result<OfflineErrors, StatsError> {
    let series = siblings
        .iter()
        .map(|(sim, ds)| model_errors(model, sim, ds, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let pooled = pool_errors(&series, pooled_label)?;
    Ok(OfflineErrors {
        siblings: series,
        pooled,
    })
}

/// Distance between two error distributions and the Wilcoxon test on their
/// paired bin masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionComparison {
    pub label: String,
    pub reference: String,
    pub distance: f64,
    pub wilcoxon_p: f64,
    pub wilcoxon: WilcoxonResult,
    pub n_samples: usize,
    pub n_reference_samples: usize,
}

pub fn compare_errors(
    a: &ErrorSeries,
    reference: &ErrorSeries,
    settings: &OfflineSettings,
) -> Result<DistributionComparison, StatsError> {
    let distance = wasserstein_1d(&a.errors, &reference.errors)?;
    let da = make_density(&a.errors, settings.n_bins, settings.range)?;
    let db = make_density(&reference.errors, settings.n_bins, settings.range)?;
    let paired = PairedSeries::unkeyed(da.probabilities, db.probabilities)?;
    let wilcoxon = wilcoxon_signed_rank(&paired);
    Ok(DistributionComparison {
        label: a.source.clone(),
        reference: reference.source.clone(),
        distance,
        wilcoxon_p: wilcoxon.p_value,
        wilcoxon,
        n_samples: a.errors.len(),
        n_reference_samples: reference.errors.len(),
    })
}
