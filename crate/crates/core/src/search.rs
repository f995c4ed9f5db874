//! MapElites illumination search: one individual per feature cell, kept by
//! local competition on fitness (lower is more interesting).

use std::collections::BTreeMap;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{Bounds, CellKey, DEFAULT_CURVATURE_BIN_WIDTH};
use crate::dynamics::Outcome;
use crate::error::{require, ConfigError};
use crate::execution::{Execution, Executor};
use crate::road::{generate_with_rng, mutate_with_rng, RoadFeatures, RoadGenParams, RoadSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("cannot select from an empty population")]
    EmptyPopulation,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub population_size: usize,
    pub iterations: usize,
    /// Per-axis bound of a control-point displacement, meters.
    pub mutation_displacement: f64,
    pub mutation_attempts: usize,
    pub curvature_bin_width: f64,
    pub turn_threshold_deg: f64,
    pub seed: u64,
    pub road: RoadGenParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population_size: 20,
            iterations: 150,
            mutation_displacement: 8.0,
            mutation_attempts: 100,
            curvature_bin_width: DEFAULT_CURVATURE_BIN_WIDTH,
            turn_threshold_deg: crate::road::DEFAULT_TURN_THRESHOLD_DEG,
            seed: 0,
            road: RoadGenParams::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        require(self.population_size >= 1, "population_size", "must be >= 1")?;
        require(
            self.mutation_displacement.is_finite() && self.mutation_displacement >= 0.0,
            "mutation_displacement",
            "must be finite and >= 0",
        )?;
        require(
            self.mutation_attempts >= 1,
            "mutation_attempts",
            "must be >= 1",
        )?;
        require(
            self.curvature_bin_width.is_finite() && self.curvature_bin_width > 0.0,
            "curvature_bin_width",
            "must be > 0",
        )?;
        require(
            self.turn_threshold_deg.is_finite() && self.turn_threshold_deg >= 0.0,
            "turn_threshold_deg",
            "must be >= 0",
        )?;
        require(self.road.n_ctrl >= 4, "road.n_ctrl", "must be >= 4")?;
        require(
            self.road.samples_per_segment >= 2,
            "road.samples_per_segment",
            "must be >= 2",
        )?;
        require(self.road.lane_width > 0.0, "road.lane_width", "must be > 0")?;
        require(self.road.bbox_side > 0.0, "road.bbox_side", "must be > 0")?;
        require(
            self.road.segment_length > 0.0,
            "road.segment_length",
            "must be > 0",
        )?;
        require(
            self.road.max_attempts >= 1,
            "road.max_attempts",
            "must be >= 1",
        )?;
        Ok(())
    }
}

/// An executed test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub test_id: String,
    pub spec: RoadSpec,
    pub features: RoadFeatures,
    pub fitness: f64,
    pub outcome: Outcome,
    pub max_lateral_position: f64,
    pub steps: usize,
    pub episode_seed: u64,
}

impl Individual {
    pub fn from_execution(spec: RoadSpec, ex: Execution) -> Self {
        Individual {
            test_id: ex.test_id,
            spec,
            features: ex.features,
            fitness: ex.episode.fitness,
            outcome: ex.episode.outcome,
            max_lateral_position: ex.episode.max_lateral_position,
            steps: ex.episode.steps,
            episode_seed: ex.episode_seed,
        }
    }
}

/// What `place_individual` did with a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Placement {
    Inserted,
    Replaced { previous_fitness: f64 },
    Kept { incumbent_fitness: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub simulator: String,
    pub curvature_bin_width: f64,
    pub turn_threshold_deg: f64,
    pub bounds: Option<Bounds>,
    pub cells: BTreeMap<CellKey, Individual>,
}

impl Archive {
    pub fn new(
        simulator: impl Into<String>,
        curvature_bin_width: f64,
        turn_threshold_deg: f64,
    ) -> Self {
        Archive {
            simulator: simulator.into(),
            curvature_bin_width,
            turn_threshold_deg,
            bounds: None,
            cells: BTreeMap::new(),
        }
    }

    pub fn key_of(&self, features: &RoadFeatures) -> CellKey {
        CellKey::from_features(features, self.curvature_bin_width)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Local competition. An empty cell takes the candidate; an occupied cell
/// swaps only when the incumbent is non-negative and strictly fitter
/// (higher) than the candidate. Ties keep the incumbent.
pub fn place_individual(archive: &mut Archive, candidate: Individual) -> (CellKey, Placement) {
    let key = archive.key_of(&candidate.features);
    match archive.bounds.as_mut() {
        Some(b) => b.include(key),
        None => archive.bounds = Some(Bounds::of(key)),
    }
    let decision = match archive.cells.get(&key) {
        None => Placement::Inserted,
        Some(inc) if inc.fitness >= 0.0 && inc.fitness > candidate.fitness => Placement::Replaced {
            previous_fitness: inc.fitness,
        },
        Some(inc) => Placement::Kept {
            incumbent_fitness: inc.fitness,
        },
    };
    if !matches!(decision, Placement::Kept { .. }) {
        archive.cells.insert(key, candidate);
    }
    (key, decision)
}

/// Uniform draw from the population.
pub fn select_individual<'p, T, R: Rng>(
    population: &'p [T],
    rng: &mut R,
) -> Result<&'p T, SearchError> {
    if population.is_empty() {
        return Err(SearchError::EmptyPopulation);
    }
    Ok(&population[rng.random_range(0..population.len())])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Evolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    Placed {
        step: usize,
        phase: Phase,
        test_id: String,
        cell: CellKey,
        fitness: f64,
        outcome: Outcome,
        #[serde(flatten)]
        placement: Placement,
    },
    Skipped {
        step: usize,
        phase: Phase,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRun {
    pub archive: Archive,
    pub log: Vec<LogEntry>,
}

impl SearchRun {
    /// Placement history as JSON lines.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
            .collect()
    }
}

fn place_logged(
    archive: &mut Archive,
    log: &mut Vec<LogEntry>,
    step: usize,
    phase: Phase,
    ind: Individual,
) {
    if ind.outcome == Outcome::Timeout {
        warn!(
            "{}: test {} timed out; not placed",
            archive.simulator, ind.test_id
        );
        log.push(LogEntry::Skipped {
            step,
            phase,
            reason: format!("timeout on test {}", ind.test_id),
        });
        return;
    }
    let (test_id, fitness, outcome) = (ind.test_id.clone(), ind.fitness, ind.outcome);
    let (cell, placement) = place_individual(archive, ind);
    debug!(
        "{} step {step}: {test_id} -> {cell} {placement:?}",
        archive.simulator
    );
    log.push(LogEntry::Placed {
        step,
        phase,
        test_id,
        cell,
        fitness,
        outcome,
        placement,
    });
}

/// Runs the search: a random initial population, each member executed and
/// placed, then `iterations` rounds of select, mutate, execute and place.
/// Generation or mutation failures skip the step; they never abort.
pub fn run_search(executor: &Executor<'_>, cfg: &SearchConfig) -> Result<SearchRun, SearchError> {
    cfg.validate()?;
    let executor = executor.clone().with_turn_threshold(cfg.turn_threshold_deg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut archive = Archive::new(
        executor.simulator.name.clone(),
        cfg.curvature_bin_width,
        cfg.turn_threshold_deg,
    );
    let mut log = Vec::new();

    // Roads are drawn sequentially from the run stream; episodes are
    // independent and run in parallel, then placed in draw order.
    let drawn: Vec<Result<RoadSpec, String>> = (0..cfg.population_size)
        .map(|_| generate_with_rng(&mut rng, &cfg.road).map_err(|e| e.to_string()))
        .collect();
    let executed: Vec<Result<Individual, String>> = drawn
        .par_iter()
        .map(|r| {
            let spec = r.clone()?;
            let ex = executor.execute(&spec).map_err(|e| e.to_string())?;
            Ok(Individual::from_execution(spec, ex))
        })
        .collect();
    let mut population = Vec::with_capacity(cfg.population_size);
    for (step, res) in executed.into_iter().enumerate() {
        match res {
            Ok(ind) => {
                population.push(ind.spec.clone());
                place_logged(&mut archive, &mut log, step, Phase::Initial, ind);
            }
            Err(reason) => {
                warn!(
                    "{}: initial individual {step} skipped: {reason}",
                    archive.simulator
                );
                log.push(LogEntry::Skipped {
                    step,
                    phase: Phase::Initial,
                    reason,
                });
            }
        }
    }

    for it in 0..cfg.iterations {
        let step = cfg.population_size + it;
        let attempt = select_individual(&population, &mut rng)
            .map_err(|e| e.to_string())
            .and_then(|parent| {
                mutate_with_rng(
                    parent,
                    &mut rng,
                    cfg.mutation_displacement,
                    cfg.mutation_attempts,
                )
                .map_err(|e| e.to_string())
            })
            .and_then(|mutant| {
                let ex = executor.execute(&mutant).map_err(|e| e.to_string())?;
                Ok(Individual::from_execution(mutant, ex))
            });
        match attempt {
            Ok(ind) => place_logged(&mut archive, &mut log, step, Phase::Evolution, ind),
            Err(reason) => {
                warn!("{}: iteration {it} skipped: {reason}", archive.simulator);
                log.push(LogEntry::Skipped {
                    step,
                    phase: Phase::Evolution,
                    reason,
                });
            }
        }
    }
    Ok(SearchRun { archive, log })
}
