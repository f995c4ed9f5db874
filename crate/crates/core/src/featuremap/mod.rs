//! Multi-individual feature maps: combining search runs, migrating tests to
//! another simulator, and the union / merge algebra over cell statistics.

mod algebra;
pub mod export;

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{Bounds, CellKey};
use crate::dynamics::Outcome;
use crate::execution::Executor;
use crate::road::{RoadError, RoadFeatures, RoadSpec};
use crate::search::{Archive, Individual};

pub use algebra::{
    aligned_values, binarize_twin, merge_maps, union_maps, CellStatistic, CellValue, MetricKind,
    MissingCells, Normalization, UnionMap, ValueMap,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("maps use different binning ({0})")]
    MismatchedBinning(String),
    #[error("maps hold different test sets ({0})")]
    MismatchedTestSets(String),
    #[error("maps cover different cells ({0})")]
    MismatchedCells(String),
    #[error("maps carry different metrics")]
    MismatchedMetric,
    #[error("no maps given")]
    NoMaps,
    #[error("road {test_id}: {source}")]
    Road { test_id: String, source: RoadError },
}

/// One executed test in a feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test_id: String,
    pub simulator: String,
    pub outcome: Outcome,
    pub fitness: f64,
    pub max_lateral_position: f64,
    pub features: RoadFeatures,
    pub episode_seed: u64,
}

impl TestRecord {
    pub fn is_failure(&self) -> bool {
        self.outcome == Outcome::Oob
    }

    pub fn from_individual(ind: &Individual, simulator: &str) -> Self {
        TestRecord {
            test_id: ind.test_id.clone(),
            simulator: simulator.to_string(),
            outcome: ind.outcome,
            fitness: ind.fitness,
            max_lateral_position: ind.max_lateral_position,
            features: ind.features,
            episode_seed: ind.episode_seed,
        }
    }
}

/// Feature map holding every executed test of one simulator, possibly
/// several per cell. Roads are stored once, keyed by test id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedFeatureMap {
    pub simulator: String,
    pub curvature_bin_width: f64,
    pub turn_threshold_deg: f64,
    pub bounds: Option<Bounds>,
    pub cells: BTreeMap<CellKey, Vec<TestRecord>>,
    pub roads: BTreeMap<String, RoadSpec>,
    /// Test ids whose execution timed out and were left out.
    #[serde(default)]
    pub excluded: Vec<String>,
}

impl CombinedFeatureMap {
    pub fn new(
        simulator: impl Into<String>,
        curvature_bin_width: f64,
        turn_threshold_deg: f64,
    ) -> Self {
        CombinedFeatureMap {
            simulator: simulator.into(),
            curvature_bin_width,
            turn_threshold_deg,
            bounds: None,
            cells: BTreeMap::new(),
            roads: BTreeMap::new(),
            excluded: Vec::new(),
        }
    }

    pub fn key_of(&self, features: &RoadFeatures) -> CellKey {
        CellKey::from_features(features, self.curvature_bin_width)
    }

    pub fn insert(&mut self, record: TestRecord, spec: RoadSpec) {
        let key = self.key_of(&record.features);
        match self.bounds.as_mut() {
            Some(b) => b.include(key),
            None => self.bounds = Some(Bounds::of(key)),
        }
        self.roads.entry(record.test_id.clone()).or_insert(spec);
        self.cells.entry(key).or_default().push(record);
    }

    pub fn records(&self) -> impl Iterator<Item = (&CellKey, &TestRecord)> {
        self.cells
            .iter()
            .flat_map(|(k, v)| v.iter().map(move |r| (k, r)))
    }

    pub fn n_records(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    /// Sorted multiset of test ids.
    pub fn test_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records().map(|(_, r)| r.test_id.clone()).collect();
        ids.sort();
        ids
    }

    pub fn check_binning(&self, other: &CombinedFeatureMap) -> Result<(), MapError> {
        if self.curvature_bin_width != other.curvature_bin_width
            || self.turn_threshold_deg != other.turn_threshold_deg
        {
            return Err(MapError::MismatchedBinning(format!(
                "bin width {} vs {}, turn threshold {} vs {}",
                self.curvature_bin_width,
                other.curvature_bin_width,
                self.turn_threshold_deg,
                other.turn_threshold_deg
            )));
        }
        Ok(())
    }
}

/// Pools the archives of repeated runs into one map. Axis bounds span the
/// lowest and highest bounds across runs.
pub fn combine_runs(archives: &[Archive]) -> Result<CombinedFeatureMap, MapError> {
    let first = archives.first().ok_or(MapError::NoMaps)?;
    let mut out = CombinedFeatureMap::new(
        first.simulator.clone(),
        first.curvature_bin_width,
        first.turn_threshold_deg,
    );
    for a in archives {
        if a.curvature_bin_width != first.curvature_bin_width
            || a.turn_threshold_deg != first.turn_threshold_deg
        {
            return Err(MapError::MismatchedBinning(format!(
                "archive bin width {} vs {}",
                a.curvature_bin_width, first.curvature_bin_width
            )));
        }
        if a.simulator != first.simulator {
            return Err(MapError::MismatchedTestSets(format!(
                "archives from {} and {}",
                first.simulator, a.simulator
            )));
        }
        for ind in a.cells.values() {
            out.insert(
                TestRecord::from_individual(ind, &a.simulator),
                ind.spec.clone(),
            );
        }
        out.bounds = match (out.bounds, a.bounds) {
            (Some(x), Some(y)) => Some(x.union(y)),
            (x, y) => x.or(y),
        };
    }
    Ok(out)
}

/// Re-executes every test of `map` on the executor's simulator. Records keep
/// their cells since features depend on the road alone. Timeouts are logged
/// and excluded.
pub fn migrate(
    map: &CombinedFeatureMap,
    executor: &Executor<'_>,
) -> Result<CombinedFeatureMap, MapError> {
    let executor = executor.clone().with_turn_threshold(map.turn_threshold_deg);
    let target = executor.simulator.name.clone();
    let runs: Vec<(String, Result<crate::execution::Execution, RoadError>)> = map
        .roads
        .par_iter()
        .map(|(id, spec)| (id.clone(), executor.execute(spec)))
        .collect();
    let mut by_id = BTreeMap::new();
    for (id, res) in runs {
        let ex = res.map_err(|source| MapError::Road {
            test_id: id.clone(),
            source,
        })?;
        by_id.insert(id, ex);
    }

    let mut out = CombinedFeatureMap::new(
        target.clone(),
        map.curvature_bin_width,
        map.turn_threshold_deg,
    );
    for (_, rec) in map.records() {
        let ex = &by_id[&rec.test_id];
        if ex.episode.outcome == Outcome::Timeout {
            warn!(
                "migration to {target}: test {} timed out; excluded",
                rec.test_id
            );
            out.excluded.push(rec.test_id.clone());
            continue;
        }
        let record = TestRecord {
            test_id: rec.test_id.clone(),
            simulator: target.clone(),
            outcome: ex.episode.outcome,
            fitness: ex.episode.fitness,
            max_lateral_position: ex.episode.max_lateral_position,
            features: ex.features,
            episode_seed: ex.episode_seed,
        };
        out.insert(record, map.roads[&rec.test_id].clone());
    }
    Ok(out)
}
