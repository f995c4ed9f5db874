use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CombinedFeatureMap, MapError};
use crate::cell::{Bounds, CellKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    FailureProbability,
    LackOfQuality,
}

impl MetricKind {
    pub const ALL: [MetricKind; 2] = [MetricKind::FailureProbability, MetricKind::LackOfQuality];

    pub fn slug(self) -> &'static str {
        match self {
            MetricKind::FailureProbability => "fp",
            MetricKind::LackOfQuality => "loq",
        }
    }
}

/// Min-max scaling of maximum lateral positions into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    /// Scope covering every record of every given map.
    pub fn from_maps<'a>(maps: impl IntoIterator<Item = &'a CombinedFeatureMap>) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for m in maps {
            for (_, r) in m.records() {
                min = min.min(r.max_lateral_position);
                max = max.max(r.max_lateral_position);
            }
        }
        if min > max {
            Normalization { min: 0.0, max: 0.0 }
        } else {
            Normalization { min, max }
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (x - self.min) / span
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStatistic {
    pub failure_probability: f64,
    /// Mean over contributing maps of each map's mean normalized maximum
    /// lateral position.
    pub mean_max_lp: f64,
    pub n_tests: usize,
    pub n_fail: usize,
    pub contributing_maps: usize,
}

/// Union of a native map with tests migrated onto the same simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionMap {
    pub map: CombinedFeatureMap,
    pub stats: BTreeMap<CellKey, CellStatistic>,
    pub normalization: Normalization,
}

/// Pools the maps cell by cell. Failure probability is the pooled failure
/// count over the pooled test count; the quality metric is the plain mean of
/// the per-map cell means.
pub fn union_maps(maps: &[CombinedFeatureMap], norm: &Normalization) -> Result<UnionMap, MapError> {
    let first = maps.first().ok_or(MapError::NoMaps)?;
    for m in &maps[1..] {
        first.check_binning(m)?;
        if m.simulator != first.simulator {
            return Err(MapError::MismatchedTestSets(format!(
                "records executed on {} and {}",
                first.simulator, m.simulator
            )));
        }
    }
    let mut pooled = CombinedFeatureMap::new(
        first.simulator.clone(),
        first.curvature_bin_width,
        first.turn_threshold_deg,
    );
    let mut counts: BTreeMap<CellKey, (usize, usize, f64, usize)> = BTreeMap::new();
    for m in maps {
        for (key, records) in &m.cells {
            let n = records.len();
            let n_fail = records.iter().filter(|r| r.is_failure()).count();
            let mean = records
                .iter()
                .map(|r| norm.apply(r.max_lateral_position))
                .sum::<f64>()
                / n as f64;
            let c = counts.entry(*key).or_insert((0, 0, 0.0, 0));
            c.0 += n;
            c.1 += n_fail;
            c.2 += mean;
            c.3 += 1;
            for r in records {
                pooled.insert(r.clone(), m.roads[&r.test_id].clone());
            }
        }
        pooled.excluded.extend(m.excluded.iter().cloned());
        pooled.bounds = match (pooled.bounds, m.bounds) {
            (Some(x), Some(y)) => Some(x.union(y)),
            (x, y) => x.or(y),
        };
    }
    let stats = counts
        .into_iter()
        .map(|(k, (n, n_fail, mean_sum, contributing))| {
            (
                k,
                CellStatistic {
                    failure_probability: n_fail as f64 / n as f64,
                    mean_max_lp: mean_sum / contributing as f64,
                    n_tests: n,
                    n_fail,
                    contributing_maps: contributing,
                },
            )
        })
        .collect();
    Ok(UnionMap {
        map: pooled,
        stats,
        normalization: *norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellValue {
    pub value: f64,
    pub n_tests: usize,
    /// Set when some input map had no valid execution for this cell.
    #[serde(default)]
    pub flagged: bool,
}

/// A single metric per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueMap {
    pub label: String,
    pub metric: MetricKind,
    pub curvature_bin_width: f64,
    pub bounds: Option<Bounds>,
    pub cells: BTreeMap<CellKey, CellValue>,
}

impl UnionMap {
    pub fn values(&self, metric: MetricKind) -> ValueMap {
        let cells = self
            .stats
            .iter()
            .map(|(k, s)| {
                let value = match metric {
                    MetricKind::FailureProbability => s.failure_probability,
                    MetricKind::LackOfQuality => s.mean_max_lp,
                };
                (
                    *k,
                    CellValue {
                        value,
                        n_tests: s.n_tests,
                        flagged: false,
                    },
                )
            })
            .collect();
        ValueMap {
            label: self.map.simulator.clone(),
            metric,
            curvature_bin_width: self.map.curvature_bin_width,
            bounds: self.map.bounds,
            cells,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissingCells {
    /// Any difference in cell sets is an error.
    Reject,
    /// A cell absent from some maps is merged from the others and flagged.
    UseRemaining,
}

/// Conservative merge: product of failure probabilities, minimum of
/// lack-of-quality values.
pub fn merge_maps(
    maps: &[ValueMap],
    missing: MissingCells,
    label: &str,
) -> Result<ValueMap, MapError> {
    let first = maps.first().ok_or(MapError::NoMaps)?;
    for m in &maps[1..] {
        if m.metric != first.metric {
            return Err(MapError::MismatchedMetric);
        }
        if m.curvature_bin_width != first.curvature_bin_width {
            return Err(MapError::MismatchedBinning(format!(
                "bin width {} vs {}",
                m.curvature_bin_width, first.curvature_bin_width
            )));
        }
    }
    let all_keys: BTreeSet<CellKey> = maps.iter().flat_map(|m| m.cells.keys().copied()).collect();
    if missing == MissingCells::Reject {
        if let Some(m) = maps.iter().find(|m| m.cells.len() != all_keys.len()) {
            let absent: Vec<String> = all_keys
                .iter()
                .filter(|k| !m.cells.contains_key(k))
                .map(|k| k.to_string())
                .collect();
            return Err(MapError::MismatchedCells(format!(
                "{} lacks {}",
                m.label,
                absent.join(", ")
            )));
        }
    }
    let cells = all_keys
        .into_iter()
        .map(|k| {
            let present: Vec<&CellValue> = maps.iter().filter_map(|m| m.cells.get(&k)).collect();
            let value = match first.metric {
                MetricKind::FailureProbability => present.iter().map(|c| c.value).product(),
                MetricKind::LackOfQuality => present
                    .iter()
                    .map(|c| c.value)
                    .fold(f64::INFINITY, f64::min),
            };
            let cell = CellValue {
                value,
                n_tests: present.iter().map(|c| c.n_tests).max().unwrap_or(0),
                flagged: present.len() < maps.len() || present.iter().any(|c| c.flagged),
            };
            (k, cell)
        })
        .collect();
    let bounds = maps.iter().filter_map(|m| m.bounds).reduce(Bounds::union);
    Ok(ValueMap {
        label: label.to_string(),
        metric: first.metric,
        curvature_bin_width: first.curvature_bin_width,
        bounds,
        cells,
    })
}

/// Twin failure labels: a cell fails when its failure probability is
/// strictly positive. Only occupied cells get a label.
pub fn binarize_twin(map: &ValueMap) -> Result<BTreeMap<CellKey, bool>, MapError> {
    if map.metric != MetricKind::FailureProbability {
        return Err(MapError::MismatchedMetric);
    }
    Ok(map.cells.iter().map(|(k, c)| (*k, c.value > 0.0)).collect())
}

/// Values of the cells present in both maps, in key order.
pub fn aligned_values(a: &ValueMap, b: &ValueMap) -> (Vec<CellKey>, Vec<f64>, Vec<f64>) {
    let mut keys = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, ca) in &a.cells {
        if let Some(cb) = b.cells.get(k) {
            keys.push(*k);
            xs.push(ca.value);
            ys.push(cb.value);
        }
    }
    (keys, xs, ys)
}
