//! Cell-level comparison of sibling, merged and twin maps, and the report
//! these comparisons end up in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cell::CellKey;
use crate::featuremap::{aligned_values, CombinedFeatureMap, MetricKind, UnionMap, ValueMap};
use crate::stats::offline::DistributionComparison;
use crate::stats::{auc_prc, pearson, PairedSeries};

/// One row of a results table. Fields that do not apply to a comparison
/// kind are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonRow {
    pub label: String,
    pub reference: String,
    pub metric: String,
    pub distance: Option<f64>,
    pub wilcoxon_p: Option<f64>,
    pub pearson_r: Option<f64>,
    pub pearson_p: Option<f64>,
    pub auc_prc: Option<f64>,
    pub n_cells: usize,
    pub n_samples: usize,
    /// Why a statistic is missing, if one is.
    pub note: Option<String>,
}

impl ComparisonRow {
    fn empty(label: &str, reference: &str, metric: &str) -> Self {
        ComparisonRow {
            label: label.to_string(),
            reference: reference.to_string(),
            metric: metric.to_string(),
            distance: None,
            wilcoxon_p: None,
            pearson_r: None,
            pearson_p: None,
            auc_prc: None,
            n_cells: 0,
            n_samples: 0,
            note: None,
        }
    }

    fn add_note(&mut self, note: String) {
        self.note = Some(match self.note.take() {
            Some(n) => format!("{n}; {note}"),
            None => note,
        });
    }

    pub fn from_offline(c: &DistributionComparison) -> Self {
        let mut row = Self::empty(&c.label, &c.reference, "steering_error");
        row.distance = Some(c.distance);
        row.wilcoxon_p = Some(c.wilcoxon_p);
        row.n_cells = c.wilcoxon.n;
        row.n_samples = c.n_samples;
        row
    }
}

/// Pearson correlation between `candidate` and `reference` over their shared
/// cells, and AUC-PRC of the candidate values as predictors of the twin's
/// failing cells.
pub fn compare_maps(
    candidate: &ValueMap,
    reference: &ValueMap,
    twin_labels: &BTreeMap<CellKey, bool>,
) -> ComparisonRow {
    let mut row = ComparisonRow::empty(&candidate.label, &reference.label, candidate.metric.slug());
    let (keys, xs, ys) = aligned_values(candidate, reference);
    row.n_cells = keys.len();
    row.n_samples = keys.iter().map(|k| candidate.cells[k].n_tests).sum();
    let key_names = keys.iter().map(CellKey::to_string).collect();
    match PairedSeries::new(key_names, xs, ys).and_then(|p| pearson(&p)) {
        Ok(r) => {
            row.pearson_r = Some(r.r);
            row.pearson_p = Some(r.p_value);
        }
        Err(e) => row.add_note(format!("pearson: {e}")),
    }
    let (scores, labels): (Vec<f64>, Vec<bool>) = candidate
        .cells
        .iter()
        .filter_map(|(k, c)| twin_labels.get(k).map(|l| (c.value, *l)))
        .unzip();
    match auc_prc(&scores, &labels) {
        Ok(a) => row.auc_prc = Some(a),
        Err(e) => row.add_note(format!("auc_prc: {e}")),
    }
    row
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSummary {
    pub label: String,
    pub n_cells: usize,
    pub n_tests: usize,
    /// Cells with failure probability above zero.
    pub n_failing_cells: usize,
}

impl MapSummary {
    pub fn of(fp: &ValueMap) -> Self {
        MapSummary {
            label: fp.label.clone(),
            n_cells: fp.cells.len(),
            n_tests: fp.cells.values().map(|c| c.n_tests).sum(),
            n_failing_cells: fp.cells.values().filter(|c| c.value > 0.0).count(),
        }
    }
}

/// Results of an experiment. Contains no timestamps, so identical inputs
/// give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub seed: u64,
    pub siblings: Vec<String>,
    pub twin: String,
    pub maps: Vec<MapSummary>,
    /// Sibling and merged maps against the twin map, per metric.
    pub online: Vec<ComparisonRow>,
    /// Offline steering-error distributions against the twin's.
    pub offline: Vec<ComparisonRow>,
    /// Tests left out of a map because their episode timed out.
    pub excluded: BTreeMap<String, Vec<String>>,
}

impl EvaluationReport {
    pub fn online_row(&self, label: &str, metric: MetricKind) -> Option<&ComparisonRow> {
        self.online
            .iter()
            .find(|r| r.label == label && r.metric == metric.slug())
    }

    pub fn offline_row(&self, label: &str) -> Option<&ComparisonRow> {
        self.offline.iter().find(|r| r.label == label)
    }
}

/// All records of `maps` in one map, labelled `label`.
pub fn pool_maps(maps: &[CombinedFeatureMap], label: &str) -> Option<CombinedFeatureMap> {
    let first = maps.first()?;
    let mut out =
        CombinedFeatureMap::new(label, first.curvature_bin_width, first.turn_threshold_deg);
    for m in maps {
        for (_, r) in m.records() {
            out.insert(r.clone(), m.roads[&r.test_id].clone());
        }
    }
    Some(out)
}

/// Value map of a union map under its own label.
pub fn labelled_values(u: &UnionMap, metric: MetricKind, label: &str) -> ValueMap {
    let mut v = u.values(metric);
    v.label = label.to_string();
    v
}
