//! Error densities and the comparison statistics: 1-D Wasserstein distance,
//! Wilcoxon signed-rank test, Pearson correlation and AUC-PRC.

pub mod offline;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no samples")]
    EmptySamples,
    #[error("number of bins must be positive")]
    ZeroBins,
    #[error("invalid range [{0}, {1}]")]
    BadRange(f64, f64),
    #[error("paired series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("zero variance on one side")]
    DegenerateVariance,
    #[error("no positive labels")]
    NoPositives,
    #[error("no negative labels")]
    NoNegatives,
    #[error("empty dataset")]
    EmptyDataset,
}

/// Normalized histogram over fixed, strictly increasing edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub bin_edges: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Bins samples on `n_bins` equal-width bins over `range`. Samples outside
/// the range fall into the nearest edge bin, so the masses always sum to 1.
pub fn make_density(
    samples: &[f64],
    n_bins: usize,
    range: (f64, f64),
) -> Result<Density, StatsError> {
    if n_bins == 0 {
        return Err(StatsError::ZeroBins);
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(StatsError::BadRange(lo, hi));
    }
    if samples.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    let width = (hi - lo) / n_bins as f64;
    let bin_edges = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        let idx = ((x - lo) / width).floor();
        let idx = if idx.is_nan() {
            0
        } else {
            idx.clamp(0.0, (n_bins - 1) as f64) as usize
        };
        counts[idx] += 1;
    }
    let n = samples.len() as f64;
    Ok(Density {
        bin_edges,
        probabilities: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// `integral |CDF_a - CDF_b| dx` for the empirical distributions of the two
/// samples, evaluated exactly between consecutive sample values.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    all.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    for w in all.windows(2) {
        let x = w[0];
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        total += (i as f64 / na - j as f64 / nb).abs() * (w[1] - x);
    }
    Ok(total)
}

/// Two aligned value sequences, e.g. the same cells of two maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSeries {
    pub keys: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(keys: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        if x.len() != y.len() {
            return Err(StatsError::LengthMismatch(x.len(), y.len()));
        }
        if keys.len() != x.len() {
            return Err(StatsError::LengthMismatch(keys.len(), x.len()));
        }
        Ok(PairedSeries { keys, x, y })
    }

    /// Pairs keyed by position.
    pub fn unkeyed(x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        let keys = (0..x.len()).map(|i| i.to_string()).collect();
        Self::new(keys, x, y)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    /// Fewer than the minimum number of non-zero differences; p is 1.
    TooFew,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

pub const WILCOXON_MIN_N: usize = 6;
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on `x - y`. Zero differences are
/// dropped; with fewer than six remaining, p is 1. Up to 25 differences the
/// null distribution is enumerated exactly (ties handled through doubled
/// ranks); above that a tie-corrected normal approximation with continuity
/// correction is used.
pub fn wilcoxon_signed_rank(paired: &PairedSeries) -> WilcoxonResult {
    let diffs: Vec<f64> = paired
        .x
        .iter()
        .zip(&paired.y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    if n < WILCOXON_MIN_N {
        return WilcoxonResult {
            statistic: w_plus,
            n,
            p_value: 1.0,
            method: WilcoxonMethod::TooFew,
        };
    }
    if n <= WILCOXON_EXACT_MAX_N {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let p = exact_signed_rank_p(&doubled, (2.0 * w_plus).round() as usize);
        return WilcoxonResult {
            statistic: w_plus,
            n,
            p_value: p,
            method: WilcoxonMethod::Exact,
        };
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = 2.0 * (1.0 - Normal::standard().cdf(z));
    WilcoxonResult {
        statistic: w_plus,
        n,
        p_value: p.min(1.0),
        method: WilcoxonMethod::Normal,
    }
}

/// Exact two-sided p for a doubled-rank statistic, counting subsets by sum.
fn exact_signed_rank_p(doubled_ranks: &[usize], observed: usize) -> f64 {
    let max_sum: usize = doubled_ranks.iter().sum();
    let mut counts = vec![0u64; max_sum + 1];
    counts[0] = 1;
    for &r in doubled_ranks {
        for s in (r..=max_sum).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total = (1u64 << doubled_ranks.len()) as f64;
    let lower: u64 = counts[..=observed].iter().sum();
    let upper: u64 = counts[observed..].iter().sum();
    (2.0 * lower.min(upper) as f64 / total).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearsonResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Product-moment correlation with a two-sided p-value from Student's t
/// with `n - 2` degrees of freedom.
pub fn pearson(paired: &PairedSeries) -> Result<PearsonResult, StatsError> {
    let n = paired.len();
    if n < 3 {
        return Err(StatsError::TooFewPairs { needed: 3, got: n });
    }
    let nf = n as f64;
    let mx = paired.x.iter().sum::<f64>() / nf;
    let my = paired.y.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in paired.x.iter().zip(&paired.y) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(PearsonResult { r, p_value, n })
}

/// Area under the precision-recall curve. Thresholds sweep the distinct
/// scores in descending order (tied scores enter together); the area sums
/// `(recall_k - recall_{k-1}) * precision_k`.
pub fn auc_prc(scores: &[f64], labels: &[bool]) -> Result<f64, StatsError> {
    if scores.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(StatsError::NoPositives);
    }
    if positives == labels.len() {
        return Err(StatsError::NoNegatives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let p = positives as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let recall = tp as f64 / p;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}
