//! Checks shared by the acceptance runner and the regular test targets.
//! Each returns a one-line detail on success and a description of the first
//! violation otherwise.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use dss_core::cell::CellKey;
use dss_core::dynamics::{
    pid_steering, step, throttle_law, DrivingCommand, Engine, Outcome, PidGains, PidState,
    SimulatorConfig, VehicleState,
};
use dss_core::featuremap::{
    merge_maps, union_maps, CellValue, CombinedFeatureMap, MetricKind, MissingCells, Normalization,
    TestRecord, ValueMap,
};
use dss_core::pipeline::{RunManifest, Stage};
use dss_core::road::{
    circumradius, count_turns, generate_random_road, interpolate_catmull_rom, min_radius,
    road_features, Point, RoadFeatures, RoadGenParams, RoadSpec,
};
use dss_core::search::{Archive, LogEntry, Placement};
use dss_core::stats::{auc_prc, pearson, wasserstein_1d, wilcoxon_signed_rank, PairedSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn matches(actual: f64, expected: f64, exact: bool) -> bool {
    if exact {
        actual == expected
    } else {
        (actual - expected).abs() <= 1e-12
    }
}

/// kp, kd, ki, lateral positions fed in order, final steering, exact.
type PidCase = (f64, f64, f64, &'static [f64], f64, bool);

const PID_CASES: &[PidCase] = &[
    (1.0, 0.0, 0.0, &[0.5], 0.5, true),
    (2.0, 0.0, 0.0, &[0.8], 1.0, false),
    (0.35, 6.0, 0.0005, &[0.0, 0.0, 0.0, 0.0, 0.0], 0.0, false),
    (0.5, 2.0, 0.25, &[0.5, 0.25], -0.1875, true),
    (1.0, 1.0, 0.0, &[0.25, 0.5], 0.75, true),
    (1.0, 1.0, 0.0, &[0.5, 0.25], 0.0, true),
    (0.0, 0.0, 1.0, &[0.25, 0.25, 0.25], 0.75, true),
    (0.0, 0.0, 0.5, &[1.0, 1.0, 1.0], 1.0, true),
    (0.0, 0.0, 1.0, &[-0.5, -0.75], -1.0, true),
    (1.0, 0.0, 0.0, &[-0.5], -0.5, true),
    (2.0, 0.0, 0.0, &[-0.8], -1.0, false),
    (0.0, 4.0, 0.0, &[0.0, 0.5], 1.0, true),
    (0.0, 4.0, 0.0, &[0.5, 0.0], -1.0, true),
    (0.35, 6.0, 0.0005, &[0.4], 0.1402, false),
    (0.35, 6.0, 0.0005, &[0.1, 0.12], 0.16211, false),
    (0.35, 6.0, 0.0005, &[0.1, 0.12, 0.11], -0.021335, false),
    (0.7, 6.0, 0.0005, &[0.4], 0.2802, false),
    (0.35, 3.0, 0.0005, &[-0.2, -0.3], -0.40525, false),
    (1.0, 0.5, 0.125, &[0.5, 0.75, 0.25], 0.1875, true),
    (0.25, 0.0, 0.0, &[0.5], 0.125, true),
    (3.0, 1.0, 0.0, &[0.25, 0.375], 1.0, true),
    (0.1, 0.2, 0.3, &[1.0, 2.0, 3.0], 1.0, false),
];

const THROTTLE_CASES: &[(f64, f64, f64, bool)] = &[
    (0.0, 0.0, 1.0, true),
    (1.0, 3.0, 0.0, true),
    (1.0, 0.0, 0.0, true),
    (0.5, 0.0, 0.75, true),
    (0.0, 6.0, 0.75, true),
    (0.0, 8.0, 0.5555555555555556, false),
    (0.0, 8.5, 0.0, true),
    (0.5, 6.0, 0.5, true),
    (0.25, 4.0, 0.8263888888888888, false),
    (-0.5, 6.0, 0.5, true),
    (-1.0, 2.0, 0.0, true),
    (0.75, 3.0, 0.375, true),
    (0.0, 12.0, 0.0, true),
    (0.0, 2.0, 0.9722222222222222, false),
    (0.125, 1.0, 0.9774305555555556, false),
    (0.5, 9.0, 0.0, true),
    (0.0, 4.5, 0.859375, true),
    (0.3, 5.0, 0.7363888888888889, false),
    (0.9, 1.0, 0.18305555555555555, false),
    (0.2, 7.9, 0.5265972222222223, false),
    (0.0, 16.0, 0.0, true),
];

type UnionCase = (&'static [&'static [(bool, f64)]], f64, f64, bool);

const UNION_CASES: &[UnionCase] = &[
    (
        &[
            &[(true, 0.5), (false, 0.5)],
            &[(true, 0.5), (false, 0.5), (false, 0.5)],
        ],
        0.4,
        0.5,
        false,
    ),
    (&[&[(false, 0.4)], &[(false, 0.6)]], 0.0, 0.5, false),
    (&[&[(true, 0.75), (false, 0.25)]], 0.5, 0.5, true),
    (&[&[(false, 0.0)], &[(false, 0.0)]], 0.0, 0.0, true),
    (&[&[(true, 1.0)], &[(true, 1.0)]], 1.0, 1.0, true),
    (
        &[&[(true, 1.0), (true, 0.5)], &[(false, 0.25)]],
        0.6666666666666666,
        0.5,
        false,
    ),
    (
        &[&[(false, 0.2), (false, 0.4)], &[(false, 0.6)]],
        0.0,
        0.45,
        false,
    ),
    (
        &[&[(true, 0.9)], &[(false, 0.1), (false, 0.2), (false, 0.3)]],
        0.25,
        0.55,
        false,
    ),
    (
        &[&[(false, 0.5)], &[(true, 0.5)], &[(false, 0.5)]],
        0.3333333333333333,
        0.5,
        false,
    ),
    (
        &[
            &[(true, 0.125), (true, 0.375)],
            &[(false, 0.5), (true, 0.5)],
            &[(false, 1.0)],
        ],
        0.6,
        0.5833333333333334,
        false,
    ),
    (&[&[(true, 0.9), (false, 0.0)]], 0.5, 0.45, false),
    (
        &[
            &[(false, 0.3), (true, 1.0), (true, 0.75)],
            &[(false, 0.25), (true, 0.0)],
        ],
        0.6,
        0.4041666666666667,
        false,
    ),
    (
        &[
            &[(false, 0.0)],
            &[(false, 0.5), (true, 0.75), (true, 0.75)],
            &[(false, 0.7), (false, 0.0), (false, 0.9), (false, 0.5)],
        ],
        0.25,
        0.3972222222222222,
        false,
    ),
    (
        &[
            &[(true, 0.75), (true, 0.7), (true, 0.3), (true, 0.0)],
            &[(false, 0.7), (false, 0.3), (true, 0.5)],
            &[(false, 0.9)],
        ],
        0.625,
        0.6125,
        false,
    ),
    (
        &[
            &[(false, 0.7), (false, 0.75), (false, 0.0), (true, 0.75)],
            &[(false, 0.0), (false, 0.75), (true, 1.0), (true, 1.0)],
            &[(false, 0.5), (false, 0.1)],
        ],
        0.3,
        0.5125,
        false,
    ),
    (&[&[(false, 0.75)]], 0.0, 0.75, true),
    (
        &[
            &[(false, 0.0), (true, 0.7), (true, 0.25)],
            &[(true, 0.9), (true, 1.0), (false, 1.0), (true, 0.75)],
        ],
        0.7142857142857143,
        0.6145833333333334,
        false,
    ),
    (
        &[
            &[(true, 0.75), (true, 1.0)],
            &[(true, 0.0), (true, 0.7), (false, 0.75)],
            &[(false, 0.7), (true, 0.7)],
        ],
        0.7142857142857143,
        0.6861111111111111,
        false,
    ),
    (
        &[
            &[(true, 0.9), (false, 0.0), (false, 0.7)],
            &[(true, 0.5), (true, 0.25), (true, 0.25)],
            &[(true, 0.5), (true, 0.75), (false, 0.0)],
        ],
        0.6666666666666666,
        0.42777777777777776,
        false,
    ),
    (
        &[
            &[(true, 1.0), (false, 0.5)],
            &[(true, 0.25), (true, 0.1)],
            &[(true, 0.7)],
        ],
        0.8,
        0.5416666666666666,
        false,
    ),
    (
        &[
            &[(true, 0.25), (false, 0.7)],
            &[(true, 0.5), (false, 0.1)],
            &[(false, 0.7)],
        ],
        0.4,
        0.49166666666666664,
        false,
    ),
    (
        &[
            &[(true, 0.7), (false, 0.7)],
            &[(true, 0.5), (true, 0.9)],
            &[(true, 0.5), (true, 0.75), (false, 0.75)],
        ],
        0.7142857142857143,
        0.6888888888888889,
        false,
    ),
];

const MERGE_CASES: &[(&[f64], f64, f64, bool)] = &[
    (&[1.0, 1.0], 1.0, 1.0, true),
    (&[0.5, 0.0], 0.0, 0.0, true),
    (&[0.5, 0.5], 0.25, 0.5, true),
    (&[0.3, 0.7], 0.21, 0.3, false),
    (&[0.0, 0.0], 0.0, 0.0, true),
    (&[1.0, 0.25], 0.25, 0.25, true),
    (&[0.2, 0.4, 0.5], 0.04, 0.2, false),
    (&[0.9, 0.9], 0.81, 0.9, false),
    (&[0.125, 0.5], 0.0625, 0.125, true),
    (&[0.75, 0.75, 0.75], 0.421875, 0.75, true),
    (&[0.6, 0.1], 0.06, 0.1, false),
    (&[1.0, 1.0, 1.0], 1.0, 1.0, true),
    (&[0.05, 0.95], 0.0475, 0.05, false),
    (&[0.33, 0.66], 0.2178, 0.33, false),
    (&[0.5], 0.5, 0.5, true),
    (&[0.8, 0.25, 0.5], 0.1, 0.25, false),
    (&[0.01, 1.0], 0.01, 0.01, false),
    (&[0.4, 0.4], 0.16, 0.4, false),
    (&[0.625, 0.375], 0.234375, 0.375, true),
    (&[0.2, 0.0], 0.0, 0.0, false),
    (&[0.99, 0.98], 0.9702, 0.98, false),
    (&[0.7, 0.3], 0.21, 0.3, false),
];

pub fn dummy_spec() -> RoadSpec {
    RoadSpec::new(vec![
        Point::new(10.0, 10.0),
        Point::new(20.0, 10.0),
        Point::new(30.0, 10.0),
        Point::new(40.0, 10.0),
    ])
    .unwrap()
}

pub fn record(id: &str, simulator: &str, key: CellKey, fail: bool, max_lp: f64) -> TestRecord {
    TestRecord {
        test_id: id.to_string(),
        simulator: simulator.to_string(),
        outcome: if fail { Outcome::Oob } else { Outcome::Success },
        fitness: if fail { -0.5 } else { 0.5 },
        max_lateral_position: max_lp,
        features: RoadFeatures {
            turn_count: key.turns,
            curvature: (key.curvature_bin as f64 + 0.5) * 0.01,
        },
        episode_seed: 0,
    }
}

pub fn one_cell_map(records: &[(bool, f64)], tag: usize) -> CombinedFeatureMap {
    let mut m = CombinedFeatureMap::new("sim", 0.01, 5.0);
    for (i, &(fail, lp)) in records.iter().enumerate() {
        m.insert(
            record(&format!("t{tag}_{i}"), "sim", CellKey::new(1, 3), fail, lp),
            dummy_spec(),
        );
    }
    m
}

fn value_map(label: &str, metric: MetricKind, values: &[(CellKey, f64)]) -> ValueMap {
    ValueMap {
        label: label.to_string(),
        metric,
        curvature_bin_width: 0.01,
        bounds: None,
        cells: values
            .iter()
            .map(|&(k, value)| {
                (
                    k,
                    CellValue {
                        value,
                        n_tests: 1,
                        flagged: false,
                    },
                )
            })
            .collect(),
    }
}

/// Steering law, throttle law, union arithmetic and the merge operators
/// against hand-derived tables.
pub fn formula_conformance() -> Check {
    let t0 = Instant::now();
    for (i, &(kp, kd, ki, seq, expected, exact)) in PID_CASES.iter().enumerate() {
        let gains = PidGains { kp, kd, ki };
        let mut state = PidState::default();
        let out = seq
            .iter()
            .map(|&lp| pid_steering(&mut state, lp, &gains))
            .last()
            .unwrap();
        ensure(matches(out, expected, exact), || {
            format!("steering case {i}: {out} != {expected}")
        })?;
    }
    let cfg = SimulatorConfig {
        max_speed: 8.0,
        k_low: 4.0,
        k_high: 12.0,
        ..Default::default()
    };
    for (i, &(steering, speed, expected, exact)) in THROTTLE_CASES.iter().enumerate() {
        let out = throttle_law(steering, speed, &cfg);
        ensure(matches(out, expected, exact), || {
            format!("throttle case {i}: {out} != {expected}")
        })?;
    }
    let d = SimulatorConfig::default();
    let cut = throttle_law(0.0, 1.01 * d.max_speed, &d);
    ensure(cut == 0.0, || format!("throttle above the limit: {cut}"))?;

    let norm = Normalization { min: 0.0, max: 1.0 };
    for (i, &(maps, fp, qm, exact)) in UNION_CASES.iter().enumerate() {
        let maps: Vec<CombinedFeatureMap> = maps
            .iter()
            .enumerate()
            .map(|(j, m)| one_cell_map(m, j))
            .collect();
        let u = union_maps(&maps, &norm).map_err(|e| format!("union case {i}: {e}"))?;
        let s = u.stats[&CellKey::new(1, 3)];
        ensure(s.failure_probability == fp, || {
            format!("union case {i}: fp {} != {fp}", s.failure_probability)
        })?;
        ensure(matches(s.mean_max_lp, qm, exact), || {
            format!("union case {i}: qm {} != {qm}", s.mean_max_lp)
        })?;
    }
    let key = CellKey::new(2, 7);
    for (i, &(values, product, min, exact)) in MERGE_CASES.iter().enumerate() {
        for (metric, expected) in [
            (MetricKind::FailureProbability, product),
            (MetricKind::LackOfQuality, min),
        ] {
            let maps: Vec<ValueMap> = values
                .iter()
                .enumerate()
                .map(|(j, &v)| value_map(&format!("m{j}"), metric, &[(key, v)]))
                .collect();
            let merged = merge_maps(&maps, MissingCells::Reject, "dss")
                .map_err(|e| format!("merge case {i}: {e}"))?;
            let out = merged.cells[&key].value;
            let exact = exact || metric == MetricKind::LackOfQuality;
            ensure(matches(out, expected, exact), || {
                format!("merge case {i} ({}): {out} != {expected}", metric.slug())
            })?;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    ensure(elapsed < 1.0, || format!("took {elapsed:.3} s"))?;
    Ok(format!(
        "{} steering, {} throttle, {} union, {} merge cases in {elapsed:.3} s",
        PID_CASES.len(),
        THROTTLE_CASES.len() + 1,
        UNION_CASES.len(),
        MERGE_CASES.len()
    ))
}

fn random_value_pair(rng: &mut ChaCha8Rng, metric: MetricKind) -> (ValueMap, ValueMap) {
    let n = rng.random_range(1..40);
    let keys: Vec<CellKey> = (0..n)
        .map(|_| CellKey::new(rng.random_range(0..8), rng.random_range(0..30)))
        .collect();
    let a: Vec<(CellKey, f64)> = keys
        .iter()
        .map(|&k| (k, rng.random_range(0.0..=1.0)))
        .collect();
    let b: Vec<(CellKey, f64)> = keys
        .iter()
        .map(|&k| (k, rng.random_range(0.0..=1.0)))
        .collect();
    (value_map("a", metric, &a), value_map("b", metric, &b))
}

/// Merged failure probability never exceeds either input and merged
/// quality is the smaller input, on random map pairs.
pub fn merge_conservativeness(pairs: usize, seed: u64) -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = 0;
    for i in 0..pairs {
        for metric in MetricKind::ALL {
            let (a, b) = random_value_pair(&mut rng, metric);
            let m = merge_maps(&[a.clone(), b.clone()], MissingCells::Reject, "dss")
                .map_err(|e| format!("pair {i}: {e}"))?;
            ensure(m.cells.len() == a.cells.len(), || {
                format!("pair {i}: cell count changed")
            })?;
            for (k, c) in &m.cells {
                let (x, y) = (a.cells[k].value, b.cells[k].value);
                let ok = match metric {
                    MetricKind::FailureProbability => c.value <= x.min(y),
                    MetricKind::LackOfQuality => c.value == x.min(y),
                };
                ensure(ok, || {
                    format!(
                        "pair {i} cell {k} ({}): {} from {x} and {y}",
                        metric.slug(),
                        c.value
                    )
                })?;
                cells += 1;
            }
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    ensure(elapsed < 5.0, || format!("took {elapsed:.3} s"))?;
    Ok(format!(
        "{pairs} pairs per metric, {cells} cells checked in {elapsed:.3} s"
    ))
}

/// Exact distance against grid integration. Samples sit on a 1/1024
/// lattice and grid cells align with it, so every CDF step falls on a cell
/// boundary.
pub fn wasserstein_oracle(pairs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fixed = wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0]).map_err(|e| e.to_string())?;
    ensure(fixed == 1.0, || format!("{{0,1}} vs {{1,2}}: {fixed}"))?;
    let grid = wasserstein_grid(&[0.0, 1.0], &[1.0, 2.0], 200_000);
    ensure((grid - 1.0).abs() < 1e-6, || {
        format!("grid oracle on {{0,1}} vs {{1,2}}: {grid}")
    })?;
    let mut worst: f64 = 0.0;
    for i in 0..pairs {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.random_range(1..40);
            (0..n)
                .map(|_| rng.random_range(-1024..=2048) as f64 / 1024.0)
                .collect()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let exact = wasserstein_1d(&a, &b).map_err(|e| e.to_string())?;
        let lo = a.iter().chain(&b).copied().fold(f64::INFINITY, f64::min);
        let hi = a
            .iter()
            .chain(&b)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let cells = 4 * ((hi - lo) * 1024.0).round().max(1.0) as usize;
        let numeric = wasserstein_grid(&a, &b, cells);
        let diff = (exact - numeric).abs();
        worst = worst.max(diff);
        ensure(diff < 1e-6, || {
            format!("pair {i}: exact {exact}, grid {numeric}")
        })?;
    }
    Ok(format!("{pairs} pairs, max |diff| {worst:.2e}"))
}

pub fn auc_oracle(instances: usize, seed: u64) -> Check {
    let fixed =
        auc_prc(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false]).map_err(|e| e.to_string())?;
    let expected = auc_enumerate(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false]);
    ensure(
        fixed == expected && (fixed - 5.0 / 6.0).abs() < 1e-15,
        || format!("fixed example {fixed}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    while done < instances {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(2..12);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if !labels.iter().any(|l| *l) || labels.iter().all(|l| *l) {
            continue;
        }
        let a = auc_prc(&scores, &labels).map_err(|e| e.to_string())?;
        let b = auc_enumerate(&scores, &labels);
        ensure(a == b, || format!("instance {done} (n={n}): {a} vs {b}"))?;
        done += 1;
    }
    Ok(format!("{instances} instances with n <= 50, exact"))
}

pub fn wilcoxon_oracle(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exact_runs = 0;
    for i in 0..instances {
        let n = rng.random_range(1..=12);
        let diffs: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-8..=8) as f64 * 0.25)
            .collect();
        let r = wilcoxon_signed_rank(&PairedSeries::unkeyed(diffs.clone(), vec![0.0; n]).unwrap());
        let (w, p) = wilcoxon_enumerate(&diffs);
        ensure(r.statistic == w && r.p_value == p, || {
            format!(
                "instance {i} {diffs:?}: ({}, {}) vs ({w}, {p})",
                r.statistic, r.p_value
            )
        })?;
        exact_runs += usize::from(r.n >= 6);
    }
    let six = wilcoxon_signed_rank(
        &PairedSeries::unkeyed(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.0; 6]).unwrap(),
    );
    ensure(six.p_value == 2.0 / 64.0, || {
        format!("n=6 all positive: {}", six.p_value)
    })?;
    Ok(format!(
        "{instances} instances with n <= 12 ({exact_runs} enumerated), exact"
    ))
}

pub fn random_map(rng: &mut ChaCha8Rng, simulator: &str, ids: &[String]) -> CombinedFeatureMap {
    let mut m = CombinedFeatureMap::new(simulator, 0.01, 5.0);
    for id in ids {
        let key = CellKey::new(rng.random_range(0..4), rng.random_range(0..6));
        m.insert(
            record(
                id,
                simulator,
                key,
                rng.random_bool(0.3),
                rng.random_range(0.0..3.0),
            ),
            dummy_spec(),
        );
    }
    m
}

pub fn union_recount(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..instances {
        let n_maps = rng.random_range(1..4);
        let maps: Vec<CombinedFeatureMap> = (0..n_maps)
            .map(|j| {
                let ids: Vec<String> = (0..rng.random_range(1..30))
                    .map(|t| format!("m{j}t{t}"))
                    .collect();
                random_map(&mut rng, "sim", &ids)
            })
            .collect();
        let norm = Normalization::from_maps(&maps);
        let u = union_maps(&maps, &norm).map_err(|e| e.to_string())?;
        let counts = recount(&maps);
        let quality = quality_oracle(&maps, &norm);
        ensure(u.stats.len() == counts.len(), || {
            format!("instance {i}: cell sets differ")
        })?;
        for (k, &(fails, total)) in &counts {
            let s = u.stats[k];
            ensure(s.n_fail == fails && s.n_tests == total, || {
                format!("instance {i} cell {k}: counts")
            })?;
            ensure(s.failure_probability == fails as f64 / total as f64, || {
                format!("instance {i} cell {k}: fp {}", s.failure_probability)
            })?;
            ensure((s.mean_max_lp - quality[k]).abs() <= 1e-12, || {
                format!("instance {i} cell {k}: quality")
            })?;
        }
    }
    Ok(format!("{instances} random unions, exact"))
}

pub fn pearson_example() -> Check {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [2.0, 1.0, 4.0, 3.0, 6.0];
    let r = pearson(&PairedSeries::unkeyed(x.to_vec(), y.to_vec()).unwrap())
        .map_err(|e| e.to_string())?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    let expected = cov / (sx * sy);
    ensure((r.r - expected).abs() <= 1e-12, || {
        format!("r {} vs {expected}", r.r)
    })?;
    Ok(format!("r = {:.6}", r.r))
}

fn random_spec(rng: &mut ChaCha8Rng) -> RoadSpec {
    let n = rng.random_range(4..12);
    let pts = (0..n)
        .map(|_| Point::new(rng.random_range(0.0..250.0), rng.random_range(0.0..250.0)))
        .collect();
    RoadSpec::new(pts)
        .unwrap()
        .with_samples(rng.random_range(2..30))
}

/// Interpolation endpoint, count and reversal symmetry on random specs;
/// feature oracles on random roads; the radius-10 triple.
pub fn geometry(specs: usize, roads: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..specs {
        let spec = random_spec(&mut rng);
        let n = spec.control_points.len();
        let poly = interpolate_catmull_rom(&spec).map_err(|e| format!("spec {i}: {e}"))?;
        ensure(poly.len() == (n - 3) * spec.samples_per_segment + 1, || {
            format!("spec {i}: count")
        })?;
        ensure(
            poly.start() == spec.control_points[1] && poly.end() == spec.control_points[n - 2],
            || format!("spec {i}: endpoints"),
        )?;
        let back = interpolate_catmull_rom(&spec.reversed()).unwrap();
        for (a, b) in poly
            .center_points
            .iter()
            .zip(back.center_points.iter().rev())
        {
            ensure(a.dist(*b) <= 1e-9, || {
                format!("spec {i}: reversal moved a point by {}", a.dist(*b))
            })?;
        }
    }
    let params = RoadGenParams::default();
    for i in 0..roads {
        let spec = generate_random_road(seed.wrapping_add(i as u64), &params)
            .map_err(|e| e.to_string())?;
        let poly = interpolate_catmull_rom(&spec).unwrap();
        let (t, to) = (count_turns(&poly, 5.0), turns_oracle(&poly, 5.0));
        ensure(t == to, || format!("road {i}: {t} turns, oracle {to}"))?;
        let (r, ro) = (min_radius(&poly), min_radius_oracle(&poly));
        let same = (r.is_infinite() && ro.is_infinite()) || (r - ro).abs() <= 1e-9 * ro;
        ensure(same, || format!("road {i}: min radius {r}, oracle {ro}"))?;
    }
    let r = circumradius(
        Point::new(10.0, 0.0),
        Point::new(0.0, 10.0),
        Point::new(-10.0, 0.0),
    );
    ensure((r - 10.0).abs() <= 1e-9, || {
        format!("radius-10 triple: {r}")
    })?;
    Ok(format!(
        "{specs} specs, {roads} roads, radius-10 triple {r}"
    ))
}

/// Feature examples on constructed arcs.
pub fn arc_features() -> Check {
    let o = Point::new(20.0, 20.0);
    let cases: Vec<(&str, Vec<Point>, u32, f64)> = vec![
        (
            "straight",
            chain(
                o,
                0.0,
                &[Piece::Straight {
                    length: 100.0,
                    n: 50,
                }],
            ),
            0,
            0.0,
        ),
        (
            "90 degree arc",
            chain(
                o,
                0.0,
                &[Piece::Arc {
                    radius: 30.0,
                    sweep_deg: 90.0,
                    n: 40,
                }],
            ),
            1,
            1.0 / 30.0,
        ),
        (
            "S-curve",
            chain(
                o,
                0.0,
                &[
                    Piece::Arc {
                        radius: 30.0,
                        sweep_deg: 90.0,
                        n: 40,
                    },
                    Piece::Arc {
                        radius: 30.0,
                        sweep_deg: -90.0,
                        n: 40,
                    },
                ],
            ),
            2,
            1.0 / 30.0,
        ),
        (
            "radius 50 then 20",
            chain(
                o,
                0.0,
                &[
                    Piece::Arc {
                        radius: 50.0,
                        sweep_deg: 40.0,
                        n: 30,
                    },
                    Piece::Arc {
                        radius: 20.0,
                        sweep_deg: 60.0,
                        n: 30,
                    },
                ],
            ),
            1,
            1.0 / 20.0,
        ),
        (
            "radius 5",
            chain(
                o,
                0.0,
                &[
                    Piece::Straight { length: 10.0, n: 5 },
                    Piece::Arc {
                        radius: 5.0,
                        sweep_deg: 90.0,
                        n: 30,
                    },
                    Piece::Straight { length: 10.0, n: 5 },
                ],
            ),
            1,
            0.2,
        ),
        (
            "radii 4 and 10",
            chain(
                o,
                0.0,
                &[
                    Piece::Arc {
                        radius: 4.0,
                        sweep_deg: 60.0,
                        n: 30,
                    },
                    Piece::Arc {
                        radius: 10.0,
                        sweep_deg: -60.0,
                        n: 30,
                    },
                ],
            ),
            2,
            0.25,
        ),
    ];
    for (name, pts, turns, curvature) in cases {
        let poly = polyline(pts);
        let f = road_features(&poly, 5.0);
        ensure(f.turn_count == turns, || {
            format!("{name}: {} turns", f.turn_count)
        })?;
        ensure((f.curvature - curvature).abs() <= 1e-9, || {
            format!("{name}: curvature {}", f.curvature)
        })?;
        ensure(turns_oracle(&poly, 5.0) == turns, || {
            format!("{name}: oracle disagrees")
        })?;
        let ro = min_radius_oracle(&poly);
        let expected = if curvature == 0.0 {
            f64::INFINITY
        } else {
            1.0 / curvature
        };
        ensure(ro == expected || (ro - expected).abs() <= 1e-9, || {
            format!("{name}: oracle radius {ro}")
        })?;
    }
    Ok("straight, arc, S-curve, spliced arcs".into())
}

/// Constant steering on the kinematic engine traces a circle of radius
/// `wheelbase / tan(steering * max_steer_angle)`.
pub fn kinematic_circle(steering: f64) -> Check {
    let cfg = SimulatorConfig {
        engine: Engine::Kinematic,
        timestep: 0.05,
        ..Default::default()
    };
    let v = 5.0;
    let throttle = cfg.drag * v / cfg.throttle_gain;
    let expected = (cfg.wheelbase / (steering * cfg.max_steer_angle).tan()).abs();
    let mut s = VehicleState {
        x: 100.0,
        y: 100.0,
        heading: 0.3,
        speed: v,
        ..Default::default()
    };
    let mut pts = vec![Point::new(s.x, s.y)];
    while (s.heading - 0.3).abs() < 2.0 * std::f64::consts::PI {
        s = step(&s, DrivingCommand::new(steering, throttle), &cfg);
        pts.push(Point::new(s.x, s.y));
    }
    let m = pts.len();
    let (a, b, c) = (pts[0], pts[m / 3], pts[2 * m / 3]);
    let fitted = bisector_radius(a, b, c);
    let rel = (fitted - expected).abs() / expected;
    ensure(rel < 0.01, || {
        format!("fitted radius {fitted}, closed form {expected}")
    })?;
    let center = circle_center(a, b, c);
    let spread = pts
        .iter()
        .map(|p| (p.dist(center) - expected).abs() / expected)
        .fold(0.0, f64::max);
    ensure(spread < 0.01, || {
        format!("points stray {:.3}% from the circle", spread * 100.0)
    })?;
    Ok(format!(
        "radius {fitted:.4} vs {expected:.4} ({:.4}%), max radial deviation {:.4}%",
        rel * 100.0,
        spread * 100.0
    ))
}

pub fn circle_center(a: Point, b: Point, c: Point) -> Point {
    let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    let (a2, b2, c2) = (a.dot(a), b.dot(b), c.dot(c));
    Point::new(
        (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d,
        (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d,
    )
}

/// Replays every placement log of a finished run. A cell must hold the
/// lowest fitness seen up to and including its first negative one, and
/// every logged decision must follow from the cell's history.
pub fn placement_replay(dir: &Path) -> Check {
    let manifest = RunManifest::load(dir).map_err(|e| e.to_string())?;
    let search = manifest
        .stage(Stage::Search.name())
        .map_err(|e| e.to_string())?;
    let mut cells_checked = 0;
    let mut runs = 0;
    for name in search
        .artifacts
        .keys()
        .filter(|k| k.starts_with("archive/"))
    {
        let archive: Archive = manifest
            .read_artifact(dir, "search", name)
            .map_err(|e| e.to_string())?;
        let log_name = name.replacen("archive/", "log/", 1);
        let (_, bytes) = manifest
            .artifact(dir, "search", &log_name)
            .map_err(|e| e.to_string())?;
        let text = String::from_utf8(bytes).map_err(|e| e.to_string())?;
        let mut history: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
        for line in text.lines() {
            let entry: LogEntry =
                serde_json::from_str(line).map_err(|e| format!("{log_name}: {e}"))?;
            let LogEntry::Placed {
                cell,
                fitness,
                placement,
                step,
                ..
            } = entry
            else {
                continue;
            };
            let seen = history.entry(cell).or_default();
            let current = retained(seen);
            let ok = match (current, placement) {
                (None, Placement::Inserted) => true,
                (Some(inc), Placement::Replaced { previous_fitness }) => {
                    inc >= 0.0 && fitness < inc && previous_fitness == inc
                }
                (Some(inc), Placement::Kept { incumbent_fitness }) => {
                    (inc < 0.0 || fitness >= inc) && incumbent_fitness == inc
                }
                _ => false,
            };
            ensure(ok, || {
                format!("{log_name} step {step}: {placement:?} for {fitness} on {current:?}")
            })?;
            seen.push(fitness);
        }
        ensure(history.keys().eq(archive.cells.keys()), || {
            format!("{name}: archived cells differ from logged cells")
        })?;
        for (k, seen) in &history {
            let expected = retained(seen).unwrap();
            let stored = archive.cells[k].fitness;
            ensure(stored == expected, || {
                format!("{name} cell {k}: stored {stored}, replay {expected}")
            })?;
            cells_checked += 1;
        }
        runs += 1;
    }
    ensure(runs > 0, || "no archives found".into())?;
    Ok(format!("{cells_checked} cells across {runs} runs"))
}

/// Minimum over the prefix ending at the first negative value.
fn retained(seen: &[f64]) -> Option<f64> {
    let end = seen
        .iter()
        .position(|f| *f < 0.0)
        .map_or(seen.len(), |i| i + 1);
    seen[..end].iter().copied().reduce(f64::min)
}
