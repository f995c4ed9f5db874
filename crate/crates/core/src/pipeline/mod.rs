//! End-to-end experiment: search on every sibling, migrate and unite, merge,
//! evaluate against the twin, render. Each stage persists its artifacts and
//! records them in a run manifest.

pub mod config;
pub mod evaluate;
pub mod manifest;
pub mod render;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{EpisodeResult, Outcome};
use crate::error::ConfigError;
use crate::execution::{Executor, Simulator};
use crate::featuremap::export::{to_csv_matrix, to_svg};
use crate::featuremap::{
    binarize_twin, combine_runs, merge_maps, migrate, union_maps, CombinedFeatureMap, MapError,
    MetricKind, MissingCells, Normalization, UnionMap, ValueMap,
};
use crate::road::RoadError;
use crate::search::{run_search, Archive, SearchError, SearchRun};
use crate::seeds::{derive_seed, digest_hex};
use crate::stats::offline::{
    collect_autopilot_dataset, compare_errors, model_errors, offline_roads, pool_errors,
    ErrorSeries,
};
use crate::stats::StatsError;

pub use config::{ExperimentConfig, DSS_LABEL};
pub use evaluate::{compare_maps, ComparisonRow, EvaluationReport, MapSummary};
pub use manifest::{ArtifactRef, RunManifest, StageRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest corrupt: {0}")]
    ManifestCorrupt(String),
    #[error("stage {0} has not been run for this configuration")]
    MissingStage(String),
    #[error("no archived test {0}")]
    UnknownTest(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Road(#[from] RoadError),
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_) | PipelineError::Search(SearchError::Config(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Search,
    Union,
    Merge,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Search,
        Stage::Union,
        Stage::Merge,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Search => "search",
            Stage::Union => "union",
            Stage::Merge => "merge",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    fn inputs(self) -> &'static [Stage] {
        match self {
            Stage::Search => &[],
            Stage::Union => &[Stage::Search],
            Stage::Merge => &[Stage::Union],
            Stage::Evaluate => &[Stage::Search, Stage::Union, Stage::Merge],
            Stage::Report => &[Stage::Union, Stage::Merge, Stage::Evaluate],
        }
    }
}

const CONFIG_STAGE: &str = "config";
const CONFIG_FILE: &str = "config.json";

fn fm_ds(name: &str) -> String {
    format!("fm_ds/{name}")
}

fn fm_u(name: &str) -> String {
    format!("fm_u/{name}")
}

fn fm_dss(metric: MetricKind) -> String {
    format!("fm_dss/{}", metric.slug())
}

fn archive_key(name: &str, rep: usize) -> String {
    format!("archive/{name}/{rep}")
}

/// One experiment bound to its run directory.
#[derive(Debug)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    /// Skip a stage whose inputs and outputs are unchanged.
    pub use_cache: bool,
    config_hash: String,
    manifest: RunManifest,
}

impl Pipeline {
    /// Validates the config and opens `dir`. An existing manifest is kept
    /// when it belongs to the same config; otherwise a new one starts.
    pub fn open(
        config: ExperimentConfig,
        dir: impl Into<PathBuf>,
        use_cache: bool,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let dir = dir.into();
        let config_hash = config.hash();
        let manifest = match RunManifest::load(&dir) {
            Ok(m) if m.config_hash == config_hash => m,
            _ => RunManifest::new(config_hash.clone(), config.seed),
        };
        let mut p = Pipeline {
            config,
            dir,
            use_cache,
            config_hash,
            manifest,
        };
        let mut w = manifest::StageWriter::new(&p.dir);
        w.write_json("config", CONFIG_FILE, &p.config)?;
        w.seeds.insert("global".into(), p.config.seed);
        let rec = w.finish(p.config_hash.clone());
        p.commit(CONFIG_STAGE, rec)?;
        Ok(p)
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn commit(&mut self, stage: &str, rec: StageRecord) -> Result<(), PipelineError> {
        self.manifest.stages.insert(stage.to_string(), rec);
        self.manifest.save(&self.dir)
    }

    fn stage_key(&self, stage: Stage) -> Result<String, PipelineError> {
        let mut text = format!("{}\n{}\n", self.config_hash, stage.name());
        for input in stage.inputs() {
            let rec = self.manifest.stage(input.name())?;
            for (name, a) in &rec.artifacts {
                text.push_str(&format!("{}:{name}:{}\n", input.name(), a.sha256));
            }
        }
        Ok(digest_hex(text.as_bytes()))
    }

    /// Stage key, or `None` when the recorded outputs can be reused.
    fn begin(&self, stage: Stage) -> Result<Option<String>, PipelineError> {
        let key = self.stage_key(stage)?;
        if self.use_cache
            && self
                .manifest
                .stages
                .get(stage.name())
                .is_some_and(|r| r.key == key)
            && self.manifest.stage_intact(&self.dir, stage.name())
        {
            info!("stage {}: cached", stage.name());
            return Ok(None);
        }
        info!("stage {}: running", stage.name());
        Ok(Some(key))
    }

    fn read<T: serde::de::DeserializeOwned>(
        &self,
        stage: Stage,
        name: &str,
    ) -> Result<T, PipelineError> {
        self.manifest.read_artifact(&self.dir, stage.name(), name)
    }

    fn executor<'a>(&'a self, sim: &'a Simulator) -> Executor<'a> {
        let mut ex = Executor::new(&self.config.model, sim, self.config.seed);
        ex.max_steps = self.config.max_steps;
        ex.with_turn_threshold(self.config.search.turn_threshold_deg)
    }

    pub fn run(&mut self, stage: Stage) -> Result<(), PipelineError> {
        match stage {
            Stage::Search => self.search(),
            Stage::Union => self.union(),
            Stage::Merge => self.merge(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(),
        }
    }

    pub fn run_all(&mut self) -> Result<(), PipelineError> {
        for s in Stage::ALL {
            self.run(s)?;
        }
        Ok(())
    }

    /// Search runs on every sibling, then the combined map per sibling.
    pub fn search(&mut self) -> Result<(), PipelineError> {
        let Some(key) = self.begin(Stage::Search)? else {
            return Ok(());
        };
        let cfg = &self.config;
        let jobs: Vec<(usize, usize, u64)> = (0..cfg.siblings.len())
            .flat_map(|i| {
                (0..cfg.repetitions).map(move |r| {
                    let name = &cfg.siblings[i].name;
                    (
                        i,
                        r,
                        derive_seed(cfg.seed, &["search", name, &r.to_string()]),
                    )
                })
            })
            .collect();
        let runs: Vec<SearchRun> = jobs
            .par_iter()
            .map(|&(i, _, seed)| {
                let mut sc = cfg.search.clone();
                sc.seed = seed;
                run_search(&self.executor(&cfg.siblings[i]), &sc)
            })
            .collect::<Result<_, _>>()?;

        let mut w = manifest::StageWriter::new(&self.dir);
        let mut per_sibling: BTreeMap<usize, Vec<Archive>> = BTreeMap::new();
        for (&(i, r, seed), run) in jobs.iter().zip(runs) {
            let name = &cfg.siblings[i].name;
            w.seeds.insert(format!("{name}/{r}"), seed);
            w.write_json(
                &archive_key(name, r),
                &format!("search/{name}/rep{r}/archive.json"),
                &run.archive,
            )?;
            w.write_bytes(
                &format!("log/{name}/{r}"),
                &format!("search/{name}/rep{r}/log.jsonl"),
                run.log_jsonl().as_bytes(),
            )?;
            per_sibling.entry(i).or_default().push(run.archive);
        }
        for (i, archives) in per_sibling {
            let name = &cfg.siblings[i].name;
            let map = combine_runs(&archives)?;
            info!(
                "{name}: {} tests in {} cells",
                map.n_records(),
                map.cells.len()
            );
            w.write_json(&fm_ds(name), &format!("maps/fm_ds_{name}.json"), &map)?;
        }
        let rec = w.finish(key);
        self.commit(Stage::Search.name(), rec)
    }

    /// Every sibling map migrated to every other sibling, then one union map
    /// per sibling with a shared quality normalization.
    pub fn union(&mut self) -> Result<(), PipelineError> {
        let Some(key) = self.begin(Stage::Union)? else {
            return Ok(());
        };
        let sibs = &self.config.siblings;
        let native: Vec<CombinedFeatureMap> = sibs
            .iter()
            .map(|s| self.read(Stage::Search, &fm_ds(&s.name)))
            .collect::<Result<_, _>>()?;
        for m in &native[1..] {
            native[0].check_binning(m)?;
        }
        let mut w = manifest::StageWriter::new(&self.dir);
        let mut members: Vec<Vec<CombinedFeatureMap>> = Vec::with_capacity(sibs.len());
        for (i, target) in sibs.iter().enumerate() {
            let executor = self.executor(target);
            let mut maps = vec![native[i].clone()];
            for (j, source) in native.iter().enumerate() {
                if i == j {
                    continue;
                }
                let migrated = migrate(source, &executor)?;
                let from = &sibs[j].name;
                let to = &target.name;
                w.write_json(
                    &format!("migrated/{from}/{to}"),
                    &format!("maps/migrated_{from}_to_{to}.json"),
                    &migrated,
                )?;
                maps.push(migrated);
            }
            members.push(maps);
        }
        let norm = Normalization::from_maps(members.iter().flatten());
        for (i, maps) in members.iter().enumerate() {
            let u = union_maps(maps, &norm)?;
            let name = &sibs[i].name;
            w.write_json(&fm_u(name), &format!("maps/fm_u_{name}.json"), &u)?;
        }
        let rec = w.finish(key);
        self.commit(Stage::Union.name(), rec)
    }

    fn unions(&self) -> Result<Vec<UnionMap>, PipelineError> {
        self.config
            .siblings
            .iter()
            .map(|s| self.read(Stage::Union, &fm_u(&s.name)))
            .collect()
    }

    /// Conservative merge of the union maps, one map per metric.
    pub fn merge(&mut self) -> Result<(), PipelineError> {
        let Some(key) = self.begin(Stage::Merge)? else {
            return Ok(());
        };
        let unions = self.unions()?;
        let mut w = manifest::StageWriter::new(&self.dir);
        for metric in MetricKind::ALL {
            let maps: Vec<ValueMap> = unions.iter().map(|u| u.values(metric)).collect();
            let merged = merge_maps(&maps, MissingCells::UseRemaining, DSS_LABEL)?;
            w.write_json(
                &fm_dss(metric),
                &format!("maps/fm_dss_{}.json", metric.slug()),
                &merged,
            )?;
        }
        let rec = w.finish(key);
        self.commit(Stage::Merge.name(), rec)
    }

    /// Twin map and offline datasets, then every comparison.
    pub fn evaluate(&mut self) -> Result<(), PipelineError> {
        let twin = self.config.twin()?.clone();
        let Some(key) = self.begin(Stage::Evaluate)? else {
            return Ok(());
        };
        let cfg = &self.config;
        let native: Vec<CombinedFeatureMap> = cfg
            .siblings
            .iter()
            .map(|s| self.read(Stage::Search, &fm_ds(&s.name)))
            .collect::<Result<_, _>>()?;
        let pooled = evaluate::pool_maps(&native, "pooled").ok_or(MapError::NoMaps)?;
        let dt_records = migrate(&pooled, &self.executor(&twin))?;
        let dt = union_maps(
            std::slice::from_ref(&dt_records),
            &Normalization::from_maps([&dt_records]),
        )?;
        let unions = self.unions()?;

        let mut online = Vec::new();
        let mut maps = Vec::new();
        let dt_fp = evaluate::labelled_values(&dt, MetricKind::FailureProbability, &twin.name);
        let labels = binarize_twin(&dt_fp)?;
        for metric in MetricKind::ALL {
            let reference = evaluate::labelled_values(&dt, metric, &twin.name);
            let mut candidates: Vec<ValueMap> = unions
                .iter()
                .zip(&cfg.siblings)
                .map(|(u, s)| evaluate::labelled_values(u, metric, &s.name))
                .collect();
            candidates.push(self.read(Stage::Merge, &fm_dss(metric))?);
            for c in &candidates {
                online.push(compare_maps(c, &reference, &labels));
            }
            if metric == MetricKind::FailureProbability {
                maps.extend(candidates.iter().map(MapSummary::of));
                maps.push(MapSummary::of(&reference));
            }
        }

        let mut w = manifest::StageWriter::new(&self.dir);
        let roads_seed = derive_seed(cfg.seed, &["offline"]);
        let model_seed = derive_seed(cfg.seed, &["offline", "model"]);
        w.seeds.insert("offline_roads".into(), roads_seed);
        w.seeds.insert("offline_model".into(), model_seed);
        let roads = offline_roads(roads_seed, cfg.offline.n_roads, &cfg.search.road)?;
        let sims: Vec<&Simulator> = cfg.siblings.iter().chain(std::iter::once(&twin)).collect();
        let series: Vec<ErrorSeries> = sims
            .par_iter()
            .map(|sim| -> Result<ErrorSeries, PipelineError> {
                let ds = collect_autopilot_dataset(sim, &roads, cfg.seed)?;
                Ok(model_errors(&cfg.model, sim, &ds, model_seed)?)
            })
            .collect::<Result<_, _>>()?;
        let (sibling_series, twin_series) = series.split_at(cfg.siblings.len());
        let twin_series = &twin_series[0];
        let dss_series = pool_errors(sibling_series, DSS_LABEL)?;
        let mut offline = Vec::new();
        for s in sibling_series.iter().chain(std::iter::once(&dss_series)) {
            offline.push(ComparisonRow::from_offline(&compare_errors(
                s,
                twin_series,
                &cfg.offline,
            )?));
        }

        let mut excluded = BTreeMap::new();
        for u in &unions {
            if !u.map.excluded.is_empty() {
                excluded.insert(u.map.simulator.clone(), u.map.excluded.clone());
            }
        }
        if !dt.map.excluded.is_empty() {
            excluded.insert(twin.name.clone(), dt.map.excluded.clone());
        }
        let report = EvaluationReport {
            config_hash: self.config_hash.clone(),
            seed: cfg.seed,
            siblings: cfg.siblings.iter().map(|s| s.name.clone()).collect(),
            twin: twin.name.clone(),
            maps,
            online,
            offline,
            excluded,
        };

        w.write_json("fm_dt", "maps/fm_dt.json", &dt)?;
        let mut all_series: Vec<&ErrorSeries> = series.iter().collect();
        all_series.push(&dss_series);
        w.write_json("offline_errors", "offline/errors.json", &all_series)?;
        w.write_json("report", "report.json", &report)?;
        let rec = w.finish(key);
        self.commit(Stage::Evaluate.name(), rec)
    }

    pub fn load_report(&self) -> Result<EvaluationReport, PipelineError> {
        self.read(Stage::Evaluate, "report")
    }

    /// Heatmaps of every map and CSV tables of the comparisons.
    pub fn report(&mut self) -> Result<(), PipelineError> {
        let Some(key) = self.begin(Stage::Report)? else {
            return Ok(());
        };
        let report = self.load_report()?;
        let unions = self.unions()?;
        let dt: UnionMap = self.read(Stage::Evaluate, "fm_dt")?;
        let mut w = manifest::StageWriter::new(&self.dir);
        for metric in MetricKind::ALL {
            let slug = metric.slug();
            let mut maps: Vec<ValueMap> = unions
                .iter()
                .zip(&self.config.siblings)
                .map(|(u, s)| evaluate::labelled_values(u, metric, &s.name))
                .collect();
            maps.push(self.read(Stage::Merge, &fm_dss(metric))?);
            maps.push(evaluate::labelled_values(&dt, metric, &report.twin));
            for m in &maps {
                let title = format!("{} ({slug})", m.label);
                w.write_bytes(
                    &format!("svg/{}/{slug}", m.label),
                    &format!("report/heatmap_{}_{slug}.svg", m.label),
                    to_svg(m, &title).as_bytes(),
                )?;
                w.write_bytes(
                    &format!("matrix/{}/{slug}", m.label),
                    &format!("report/map_{}_{slug}.csv", m.label),
                    to_csv_matrix(m).as_bytes(),
                )?;
            }
            w.write_bytes(
                &format!("table/{slug}"),
                &format!("report/table_{slug}.csv"),
                render::online_table(&report, metric).as_bytes(),
            )?;
        }
        w.write_bytes(
            "table/offline",
            "report/table_offline.csv",
            render::offline_table(&report).as_bytes(),
        )?;
        w.write_bytes(
            "summary",
            "report/summary.txt",
            render::summary(&report).as_bytes(),
        )?;
        let rec = w.finish(key);
        self.commit(Stage::Report.name(), rec)
    }
}

/// Result of re-executing one archived test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub test_id: String,
    pub simulator: String,
    pub episode_seed: u64,
    pub archived_seed: u64,
    pub archived_fitness: f64,
    pub archived_outcome: Outcome,
    pub episode: EpisodeResult,
    /// Same seed as archived, and fitness and outcome reproduced bit for bit.
    pub matches: bool,
}

impl ReplayOutcome {
    pub fn mismatch_description(&self) -> Option<String> {
        (!self.matches).then(|| {
            let seed_note = if self.episode_seed == self.archived_seed {
                ""
            } else {
                "seed differs from the archived one; "
            };
            format!(
                "{seed_note}replay of {} on {} with seed {} gave fitness {} ({:?}); archive has {} ({:?}, seed {})",
                self.test_id,
                self.simulator,
                self.episode_seed,
                self.episode.fitness,
                self.episode.outcome,
                self.archived_fitness,
                self.archived_outcome,
                self.archived_seed
            )
        })
    }
}

/// Re-executes an archived test from the run in `dir`, with its stored
/// episode seed unless `seed` overrides it. The episode trace is recorded.
pub fn replay(
    dir: &Path,
    test_id: &str,
    simulator: Option<&str>,
    seed: Option<u64>,
) -> Result<ReplayOutcome, PipelineError> {
    let manifest = RunManifest::load(dir)?;
    let config: ExperimentConfig = manifest.read_artifact(dir, CONFIG_STAGE, "config")?;
    if config.hash() != manifest.config_hash {
        return Err(PipelineError::ManifestCorrupt(
            "config does not match its hash".into(),
        ));
    }
    for sim in &config.siblings {
        if simulator.is_some_and(|s| s != sim.name) {
            continue;
        }
        for r in 0..config.repetitions {
            let archive: Archive =
                manifest.read_artifact(dir, Stage::Search.name(), &archive_key(&sim.name, r))?;
            let Some(ind) = archive.cells.values().find(|i| i.test_id == test_id) else {
                continue;
            };
            let mut executor = Executor::new(&config.model, sim, config.seed)
                .with_turn_threshold(archive.turn_threshold_deg);
            executor.max_steps = config.max_steps;
            let episode_seed = seed.unwrap_or(ind.episode_seed);
            let ex = executor.execute_with(&ind.spec, Some(episode_seed), true)?;
            let matches = episode_seed == ind.episode_seed
                && ex.episode.fitness.to_bits() == ind.fitness.to_bits()
                && ex.episode.outcome == ind.outcome;
            return Ok(ReplayOutcome {
                test_id: test_id.to_string(),
                simulator: sim.name.clone(),
                episode_seed,
                archived_seed: ind.episode_seed,
                archived_fitness: ind.fitness,
                archived_outcome: ind.outcome,
                episode: ex.episode,
                matches,
            });
        }
    }
    Err(PipelineError::UnknownTest(test_id.to_string()))
}
