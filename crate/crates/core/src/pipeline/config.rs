use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::DrivingModelConfig;
use crate::error::{require, ConfigError};
use crate::execution::Simulator;
use crate::search::SearchConfig;
use crate::seeds::digest_hex;
use crate::stats::offline::OfflineSettings;

fn one() -> usize {
    1
}

/// Everything that determines an experiment's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Independent search runs per sibling.
    #[serde(default = "one")]
    pub repetitions: usize,
    /// Default output directory; does not enter the config hash.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// `search.seed` is ignored: run seeds derive from `seed`.
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub model: DrivingModelConfig,
    pub siblings: Vec<Simulator>,
    #[serde(default)]
    pub twin: Option<Simulator>,
    #[serde(default)]
    pub offline: OfflineSettings,
    /// Step budget override for every episode.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Lets siblings (and the twin) share physics parameters.
    #[serde(default)]
    pub allow_identical_engines: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| {
            ConfigError::new("config", e.message().to_string() + &span_hint(s, e.span()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::new(path.display().to_string(), format!("cannot read: {e}"))
        })?;
        Self::from_toml_str(&text)
            .map_err(|e| ConfigError::new(format!("{}: {}", path.display(), e.path), e.message))
    }

    /// Checks every field; errors carry the offending path, e.g.
    /// `siblings[1].timestep`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        require(self.repetitions >= 1, "repetitions", "must be >= 1")?;
        self.search.validate().map_err(|e| e.within("search"))?;
        self.model.validate().map_err(|e| e.within("model"))?;
        self.offline.validate().map_err(|e| e.within("offline"))?;
        if let Some(m) = self.max_steps {
            require(m >= 1, "max_steps", "must be >= 1")?;
        }
        require(
            self.siblings.len() >= 2,
            "siblings",
            "at least two siblings are required",
        )?;
        let mut names = BTreeSet::new();
        for (i, s) in self.siblings.iter().enumerate() {
            let path = format!("siblings[{i}]");
            check_simulator(s).map_err(|e| e.within(&path))?;
            require(
                names.insert(s.name.as_str()),
                &format!("{path}.name"),
                "duplicate simulator name",
            )?;
            if !self.allow_identical_engines {
                if let Some(j) = self.siblings[..i].iter().position(|o| o.config == s.config) {
                    return Err(ConfigError::new(
                        path,
                        format!(
                            "same physics as siblings[{j}]; set allow_identical_engines to permit"
                        ),
                    ));
                }
            }
        }
        if let Some(t) = &self.twin {
            check_simulator(t).map_err(|e| e.within("twin"))?;
            require(
                !names.contains(t.name.as_str()),
                "twin.name",
                "must differ from every sibling name",
            )?;
            require(t.name != DSS_LABEL, "twin.name", "name is reserved")?;
            if !self.allow_identical_engines {
                if let Some(j) = self.siblings.iter().position(|o| o.config == t.config) {
                    return Err(ConfigError::new(
                        "twin",
                        format!(
                            "same physics as siblings[{j}]; set allow_identical_engines to permit"
                        ),
                    ));
                }
            }
        }
        require(
            !names.contains(DSS_LABEL),
            "siblings",
            "the name \"dss\" is reserved",
        )?;
        Ok(())
    }

    pub fn twin(&self) -> Result<&Simulator, ConfigError> {
        self.twin
            .as_ref()
            .ok_or_else(|| ConfigError::new("twin", "required for evaluation"))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        digest_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Label of the merged sibling map.
pub const DSS_LABEL: &str = "dss";

fn check_simulator(s: &Simulator) -> Result<(), ConfigError> {
    let valid_name = !s.name.is_empty()
        && s.name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    require(
        valid_name,
        "name",
        "must be non-empty and use only [A-Za-z0-9_-]",
    )?;
    s.config.validate()
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
