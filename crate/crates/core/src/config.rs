//! TOML pipeline configuration.
//!
//! Relative paths are resolved against the directory holding the config
//! file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{default_primary_categories, DEFAULT_CAP, DEFAULT_HISTOGRAM_BINS};
use crate::codes::DEFAULT_CODE_LENGTH;
use crate::eval::Bm25Params;
use crate::filter::FilterConfig;
use crate::ingest::Thresholds;
use crate::reference::{Split, DEFAULT_INTENSION_TEMPLATE, DEFAULT_PROMPT, DEFAULT_TIMEOUT_S};
use crate::review::default_sizes;

pub const CONFIG_ENV: &str = "FORGE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{what} not found: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub kb: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// Scripted segmenter outputs; used when no shards are given.
    pub scenarios: Option<PathBuf>,
    /// Line-delimited segmenter outputs.
    pub shards: Vec<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Templates {
    pub intension: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            intension: DEFAULT_INTENSION_TEMPLATE.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSettings {
    /// Remote extractor URL; the rule-based extractor is used without one.
    pub endpoint: Option<String>,
    pub prompt: String,
    pub timeout_s: f64,
    /// Upper bound on concurrent extractor requests.
    pub max_in_flight: usize,
}

impl Default for ExtractorSettings {
    fn default() -> Self {
        Self {
            endpoint: None,
            prompt: DEFAULT_PROMPT.to_string(),
            timeout_s: DEFAULT_TIMEOUT_S,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSettings {
    pub histogram_bins: usize,
    pub primary_categories: BTreeSet<String>,
}

impl Default for StatsSettings {
    fn default() -> Self {
        Self {
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            primary_categories: default_primary_categories(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeSettings {
    pub length: usize,
}

impl Default for CodeSettings {
    fn default() -> Self {
        Self {
            length: DEFAULT_CODE_LENGTH,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub bm25: Bm25Params,
    pub aliases: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSettings {
    pub port: u16,
    pub sizes: BTreeMap<Split, usize>,
    /// Review store directory; defaults to `<output>/review`.
    pub store: Option<PathBuf>,
}

impl Default for ReviewSettings {
    fn default() -> Self {
        Self {
            port: 8787,
            sizes: default_sizes(),
            store: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Maximum annotations per entity; 0 disables the cap.
    pub cap: usize,
    pub paths: Paths,
    pub filter: FilterConfig,
    pub thresholds: Thresholds,
    pub templates: Templates,
    pub extractor: ExtractorSettings,
    pub codes: CodeSettings,
    pub eval: EvalSettings,
    pub stats: StatsSettings,
    pub review: ReviewSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cap: DEFAULT_CAP,
            paths: Paths::default(),
            filter: FilterConfig::default(),
            thresholds: Thresholds::default(),
            templates: Templates::default(),
            extractor: ExtractorSettings::default(),
            codes: CodeSettings::default(),
            eval: EvalSettings::default(),
            stats: StatsSettings::default(),
            review: ReviewSettings::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for opt in [
            &mut p.kb,
            &mut p.tasks,
            &mut p.manifest,
            &mut p.scenarios,
            &mut p.vocab,
            &mut p.predictions,
            &mut p.images,
            &mut p.output,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, opt);
        }
        for s in &mut p.shards {
            resolve(base, s);
        }
        if let Some(store) = &mut self.review.store {
            resolve(base, store);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable")
    }

    pub fn output_dir(&self) -> Result<&Path, ConfigError> {
        self.paths
            .output
            .as_deref()
            .ok_or_else(|| ConfigError::Invalid("paths.output is not set".into()))
    }

    pub fn review_store(&self) -> Result<PathBuf, ConfigError> {
        match &self.review.store {
            Some(p) => Ok(p.clone()),
            None => Ok(self.output_dir()?.join("review")),
        }
    }

    pub fn cap(&self) -> Option<usize> {
        (self.cap > 0).then_some(self.cap)
    }

    /// Checks every input a full run needs, before anything is written.
    pub fn validate_for_run(&self) -> Result<(), ConfigError> {
        self.validate_settings()?;
        let p = &self.paths;
        require("knowledge base", &p.kb)?;
        require("tasks file", &p.tasks)?;
        require("split manifest", &p.manifest)?;
        self.output_dir()?;
        if p.shards.is_empty() && p.scenarios.is_none() {
            return Err(ConfigError::Invalid(
                "no segmenter outputs: set paths.shards or paths.scenarios".into(),
            ));
        }
        optional("scenario file", &p.scenarios)?;
        for s in &p.shards {
            exists("detection shard", s)?;
        }
        optional("vocab", &p.vocab)?;
        optional("predictions file", &p.predictions)?;
        Ok(())
    }

    pub fn validate_settings(&self) -> Result<(), ConfigError> {
        self.filter
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let t = &self.thresholds;
        if !(0.0..=1.0).contains(&t.box_threshold) || !(0.0..=1.0).contains(&t.text_threshold) {
            return Err(ConfigError::Invalid("thresholds must lie in [0, 1]".into()));
        }
        if !self.templates.intension.contains("{label}") {
            return Err(ConfigError::Invalid("templates.intension needs a {label} placeholder".into()));
        }
        if self.extractor.timeout_s.is_nan() || self.extractor.timeout_s <= 0.0 || self.extractor.max_in_flight == 0 {
            return Err(ConfigError::Invalid(
                "extractor.timeout_s must be positive and max_in_flight at least 1".into(),
            ));
        }
        if self.codes.length == 0 {
            return Err(ConfigError::Invalid("codes.length must be at least 1".into()));
        }
        if self.stats.histogram_bins == 0 {
            return Err(ConfigError::Invalid("stats.histogram_bins must be at least 1".into()));
        }
        Ok(())
    }
}

fn exists(what: &'static str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath {
            what,
            path: path.to_path_buf(),
        })
    }
}

fn require(what: &'static str, path: &Option<PathBuf>) -> Result<(), ConfigError> {
    match path {
        Some(p) => exists(what, p),
        None => Err(ConfigError::Invalid(format!("{what} path is not set"))),
    }
}

fn optional(what: &'static str, path: &Option<PathBuf>) -> Result<(), ConfigError> {
    match path {
        Some(p) => exists(what, p),
        None => Ok(()),
    }
}
