//! Pipeline configuration: one JSON file naming resources, resolver and
//! scan settings, driver selection, and stage inputs. Everything referenced
//! is loaded and validated eagerly so a bad configuration fails before any
//! stage runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{LanguageDetector, RuleError, RuleTable};
use crate::domain::SuffixList;
use crate::driver::NavigateLimits;
use crate::manifest::{self, FixtureSpec, ManifestError};
use crate::permute::{
    parse_adjacency_json, parse_glyphs_json, parse_homophones_json, parse_keywords_json,
    GenResources, ResourceError,
};
use crate::profiles::UserAgentProfile;
use crate::resolve::ResolverConfig;
use crate::scan::RunConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResourcePaths {
    #[serde(default)]
    pub adjacency: Option<PathBuf>,
    #[serde(default)]
    pub glyphs: Option<PathBuf>,
    #[serde(default)]
    pub homophones: Option<PathBuf>,
    #[serde(default)]
    pub keywords: Option<PathBuf>,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub stopwords_de: Option<PathBuf>,
    #[serde(default)]
    pub stopwords_en: Option<PathBuf>,
    /// Multi-label public suffixes (JSON array, e.g. `["co.uk"]`).
    #[serde(default)]
    pub suffixes: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanSettings {
    #[serde(default = "default_profile_labels")]
    pub profiles: Vec<String>,
    /// User-defined profiles beyond the built-in five.
    #[serde(default)]
    pub extra_profiles: Vec<UserAgentProfile>,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_grace_ms")]
    pub grace_ms: u64,
    #[serde(default = "default_hard_cap_ms")]
    pub hard_cap_ms: u64,
    #[serde(default = "default_dialog_cap")]
    pub dialog_cap: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default)]
    pub progress_every: Option<u64>,
}

fn default_profile_labels() -> Vec<String> {
    crate::profiles::BUILTIN_LABELS
        .iter()
        .map(|s| s.to_string())
        .collect()
}
fn default_pool_size() -> usize {
    8
}
fn default_grace_ms() -> u64 {
    1_000
}
fn default_hard_cap_ms() -> u64 {
    30_000
}
fn default_dialog_cap() -> usize {
    100
}
fn default_max_attempts() -> u32 {
    2
}
fn default_run_id() -> String {
    "run".to_string()
}

impl Default for ScanSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    Fake,
    Devtools,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriverSettings {
    #[serde(default = "default_driver_kind")]
    pub kind: DriverKind,
    /// `host:port` of a debugging-enabled browser (devtools driver).
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Scripted manifest path (fake driver).
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

fn default_driver_kind() -> DriverKind {
    DriverKind::Fake
}

impl Default for DriverSettings {
    fn default() -> Self {
        Self {
            kind: DriverKind::Fake,
            endpoint: None,
            manifest: None,
        }
    }
}

/// Paths handed between pipeline stages when running `pipeline`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PipelineInputs {
    /// `rank,domain` seed list; enables the generate and resolve stages.
    #[serde(default)]
    pub seeds: Option<PathBuf>,
    /// Pre-resolved registered list; skips generate/resolve.
    #[serde(default)]
    pub registered: Option<PathBuf>,
    /// Fixture manifest; its domains are the registered set (fake driver
    /// runs and emulator-backed scans).
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub resources: ResourcePaths,
    #[serde(default)]
    pub resolver: ResolverConfig,
    #[serde(default)]
    pub scan: ScanSettings,
    #[serde(default)]
    pub driver: DriverSettings,
    #[serde(default)]
    pub store_path: Option<PathBuf>,
    #[serde(default)]
    pub report_dir: Option<PathBuf>,
    #[serde(default = "default_report_format")]
    pub report_format: String,
    #[serde(default)]
    pub pipeline: PipelineInputs,
}

fn default_report_format() -> String {
    "csv".to_string()
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Json(String),
    #[error("unknown profile label \"{label}\"")]
    UnknownProfile { label: String },
    #[error("driver kind {kind:?} requires the {field} setting")]
    MissingDriverField {
        kind: DriverKind,
        field: &'static str,
    },
    #[error("unknown report format \"{format}\" (expected csv or json)")]
    BadReportFormat { format: String },
    #[error(transparent)]
    Resource(#[from] ResourceError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Concrete driver selection after validation.
#[derive(Debug, Clone)]
pub enum DriverChoice {
    Fake { specs: Vec<FixtureSpec> },
    Devtools { endpoint: String },
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Json(e.to_string()))
    }

    /// The profile list in pass order; labels must be built-in or defined
    /// in `extra_profiles`.
    pub fn profiles(&self) -> Result<Vec<UserAgentProfile>, ConfigError> {
        self.scan
            .profiles
            .iter()
            .map(|label| {
                UserAgentProfile::builtin(label).or_else(|_| {
                    self.scan
                        .extra_profiles
                        .iter()
                        .find(|p| &p.label == label)
                        .cloned()
                        .ok_or_else(|| ConfigError::UnknownProfile {
                            label: label.clone(),
                        })
                })
            })
            .collect()
    }

    /// Generation resources: configured files or the embedded defaults.
    pub fn gen_resources(&self) -> Result<GenResources, ConfigError> {
        let mut resources = GenResources::builtin();
        if let Some(path) = &self.resources.adjacency {
            resources.adjacency = Some(parse_adjacency_json(&read(path)?)?);
        }
        if let Some(path) = &self.resources.glyphs {
            resources.glyph_map = Some(parse_glyphs_json(&read(path)?)?);
        }
        if let Some(path) = &self.resources.homophones {
            resources.homophones = Some(parse_homophones_json(&read(path)?)?);
        }
        if let Some(path) = &self.resources.keywords {
            resources.keywords = Some(parse_keywords_json(&read(path)?)?);
        }
        Ok(resources)
    }

    pub fn suffix_list(&self) -> Result<SuffixList, ConfigError> {
        match &self.resources.suffixes {
            None => Ok(SuffixList::default()),
            Some(path) => {
                let entries: Vec<String> = serde_json::from_str(&read(path)?)
                    .map_err(|e| ConfigError::Json(e.to_string()))?;
                Ok(SuffixList::new(entries))
            }
        }
    }

    pub fn rule_table(&self) -> Result<RuleTable, ConfigError> {
        match &self.resources.rules {
            None => Ok(RuleTable::builtin()),
            Some(path) => Ok(RuleTable::from_json(&read(path)?)?),
        }
    }

    pub fn detector(&self) -> Result<LanguageDetector, ConfigError> {
        match (&self.resources.stopwords_de, &self.resources.stopwords_en) {
            (None, None) => Ok(LanguageDetector::builtin()),
            (de, en) => {
                let parse =
                    |path: &Option<PathBuf>, fallback: &str| -> Result<Vec<String>, ConfigError> {
                        match path {
                            Some(p) => serde_json::from_str(&read(p)?)
                                .map_err(|e| ConfigError::Json(e.to_string())),
                            None => serde_json::from_str(fallback)
                                .map_err(|e| ConfigError::Json(e.to_string())),
                        }
                    };
                Ok(LanguageDetector::from_lists(
                    parse(de, include_str!("../data/stopwords_de.json"))?,
                    parse(en, include_str!("../data/stopwords_en.json"))?,
                ))
            }
        }
    }

    pub fn navigate_limits(&self) -> NavigateLimits {
        NavigateLimits {
            grace_ms: self.scan.grace_ms,
            hard_cap_ms: self.scan.hard_cap_ms,
            dialog_cap: self.scan.dialog_cap,
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            run_id: self.scan.run_id.clone(),
            pool_size: self.scan.pool_size,
            limits: self.navigate_limits(),
            max_attempts: self.scan.max_attempts,
            progress_every: self.scan.progress_every,
        }
    }

    /// Validates the driver section and loads the fake driver's manifest.
    pub fn driver_choice(&self) -> Result<DriverChoice, ConfigError> {
        match self.driver.kind {
            DriverKind::Fake => {
                let path =
                    self.driver
                        .manifest
                        .as_ref()
                        .ok_or(ConfigError::MissingDriverField {
                            kind: DriverKind::Fake,
                            field: "manifest",
                        })?;
                Ok(DriverChoice::Fake {
                    specs: manifest::load_manifest(path)?,
                })
            }
            DriverKind::Devtools => {
                let endpoint =
                    self.driver
                        .endpoint
                        .clone()
                        .ok_or(ConfigError::MissingDriverField {
                            kind: DriverKind::Devtools,
                            field: "endpoint",
                        })?;
                Ok(DriverChoice::Devtools { endpoint })
            }
        }
    }

    pub fn report_format(&self) -> Result<crate::report::ReportFormat, ConfigError> {
        crate::report::ReportFormat::parse(&self.report_format).ok_or_else(|| {
            ConfigError::BadReportFormat {
                format: self.report_format.clone(),
            }
        })
    }

    /// Eager validation of everything the pipeline will touch.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.profiles()?;
        self.gen_resources()?;
        self.suffix_list()?;
        self.rule_table()?;
        self.detector()?;
        self.driver_choice()?;
        self.report_format()?;
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}
