//! Scripted site manifest: one file format drives both the fake browser
//! backend and the fixture HTTP server.
//!
//! Each entry maps a domain to user-agent-conditional branches. The first
//! branch whose pattern is `"*"` or a substring of the request's User-Agent
//! wins; a request matching no branch gets an inert page with no dialogs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{Category, LanguageTag};
use crate::driver::DialogKind;

/// Dialog timing quantum used by generated fixtures, in milliseconds.
/// Keeps grace-window boundary checks away from scheduler jitter.
pub const DIALOG_QUANTUM_MS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedDialog {
    pub message: String,
    pub at_ms: u64,
    #[serde(default = "default_kind")]
    pub kind: DialogKind,
}

fn default_kind() -> DialogKind {
    DialogKind::Alert
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    /// `"*"` or a substring of the User-Agent header.
    pub ua_pattern: String,
    /// Time until the page's network activity finishes, from navigation
    /// start.
    #[serde(default)]
    pub load_ms: u64,
    #[serde(default)]
    pub dialogs: Vec<ScriptedDialog>,
    /// The page's network activity never finishes; the load signal never
    /// fires and the scan runs into the hard cap.
    #[serde(default)]
    pub never_finishes: bool,
    /// After the scripted dialogs, the schedule repeats indefinitely
    /// (period: last `at_ms` plus one quantum).
    #[serde(default)]
    pub loop_dialogs: bool,
}

impl Branch {
    pub fn matches(&self, ua: &str) -> bool {
        self.ua_pattern == "*" || ua.contains(&self.ua_pattern)
    }

    pub fn loop_period_ms(&self) -> u64 {
        let last = self.dialogs.iter().map(|d| d.at_ms).max().unwrap_or(0);
        last + DIALOG_QUANTUM_MS
    }
}

/// Annotated expected outcome for a generated fixture site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub category: Category,
    pub language: LanguageTag,
    pub malicious: bool,
    pub targeted_profiles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub domain: String,
    pub branches: Vec<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
}

impl FixtureSpec {
    /// First branch matching the User-Agent, if any.
    pub fn branch_for(&self, ua: &str) -> Option<&Branch> {
        self.branches.iter().find(|b| b.matches(ua))
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest is not valid JSON: {0}")]
    Json(String),
    #[error("duplicate fixture domain \"{domain}\"")]
    DuplicateDomain { domain: String },
    #[error("fixture \"{domain}\": truth.malicious={flag} contradicts category {category}")]
    InconsistentTruth {
        domain: String,
        category: Category,
        flag: bool,
    },
    #[error("could not read manifest {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Parses and validates a manifest file (a JSON array of fixture specs).
pub fn parse_manifest(text: &str) -> Result<Vec<FixtureSpec>, ManifestError> {
    let specs: Vec<FixtureSpec> =
        serde_json::from_str(text).map_err(|e| ManifestError::Json(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for spec in &specs {
        if !seen.insert(spec.domain.as_str()) {
            return Err(ManifestError::DuplicateDomain {
                domain: spec.domain.clone(),
            });
        }
        if let Some(truth) = &spec.truth {
            if truth.malicious != truth.category.is_malicious() {
                return Err(ManifestError::InconsistentTruth {
                    domain: spec.domain.clone(),
                    category: truth.category,
                    flag: truth.malicious,
                });
            }
        }
    }
    Ok(specs)
}

pub fn load_manifest(path: &std::path::Path) -> Result<Vec<FixtureSpec>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_manifest(&text)
}
