//! DNS name parsing and validation.
//!
//! Names are lowercase-folded at construction and split into the labels left
//! of the public suffix and the suffix itself. The suffix is treated as
//! immutable by the candidate generators.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total name length bound, dots included.
pub const MAX_NAME_LEN: usize = 253;
/// Per-label length bound.
pub const MAX_LABEL_LEN: usize = 63;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("empty domain name")]
    Empty,
    #[error("illegal character '{ch}' in label \"{label}\"")]
    IllegalCharacter { label: String, ch: char },
    #[error("empty label in \"{name}\"")]
    EmptyLabel { name: String },
    #[error("label \"{label}\" is longer than {MAX_LABEL_LEN} characters")]
    LabelTooLong { label: String },
    #[error("label \"{label}\" starts or ends with a hyphen")]
    HyphenAtLabelEdge { label: String },
    #[error("name \"{name}\" is longer than {MAX_NAME_LEN} characters")]
    NameTooLong { name: String },
    #[error("\"{name}\" has no label left of the public suffix")]
    MissingSecondLevel { name: String },
}

/// Multi-label public suffixes (e.g. `co.uk`). When empty, the rightmost
/// label alone is the suffix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuffixList {
    suffixes: BTreeSet<String>,
}

impl SuffixList {
    pub fn new<I, S>(suffixes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            suffixes: suffixes
                .into_iter()
                .map(|s| s.into().to_ascii_lowercase())
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.suffixes.is_empty()
    }

    /// Number of trailing labels that form the suffix of `labels`
    /// (longest match wins, minimum 1).
    fn suffix_label_count(&self, labels: &[&str]) -> usize {
        let mut best = 1;
        for start in (0..labels.len().saturating_sub(1)).rev() {
            let tail = labels[start..].join(".");
            if self.suffixes.contains(&tail) {
                best = labels.len() - start;
                break;
            }
        }
        best
    }
}

/// A validated DNS name: the labels left of the public suffix plus the
/// suffix itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainName {
    labels: Vec<String>,
    tld: String,
}

impl DomainName {
    /// Parses `text` with the default single-label suffix rule.
    pub fn parse(text: &str) -> Result<Self, DomainError> {
        Self::parse_with(text, &SuffixList::default())
    }

    /// Parses `text`, assigning the longest matching suffix from `suffixes`
    /// (or the rightmost label) to the tld part.
    pub fn parse_with(text: &str, suffixes: &SuffixList) -> Result<Self, DomainError> {
        if text.is_empty() {
            return Err(DomainError::Empty);
        }
        let folded = text.to_ascii_lowercase();
        let parts: Vec<&str> = folded.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(DomainError::EmptyLabel { name: folded });
        }
        for part in &parts {
            validate_label(part)?;
        }
        if parts.len() < 2 {
            return Err(DomainError::MissingSecondLevel { name: folded });
        }
        let suffix_len = suffixes.suffix_label_count(&parts);
        if suffix_len >= parts.len() {
            return Err(DomainError::MissingSecondLevel { name: folded });
        }
        let (head, tail) = parts.split_at(parts.len() - suffix_len);
        let name = Self {
            labels: head.iter().map(|s| s.to_string()).collect(),
            tld: tail.join("."),
        };
        name.check_total_len()?;
        Ok(name)
    }

    /// Builds a name from already-split parts, applying the same validation
    /// as `parse`.
    pub fn from_parts<I, S>(labels: I, tld: &str) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels
            .into_iter()
            .map(|l| l.into().to_ascii_lowercase())
            .collect();
        if labels.is_empty() {
            return Err(DomainError::MissingSecondLevel {
                name: tld.to_string(),
            });
        }
        let tld = tld.to_ascii_lowercase();
        for label in labels.iter().map(String::as_str).chain(tld.split('.')) {
            if label.is_empty() {
                return Err(DomainError::EmptyLabel {
                    name: format!("{}.{}", labels.join("."), tld),
                });
            }
            validate_label(label)?;
        }
        let name = Self { labels, tld };
        name.check_total_len()?;
        Ok(name)
    }

    /// Replaces the second-level label, revalidating the result.
    pub fn with_second_level(&self, label: &str) -> Result<Self, DomainError> {
        let mut labels = self.labels.clone();
        *labels.last_mut().expect("labels never empty") = label.to_string();
        Self::from_parts(labels, &self.tld)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn tld(&self) -> &str {
        &self.tld
    }

    /// The label immediately left of the suffix — the one generators mutate.
    pub fn second_level(&self) -> &str {
        self.labels.last().expect("labels never empty")
    }

    pub fn name(&self) -> String {
        format!("{}.{}", self.labels.join("."), self.tld)
    }

    fn check_total_len(&self) -> Result<(), DomainError> {
        let name = self.name();
        if name.len() > MAX_NAME_LEN {
            return Err(DomainError::NameTooLong { name });
        }
        Ok(())
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

pub(crate) fn is_dns_char(ch: char) -> bool {
    ch.is_ascii_lowercase() || ch.is_ascii_digit() || ch == '-'
}

fn validate_label(label: &str) -> Result<(), DomainError> {
    if let Some(ch) = label.chars().find(|&c| !is_dns_char(c)) {
        return Err(DomainError::IllegalCharacter {
            label: label.to_string(),
            ch,
        });
    }
    if label.len() > MAX_LABEL_LEN {
        return Err(DomainError::LabelTooLong {
            label: label.to_string(),
        });
    }
    if label.starts_with('-') || label.ends_with('-') {
        return Err(DomainError::HyphenAtLabelEdge {
            label: label.to_string(),
        });
    }
    Ok(())
}
