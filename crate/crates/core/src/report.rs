//! Distribution analytics over scan records and classified messages:
//! distinct counts, user-agent exclusivity, and the figure-analogue
//! category/language/profile tables.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::classify::{normalize, Category, ClassifiedMessage, MessageIndex};
use crate::scan::ScanRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub key: Vec<String>,
    pub count: u64,
}

/// One aggregated metric table; the report set emits one per figure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportTable {
    pub name: String,
    pub dimensions: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub total: u64,
}

impl ReportTable {
    fn from_counts(name: &str, dimensions: &[&str], counts: BTreeMap<Vec<String>, u64>) -> Self {
        let rows: Vec<ReportRow> = counts
            .into_iter()
            .map(|(key, count)| ReportRow { key, count })
            .collect();
        let total = rows.iter().map(|r| r.count).sum();
        Self {
            name: name.to_string(),
            dimensions: dimensions.iter().map(|d| d.to_string()).collect(),
            rows,
            total,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("message not covered by classifications: \"{message}\"")]
    UnclassifiedMessage { message: String },
    #[error("records contain no pass for configured profile \"{label}\"")]
    MissingPass { label: String },
    #[error("group_by must not be empty")]
    EmptyGroupBy,
    #[error("report output {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DistinctCounts {
    pub distinct_urls: u64,
    pub distinct_messages: u64,
    pub total_alerts: u64,
    pub malicious_alerts: u64,
}

/// Alert, URL, and message counts over one run's records.
pub fn distinct_counts(
    records: &[ScanRecord],
    classifications: &[ClassifiedMessage],
) -> Result<DistinctCounts, ReportError> {
    let malicious: BTreeMap<&str, bool> = classifications
        .iter()
        .map(|c| (c.message.as_str(), c.malicious))
        .collect();
    let mut urls = BTreeSet::new();
    let mut messages = BTreeSet::new();
    let mut counts = DistinctCounts::default();
    for record in records {
        for dialog in &record.dialogs {
            let message = normalize(&dialog.message);
            let is_malicious = *malicious.get(message.as_str()).ok_or_else(|| {
                ReportError::UnclassifiedMessage {
                    message: message.clone(),
                }
            })?;
            counts.total_alerts += 1;
            if is_malicious {
                counts.malicious_alerts += 1;
            }
            urls.insert(record.url.as_str());
            messages.insert(message);
        }
    }
    counts.distinct_urls = urls.len() as u64;
    counts.distinct_messages = messages.len() as u64;
    Ok(counts)
}

/// Single- vs multi-profile targeting at URL and distinct-message
/// granularity. Profiles with no dialogs keep zero rows so the tables are
/// shaped by the configured profile set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UaExclusivity {
    pub url_single: BTreeMap<String, u64>,
    pub url_multi: u64,
    pub message_single: BTreeMap<String, u64>,
    pub message_multi: u64,
}

pub fn ua_exclusivity(
    records: &[ScanRecord],
    expected_profiles: &[String],
) -> Result<UaExclusivity, ReportError> {
    let present: BTreeSet<&str> = records.iter().map(|r| r.profile_label.as_str()).collect();
    for label in expected_profiles {
        if !present.contains(label.as_str()) {
            return Err(ReportError::MissingPass {
                label: label.clone(),
            });
        }
    }

    let mut url_profiles: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut message_profiles: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for record in records {
        if record.dialogs.is_empty() {
            continue;
        }
        url_profiles
            .entry(record.url.as_str())
            .or_default()
            .insert(record.profile_label.as_str());
        for dialog in &record.dialogs {
            message_profiles
                .entry(normalize(&dialog.message))
                .or_default()
                .insert(record.profile_label.as_str());
        }
    }

    let mut out = UaExclusivity::default();
    for label in expected_profiles {
        out.url_single.insert(label.clone(), 0);
        out.message_single.insert(label.clone(), 0);
    }
    for profiles in url_profiles.values() {
        if profiles.len() == 1 {
            let label = profiles.iter().next().expect("nonempty");
            *out.url_single.entry((*label).to_string()).or_insert(0) += 1;
        } else {
            out.url_multi += 1;
        }
    }
    for profiles in message_profiles.values() {
        if profiles.len() == 1 {
            let label = profiles.iter().next().expect("nonempty");
            *out.message_single.entry((*label).to_string()).or_insert(0) += 1;
        } else {
            out.message_multi += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroupKey {
    Category,
    Language,
    Profile,
}

impl GroupKey {
    pub fn parse(s: &str) -> Option<GroupKey> {
        match s {
            "category" => Some(GroupKey::Category),
            "language" => Some(GroupKey::Language),
            "profile" => Some(GroupKey::Profile),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GroupKey::Category => "category",
            GroupKey::Language => "language",
            GroupKey::Profile => "profile",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Message,
    Site,
}

struct Fact<'a> {
    message: &'a str,
    site: String,
    profile: &'a str,
    category_display: &'static str,
    language: &'a str,
}

fn facts<'a>(classifications: &'a [ClassifiedMessage], index: &'a MessageIndex) -> Vec<Fact<'a>> {
    let mut out = Vec::new();
    for classified in classifications {
        let Some(pairs) = index.pairs(&classified.message) else {
            continue;
        };
        for (url, profile) in pairs {
            out.push(Fact {
                message: &classified.message,
                site: host_of(url),
                profile,
                category_display: classified.category.display_group(),
                language: classified.language.as_str(),
            });
        }
    }
    out
}

pub fn host_of(url: &str) -> String {
    Url::parse(url)
        .ok()
        .and_then(|u| u.host_str().map(|h| h.to_string()))
        .unwrap_or_else(|| url.to_string())
}

/// Distinct messages or distinct sites per key tuple. The two mobile
/// categories appear merged as `MOBILE`; an entity seen under several key
/// values counts once per value.
pub fn distribution(
    classifications: &[ClassifiedMessage],
    index: &MessageIndex,
    group_by: &[GroupKey],
    granularity: Granularity,
    name: &str,
) -> Result<ReportTable, ReportError> {
    if group_by.is_empty() {
        return Err(ReportError::EmptyGroupBy);
    }
    let mut buckets: BTreeMap<Vec<String>, BTreeSet<String>> = BTreeMap::new();
    for fact in facts(classifications, index) {
        let key: Vec<String> = group_by
            .iter()
            .map(|dim| match dim {
                GroupKey::Category => fact.category_display.to_string(),
                GroupKey::Language => fact.language.to_string(),
                GroupKey::Profile => fact.profile.to_string(),
            })
            .collect();
        let entity = match granularity {
            Granularity::Message => fact.message.to_string(),
            Granularity::Site => fact.site.clone(),
        };
        buckets.entry(key).or_default().insert(entity);
    }
    let counts: BTreeMap<Vec<String>, u64> = buckets
        .into_iter()
        .map(|(key, entities)| (key, entities.len() as u64))
        .collect();
    let dims: Vec<&str> = group_by.iter().map(|g| g.as_str()).collect();
    Ok(ReportTable::from_counts(name, &dims, counts))
}

fn single_target_table(name: &str, singles: &BTreeMap<String, u64>) -> ReportTable {
    let counts: BTreeMap<Vec<String>, u64> = singles
        .iter()
        .map(|(label, count)| (vec![label.clone()], *count))
        .collect();
    ReportTable::from_counts(name, &["profile"], counts)
}

fn filter_categories(mut table: ReportTable, keep: &[&str]) -> ReportTable {
    table.rows.retain(|row| keep.contains(&row.key[0].as_str()));
    table.total = table.rows.iter().map(|r| r.count).sum();
    table
}

/// The full figure-analogue table set for one run, in figure order, plus a
/// leading summary table with the headline counts.
pub fn figure_tables(
    records: &[ScanRecord],
    classifications: &[ClassifiedMessage],
    index: &MessageIndex,
    expected_profiles: &[String],
) -> Result<Vec<ReportTable>, ReportError> {
    let counts = distinct_counts(records, classifications)?;
    // An empty record set reports all-zero tables; the missing-pass check
    // only applies once any pass produced records.
    let exclusivity = if records.is_empty() {
        let zeros: BTreeMap<String, u64> = expected_profiles
            .iter()
            .map(|label| (label.clone(), 0))
            .collect();
        UaExclusivity {
            url_single: zeros.clone(),
            url_multi: 0,
            message_single: zeros,
            message_multi: 0,
        }
    } else {
        ua_exclusivity(records, expected_profiles)?
    };
    let distinct_sites: BTreeSet<String> = records
        .iter()
        .filter(|r| !r.dialogs.is_empty())
        .map(|r| host_of(&r.url))
        .collect();

    let summary_counts: BTreeMap<Vec<String>, u64> = [
        ("distinct_messages", counts.distinct_messages),
        ("distinct_sites", distinct_sites.len() as u64),
        ("distinct_urls", counts.distinct_urls),
        ("malicious_alerts", counts.malicious_alerts),
        ("multi_ua_messages", exclusivity.message_multi),
        ("multi_ua_urls", exclusivity.url_multi),
        (
            "single_ua_messages",
            exclusivity.message_single.values().sum(),
        ),
        ("single_ua_urls", exclusivity.url_single.values().sum()),
        ("total_alerts", counts.total_alerts),
    ]
    .into_iter()
    .map(|(metric, value)| (vec![metric.to_string()], value))
    .collect();

    let malicious_names: Vec<&str> = Category::ALL
        .iter()
        .filter(|c| c.is_malicious())
        .map(|c| c.display_group())
        .collect();

    let tables = vec![
        ReportTable::from_counts("summary_counts", &["metric"], summary_counts),
        single_target_table("fig1_messages_single_ua", &exclusivity.message_single),
        single_target_table("fig2_urls_single_ua", &exclusivity.url_single),
        distribution(
            classifications,
            index,
            &[GroupKey::Category],
            Granularity::Message,
            "fig3_messages_per_category",
        )?,
        distribution(
            classifications,
            index,
            &[GroupKey::Category],
            Granularity::Site,
            "fig4_sites_per_category",
        )?,
        filter_categories(
            distribution(
                classifications,
                index,
                &[GroupKey::Category, GroupKey::Profile],
                Granularity::Message,
                "fig5_messages_malicious_by_ua",
            )?,
            &malicious_names,
        ),
        filter_categories(
            distribution(
                classifications,
                index,
                &[GroupKey::Category, GroupKey::Profile],
                Granularity::Site,
                "fig6_sites_malicious_by_ua",
            )?,
            &malicious_names,
        ),
        distribution(
            classifications,
            index,
            &[GroupKey::Language],
            Granularity::Site,
            "fig7_sites_per_language",
        )?,
        distribution(
            classifications,
            index,
            &[GroupKey::Language, GroupKey::Category],
            Granularity::Message,
            "fig8_messages_language_by_category",
        )?,
        distribution(
            classifications,
            index,
            &[GroupKey::Language, GroupKey::Category],
            Granularity::Site,
            "fig9_sites_language_by_category",
        )?,
        distribution(
            classifications,
            index,
            &[GroupKey::Language, GroupKey::Profile],
            Granularity::Message,
            "fig10_messages_language_by_ua",
        )?,
        distribution(
            classifications,
            index,
            &[GroupKey::Language, GroupKey::Profile],
            Granularity::Site,
            "fig11_sites_language_by_ua",
        )?,
    ];
    Ok(tables)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<ReportFormat> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }

    fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

/// Writes one file per table into `dir` with deterministic, key-sorted row
/// order. Same tables in, byte-identical files out.
pub fn emit_report(
    tables: &[ReportTable],
    format: ReportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let io_err = |path: &Path, source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::with_capacity(tables.len());
    for table in tables {
        let mut sorted = table.clone();
        sorted.rows.sort_by(|a, b| a.key.cmp(&b.key));
        let path = dir.join(format!("{}.{}", sorted.name, format.extension()));
        let bytes = match format {
            ReportFormat::Csv => table_to_csv(&sorted),
            ReportFormat::Json => {
                let mut text = serde_json::to_string_pretty(&sorted).expect("table serializes");
                text.push('\n');
                text.into_bytes()
            }
        };
        let mut file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        file.write_all(&bytes).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn table_to_csv(table: &ReportTable) -> Vec<u8> {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<&str> = table.dimensions.iter().map(String::as_str).collect();
    header.push("count");
    writer.write_record(&header).expect("csv header");
    for row in &table.rows {
        let mut record: Vec<String> = row.key.clone();
        record.push(row.count.to_string());
        writer.write_record(&record).expect("csv row");
    }
    writer.into_inner().expect("csv buffer")
}

/// Parses a table back from its JSON emission.
pub fn table_from_json(text: &str) -> Result<ReportTable, serde_json::Error> {
    serde_json::from_str(text)
}
