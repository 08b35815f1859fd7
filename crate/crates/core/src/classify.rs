//! Dialog message classification: normalization, language detection, and an
//! ordered keyword rule table implementing the scam-category taxonomy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::scan::ScanRecord;

/// Message categories. `Misc` is the mandatory fallback; `Fraud`, `Lottery`
/// and `Apk` are the malicious ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Fraud,
    Lottery,
    Apk,
    Gambling,
    Errors,
    Download,
    Adult,
    MobileSite,
    MobileClient,
    Misc,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::Fraud,
        Category::Lottery,
        Category::Apk,
        Category::Gambling,
        Category::Errors,
        Category::Download,
        Category::Adult,
        Category::MobileSite,
        Category::MobileClient,
        Category::Misc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Fraud => "FRAUD",
            Category::Lottery => "LOTTERY",
            Category::Apk => "APK",
            Category::Gambling => "GAMBLING",
            Category::Errors => "ERRORS",
            Category::Download => "DOWNLOAD",
            Category::Adult => "ADULT",
            Category::MobileSite => "MOBILE_SITE",
            Category::MobileClient => "MOBILE_CLIENT",
            Category::Misc => "MISC",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        Category::ALL.iter().copied().find(|c| c.as_str() == s)
    }

    pub fn is_malicious(&self) -> bool {
        matches!(self, Category::Fraud | Category::Lottery | Category::Apk)
    }

    /// Display key for report tables: the two mobile categories are merged
    /// into `MOBILE`, everything else keeps its name.
    pub fn display_group(&self) -> &'static str {
        match self {
            Category::MobileSite | Category::MobileClient => "MOBILE",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// ISO-639-1 style language code, `und` when undetermined. The built-in
/// detector emits zh/de/en/und; other codes can enter via rule tables or
/// pre-translated inputs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LanguageTag {
    Zh,
    De,
    En,
    Und,
    Other(String),
}

impl LanguageTag {
    pub fn new(code: &str) -> Result<Self, RuleError> {
        match code {
            "zh" => Ok(LanguageTag::Zh),
            "de" => Ok(LanguageTag::De),
            "en" => Ok(LanguageTag::En),
            "und" => Ok(LanguageTag::Und),
            other
                if (2..=3).contains(&other.len())
                    && other.chars().all(|c| c.is_ascii_lowercase()) =>
            {
                Ok(LanguageTag::Other(other.to_string()))
            }
            other => Err(RuleError::BadLanguageTag {
                tag: other.to_string(),
            }),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            LanguageTag::Zh => "zh",
            LanguageTag::De => "de",
            LanguageTag::En => "en",
            LanguageTag::Und => "und",
            LanguageTag::Other(code) => code,
        }
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for LanguageTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LanguageTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let code = String::deserialize(deserializer)?;
        LanguageTag::new(&code).map_err(serde::de::Error::custom)
    }
}

/// Unicode NFC, whitespace runs collapsed to single spaces, ends trimmed,
/// case preserved. Message distinctness is defined over this form.
pub fn normalize(message: &str) -> String {
    let mut out = String::with_capacity(message.len());
    let mut pending_space = false;
    for ch in message.nfc() {
        if ch.is_whitespace() {
            pending_space = true;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        }
    }
    out
}

fn is_cjk(ch: char) -> bool {
    matches!(
        ch as u32,
        0x4E00..=0x9FFF       // CJK Unified Ideographs
        | 0x3400..=0x4DBF     // Extension A
        | 0xF900..=0xFAFF     // Compatibility Ideographs
        | 0x20000..=0x2A6DF   // Extension B
        | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F
        | 0x2B820..=0x2CEAF
    )
}

/// Stopword-and-script language detector with a fixed decision order:
/// CJK codepoint ratio, then German vs. English stopword evidence.
#[derive(Debug, Clone)]
pub struct LanguageDetector {
    de_stopwords: BTreeSet<String>,
    en_stopwords: BTreeSet<String>,
    cjk_ratio: f64,
}

impl LanguageDetector {
    pub fn builtin() -> Self {
        Self::from_lists(
            serde_json::from_str(include_str!("../data/stopwords_de.json"))
                .expect("embedded German stopword list is valid"),
            serde_json::from_str(include_str!("../data/stopwords_en.json"))
                .expect("embedded English stopword list is valid"),
        )
    }

    pub fn from_lists(de: Vec<String>, en: Vec<String>) -> Self {
        Self {
            de_stopwords: de.into_iter().collect(),
            en_stopwords: en.into_iter().collect(),
            cjk_ratio: 0.30,
        }
    }

    pub fn detect(&self, message: &str) -> LanguageTag {
        let alphabetic: Vec<char> = message.chars().filter(|c| c.is_alphabetic()).collect();
        if !alphabetic.is_empty() {
            let cjk = alphabetic.iter().filter(|&&c| is_cjk(c)).count();
            if cjk as f64 / alphabetic.len() as f64 >= self.cjk_ratio {
                return LanguageTag::Zh;
            }
        }
        let lowered = message.to_lowercase();
        let mut de_hits = lowered
            .chars()
            .filter(|c| matches!(c, 'ä' | 'ö' | 'ü' | 'ß'))
            .count();
        let mut en_hits = 0usize;
        for token in lowered
            .split(|c: char| !c.is_alphabetic())
            .filter(|t| !t.is_empty())
        {
            if self.de_stopwords.contains(token) {
                de_hits += 1;
            }
            if self.en_stopwords.contains(token) {
                en_hits += 1;
            }
        }
        if de_hits > en_hits && de_hits > 0 {
            LanguageTag::De
        } else if en_hits > 0 {
            LanguageTag::En
        } else {
            LanguageTag::Und
        }
    }
}

/// Detection with the built-in stopword lists. Normalization-insensitive:
/// `detect_language(m) == detect_language(normalize(m))`.
pub fn detect_language(message: &str) -> LanguageTag {
    static DETECTOR: OnceLock<LanguageDetector> = OnceLock::new();
    DETECTOR
        .get_or_init(LanguageDetector::builtin)
        .detect(message)
}

/// One ordered classification rule. Keywords match case-insensitively as
/// substrings of the normalized message; `all_of` patterns must all match,
/// `any_of` needs one. A rule with a `language_scope` only applies to
/// messages detected as that language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub rule_id: String,
    pub category: Category,
    pub any_of: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub all_of: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_scope: Option<LanguageTag>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("rule table is not valid JSON: {0}")]
    Json(String),
    #[error("duplicate rule_id \"{rule_id}\"")]
    DuplicateRuleId { rule_id: String },
    #[error("rule \"{rule_id}\" has an empty pattern list or an empty pattern")]
    EmptyPattern { rule_id: String },
    #[error("invalid language tag \"{tag}\"")]
    BadLanguageTag { tag: String },
}

/// First-match-wins ordered rule table, identified by the SHA-256 checksum
/// of its canonical JSON serialization.
#[derive(Debug, Clone)]
pub struct RuleTable {
    rules: Vec<Rule>,
    checksum: String,
}

pub const FALLBACK_RULE_ID: &str = "fallback";

impl RuleTable {
    pub fn from_json(text: &str) -> Result<Self, RuleError> {
        let rules: Vec<Rule> =
            serde_json::from_str(text).map_err(|e| RuleError::Json(e.to_string()))?;
        Self::from_rules(rules)
    }

    pub fn from_rules(rules: Vec<Rule>) -> Result<Self, RuleError> {
        let mut seen = BTreeSet::new();
        for rule in &rules {
            if !seen.insert(rule.rule_id.as_str()) {
                return Err(RuleError::DuplicateRuleId {
                    rule_id: rule.rule_id.clone(),
                });
            }
            let empty_any = rule.any_of.is_empty()
                || rule.any_of.iter().any(|p| p.trim().is_empty())
                || rule.all_of.iter().any(|p| p.trim().is_empty());
            if empty_any {
                return Err(RuleError::EmptyPattern {
                    rule_id: rule.rule_id.clone(),
                });
            }
        }
        let checksum = checksum_of(&rules);
        Ok(Self { rules, checksum })
    }

    pub fn builtin() -> Self {
        static TABLE: OnceLock<RuleTable> = OnceLock::new();
        TABLE
            .get_or_init(|| {
                RuleTable::from_json(include_str!("../data/rules.json"))
                    .expect("embedded rule table is valid")
            })
            .clone()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Lowercase hex SHA-256 of the canonicalized table (compact JSON of
    /// the parsed rule list).
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Assigns the first matching rule's category; no match falls back to
    /// MISC. Total: every message receives exactly one category.
    pub fn categorize(&self, message: &str, language: &LanguageTag) -> ClassifiedMessage {
        let haystack = message.to_lowercase();
        for rule in &self.rules {
            if let Some(scope) = &rule.language_scope {
                if scope != language {
                    continue;
                }
            }
            let any_hit = rule
                .any_of
                .iter()
                .any(|p| haystack.contains(&p.to_lowercase()));
            let all_hit = rule
                .all_of
                .iter()
                .all(|p| haystack.contains(&p.to_lowercase()));
            if any_hit && all_hit {
                return ClassifiedMessage::new(
                    message.to_string(),
                    rule.category,
                    language.clone(),
                    rule.rule_id.clone(),
                );
            }
        }
        ClassifiedMessage::new(
            message.to_string(),
            Category::Misc,
            language.clone(),
            FALLBACK_RULE_ID.to_string(),
        )
    }
}

fn checksum_of(rules: &[Rule]) -> String {
    let canonical = serde_json::to_vec(rules).expect("rule list serializes");
    let digest = Sha256::digest(&canonical);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// A distinct normalized message with its assigned category, language, and
/// derived maliciousness flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedMessage {
    pub message: String,
    pub category: Category,
    pub language: LanguageTag,
    pub malicious: bool,
    pub matched_rule_id: String,
}

impl ClassifiedMessage {
    fn new(message: String, category: Category, language: LanguageTag, rule_id: String) -> Self {
        Self {
            message,
            category,
            language,
            malicious: category.is_malicious(),
            matched_rule_id: rule_id,
        }
    }
}

/// Classification payload as persisted in the record store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub message: String,
    pub category: Category,
    pub language: LanguageTag,
    pub malicious: bool,
    pub matched_rule_id: String,
    pub rule_table_checksum: String,
}

impl ClassificationRecord {
    pub fn from_classified(classified: &ClassifiedMessage, checksum: &str) -> Self {
        Self {
            message: classified.message.clone(),
            category: classified.category,
            language: classified.language.clone(),
            malicious: classified.malicious,
            matched_rule_id: classified.matched_rule_id.clone(),
            rule_table_checksum: checksum.to_string(),
        }
    }
}

/// Maps each distinct normalized message to the (url, profile label) pairs
/// that displayed it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageIndex {
    map: BTreeMap<String, BTreeSet<(String, String)>>,
}

impl MessageIndex {
    pub fn insert(&mut self, message: &str, url: &str, profile_label: &str) {
        self.map
            .entry(message.to_string())
            .or_default()
            .insert((url.to_string(), profile_label.to_string()));
    }

    pub fn pairs(&self, message: &str) -> Option<&BTreeSet<(String, String)>> {
        self.map.get(message)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<(String, String)>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// The message → (url, profile) display index over a record set, keyed by
/// normalized message.
pub fn build_index(records: &[ScanRecord]) -> MessageIndex {
    let mut index = MessageIndex::default();
    for record in records {
        for dialog in &record.dialogs {
            let message = normalize(&dialog.message);
            index.insert(&message, &record.url, &record.profile_label);
        }
    }
    index
}

/// Classifies every distinct normalized message across the records and
/// builds the message → (url, profile) display index.
pub fn classify_run(
    records: &[ScanRecord],
    rules: &RuleTable,
    detector: &LanguageDetector,
) -> (Vec<ClassifiedMessage>, MessageIndex) {
    let index = build_index(records);
    let classified = index
        .iter()
        .map(|(message, _)| {
            let language = detector.detect(message);
            rules.categorize(message, &language)
        })
        .collect();
    (classified, index)
}
