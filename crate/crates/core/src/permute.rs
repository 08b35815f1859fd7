//! Typosquatting candidate generation.
//!
//! Eight single-edit techniques applied to the second-level label of a seed
//! name. All generators are pure; resource tables (keyboard adjacency, glyph
//! map, homophone dictionary, keyword list) are immutable after load.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{is_dns_char, DomainError, DomainName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Technique {
    Deletion,
    Insertion,
    Substitution,
    Transposition,
    Bitsquat,
    Homoglyph,
    Soundsquat,
    Combosquat,
}

impl Technique {
    /// Enumeration order; also the tie-break order when two techniques
    /// produce the same candidate name.
    pub const ALL: [Technique; 8] = [
        Technique::Deletion,
        Technique::Insertion,
        Technique::Substitution,
        Technique::Transposition,
        Technique::Bitsquat,
        Technique::Homoglyph,
        Technique::Soundsquat,
        Technique::Combosquat,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Technique::Deletion => "DELETION",
            Technique::Insertion => "INSERTION",
            Technique::Substitution => "SUBSTITUTION",
            Technique::Transposition => "TRANSPOSITION",
            Technique::Bitsquat => "BITSQUAT",
            Technique::Homoglyph => "HOMOGLYPH",
            Technique::Soundsquat => "SOUNDSQUAT",
            Technique::Combosquat => "COMBOSQUAT",
        }
    }

    pub fn parse(s: &str) -> Option<Technique> {
        Technique::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A generated variant together with the seed it came from and the technique
/// that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateDomain {
    pub original: DomainName,
    pub candidate: DomainName,
    pub technique: Technique,
}

pub type AdjacencyMap = BTreeMap<char, BTreeSet<char>>;
pub type GlyphMap = BTreeMap<char, BTreeSet<String>>;
pub type HomophoneMap = BTreeMap<String, BTreeSet<String>>;

/// The dictionaries the techniques draw from. A `None` table means the
/// resource was not supplied; techniques that need it are rejected.
#[derive(Debug, Clone, Default)]
pub struct GenResources {
    pub adjacency: Option<AdjacencyMap>,
    pub glyph_map: Option<GlyphMap>,
    pub homophones: Option<HomophoneMap>,
    pub keywords: Option<Vec<String>>,
    separators: Vec<String>,
    homoglyph_depth: usize,
}

impl GenResources {
    pub fn new() -> Self {
        Self {
            adjacency: None,
            glyph_map: None,
            homophones: None,
            keywords: None,
            separators: default_separators(),
            homoglyph_depth: 1,
        }
    }

    /// The embedded default tables: QWERTY adjacency, ASCII glyph
    /// confusions, an English homophone dictionary, and common lure
    /// keywords.
    pub fn builtin() -> Self {
        Self {
            adjacency: Some(
                parse_adjacency_json(include_str!("../data/adjacency_qwerty.json"))
                    .expect("embedded adjacency table is valid"),
            ),
            glyph_map: Some(
                parse_glyphs_json(include_str!("../data/glyphs_ascii.json"))
                    .expect("embedded glyph table is valid"),
            ),
            homophones: Some(
                parse_homophones_json(include_str!("../data/homophones_en.json"))
                    .expect("embedded homophone table is valid"),
            ),
            keywords: Some(
                parse_keywords_json(include_str!("../data/keywords.json"))
                    .expect("embedded keyword list is valid"),
            ),
            separators: default_separators(),
            homoglyph_depth: 1,
        }
    }

    pub fn separators(&self) -> &[String] {
        &self.separators
    }

    pub fn set_separators(&mut self, separators: Vec<String>) -> Result<(), ResourceError> {
        for sep in &separators {
            if let Some(ch) = sep.chars().find(|&c| !is_dns_char(c)) {
                return Err(ResourceError::IllegalValue {
                    table: "separators",
                    value: sep.clone(),
                    ch,
                });
            }
        }
        self.separators = separators;
        Ok(())
    }

    /// Maximum number of positions a single homoglyph candidate may replace.
    pub fn homoglyph_depth(&self) -> usize {
        self.homoglyph_depth
    }

    pub fn set_homoglyph_depth(&mut self, depth: usize) {
        self.homoglyph_depth = depth.max(1);
    }
}

fn default_separators() -> Vec<String> {
    vec![String::new(), "-".to_string()]
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenError {
    #[error("technique {technique} requires the {table} resource table")]
    MissingResource {
        technique: Technique,
        table: &'static str,
    },
    #[error("enabled technique set is empty")]
    NoTechniques,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResourceError {
    #[error("{table} table is not valid JSON: {detail}")]
    Json { table: &'static str, detail: String },
    #[error("{table} key \"{key}\" is not a single [a-z0-9] character")]
    BadKey { table: &'static str, key: String },
    #[error("{table} value \"{value}\" contains illegal character '{ch}'")]
    IllegalValue {
        table: &'static str,
        value: String,
        ch: char,
    },
    #[error("{table} value \"{value}\" is empty")]
    EmptyValue { table: &'static str, value: String },
}

/// Per-run generation statistics: candidates dropped for exceeding label
/// or name length bounds, and for other validity failures.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenStats {
    pub dropped_too_long: usize,
    pub dropped_invalid: usize,
}

impl GenStats {
    fn absorb(&mut self, other: GenStats) {
        self.dropped_too_long += other.dropped_too_long;
        self.dropped_invalid += other.dropped_invalid;
    }
}

/// All single-edit candidates of `technique` for `seed`, applied to the
/// second-level label only. The seed itself never appears in the output.
pub fn generate(
    seed: &DomainName,
    technique: Technique,
    res: &GenResources,
) -> Result<BTreeSet<CandidateDomain>, GenError> {
    generate_with_stats(seed, technique, res).map(|(set, _)| set)
}

pub fn generate_with_stats(
    seed: &DomainName,
    technique: Technique,
    res: &GenResources,
) -> Result<(BTreeSet<CandidateDomain>, GenStats), GenError> {
    let sld = seed.second_level();
    let labels = match technique {
        Technique::Deletion => deletions(sld),
        Technique::Insertion => insertions(
            sld,
            required(res.adjacency.as_ref(), technique, "adjacency")?,
        ),
        Technique::Substitution => substitutions(
            sld,
            required(res.adjacency.as_ref(), technique, "adjacency")?,
        ),
        Technique::Transposition => transpositions(sld),
        Technique::Bitsquat => bitsquats(sld),
        Technique::Homoglyph => homoglyphs(
            sld,
            required(res.glyph_map.as_ref(), technique, "glyph_map")?,
            res.homoglyph_depth,
        ),
        Technique::Soundsquat => soundsquats(
            sld,
            required(res.homophones.as_ref(), technique, "homophones")?,
        ),
        Technique::Combosquat => combosquats(
            sld,
            required(res.keywords.as_ref(), technique, "keywords")?,
            &res.separators,
        ),
    };

    let mut stats = GenStats::default();
    let mut out = BTreeSet::new();
    for label in labels {
        match seed.with_second_level(&label) {
            Ok(candidate) if candidate != *seed => {
                out.insert(CandidateDomain {
                    original: seed.clone(),
                    candidate,
                    technique,
                });
            }
            Ok(_) => {}
            Err(DomainError::LabelTooLong { .. }) | Err(DomainError::NameTooLong { .. }) => {
                stats.dropped_too_long += 1;
            }
            Err(_) => stats.dropped_invalid += 1,
        }
    }
    Ok((out, stats))
}

/// Union of `generate` over the enabled techniques, deduplicated by
/// candidate name. Ties keep the technique earliest in `Technique::ALL`.
pub fn generate_all(
    seed: &DomainName,
    res: &GenResources,
    enabled: &BTreeSet<Technique>,
) -> Result<BTreeSet<CandidateDomain>, GenError> {
    generate_all_with_stats(seed, res, enabled).map(|(set, _)| set)
}

pub fn generate_all_with_stats(
    seed: &DomainName,
    res: &GenResources,
    enabled: &BTreeSet<Technique>,
) -> Result<(BTreeSet<CandidateDomain>, GenStats), GenError> {
    if enabled.is_empty() {
        return Err(GenError::NoTechniques);
    }
    let mut stats = GenStats::default();
    let mut by_name: BTreeMap<DomainName, CandidateDomain> = BTreeMap::new();
    for technique in Technique::ALL.iter().filter(|t| enabled.contains(t)) {
        let (set, s) = generate_with_stats(seed, *technique, res)?;
        stats.absorb(s);
        for cand in set {
            by_name.entry(cand.candidate.clone()).or_insert(cand);
        }
    }
    Ok((by_name.into_values().collect(), stats))
}

fn required<'a, T>(
    table: Option<&'a T>,
    technique: Technique,
    name: &'static str,
) -> Result<&'a T, GenError> {
    table.ok_or(GenError::MissingResource {
        technique,
        table: name,
    })
}

fn deletions(sld: &str) -> BTreeSet<String> {
    let chars: Vec<char> = sld.chars().collect();
    (0..chars.len())
        .map(|i| {
            let mut label = chars.clone();
            label.remove(i);
            label.into_iter().collect()
        })
        .collect()
}

fn insertions(sld: &str, adjacency: &AdjacencyMap) -> BTreeSet<String> {
    let chars: Vec<char> = sld.chars().collect();
    let mut out = BTreeSet::new();
    for (i, c) in chars.iter().enumerate() {
        let Some(neighbors) = adjacency.get(c) else {
            continue;
        };
        for &n in neighbors {
            for at in [i, i + 1] {
                let mut label = chars.clone();
                label.insert(at, n);
                out.insert(label.iter().collect());
            }
        }
    }
    out
}

fn substitutions(sld: &str, adjacency: &AdjacencyMap) -> BTreeSet<String> {
    let chars: Vec<char> = sld.chars().collect();
    let mut out = BTreeSet::new();
    for (i, c) in chars.iter().enumerate() {
        let Some(neighbors) = adjacency.get(c) else {
            continue;
        };
        for &n in neighbors {
            let mut label = chars.clone();
            label[i] = n;
            out.insert(label.iter().collect());
        }
    }
    out
}

fn transpositions(sld: &str) -> BTreeSet<String> {
    let chars: Vec<char> = sld.chars().collect();
    let mut out = BTreeSet::new();
    for i in 0..chars.len().saturating_sub(1) {
        let mut label = chars.clone();
        label.swap(i, i + 1);
        out.insert(label.iter().collect());
    }
    out
}

fn bitsquats(sld: &str) -> BTreeSet<String> {
    let chars: Vec<char> = sld.chars().collect();
    let mut out = BTreeSet::new();
    for (i, c) in chars.iter().enumerate() {
        let octet = *c as u8;
        for bit in 0..8 {
            let flipped = octet ^ (1u8 << bit);
            let folded = (flipped as char).to_ascii_lowercase();
            if is_dns_char(folded) {
                let mut label = chars.clone();
                label[i] = folded;
                out.insert(label.iter().collect());
            }
        }
    }
    out
}

fn homoglyphs(sld: &str, glyphs: &GlyphMap, depth: usize) -> BTreeSet<String> {
    let chars: Vec<char> = sld.chars().collect();
    let replaceable: Vec<usize> = (0..chars.len())
        .filter(|&i| glyphs.contains_key(&chars[i]))
        .collect();
    let mut out = BTreeSet::new();
    let mut chosen: Vec<(usize, &str)> = Vec::new();
    expand_glyphs(
        &chars,
        glyphs,
        &replaceable,
        0,
        depth.max(1),
        &mut chosen,
        &mut out,
    );
    out
}

// Enumerates every choice of 1..=depth replaceable positions, each replaced
// by one of its glyph strings; replacements applied right to left so earlier
// indices stay valid.
fn expand_glyphs<'a>(
    chars: &[char],
    glyphs: &'a GlyphMap,
    replaceable: &[usize],
    from: usize,
    depth: usize,
    chosen: &mut Vec<(usize, &'a str)>,
    out: &mut BTreeSet<String>,
) {
    if !chosen.is_empty() {
        let mut label: Vec<char> = chars.to_vec();
        for &(pos, rep) in chosen.iter().rev() {
            label.splice(pos..pos + 1, rep.chars());
        }
        out.insert(label.into_iter().collect());
    }
    if chosen.len() == depth {
        return;
    }
    for (k, &pos) in replaceable.iter().enumerate().skip(from) {
        for rep in &glyphs[&chars[pos]] {
            chosen.push((pos, rep));
            expand_glyphs(chars, glyphs, replaceable, k + 1, depth, chosen, out);
            chosen.pop();
        }
    }
}

fn soundsquats(sld: &str, homophones: &HomophoneMap) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (word, alts) in homophones {
        if word.is_empty() || word.len() > sld.len() {
            continue;
        }
        // Every occurrence position, overlapping ones included.
        for start in 0..=sld.len() - word.len() {
            if !sld[start..].starts_with(word.as_str()) {
                continue;
            }
            for alt in alts {
                let mut label = String::with_capacity(sld.len());
                label.push_str(&sld[..start]);
                label.push_str(alt);
                label.push_str(&sld[start + word.len()..]);
                out.insert(label);
            }
        }
    }
    out
}

fn combosquats(sld: &str, keywords: &[String], separators: &[String]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for kw in keywords {
        for sep in separators {
            out.insert(format!("{kw}{sep}{sld}"));
            out.insert(format!("{sld}{sep}{kw}"));
        }
    }
    out
}

/// Adjacency table schema: JSON object, single-char key to a string of
/// neighbor characters (`{"a": "qwsz", ...}`).
pub fn parse_adjacency_json(text: &str) -> Result<AdjacencyMap, ResourceError> {
    const TABLE: &str = "adjacency";
    let raw: BTreeMap<String, String> =
        serde_json::from_str(text).map_err(|e| ResourceError::Json {
            table: TABLE,
            detail: e.to_string(),
        })?;
    let mut map = AdjacencyMap::new();
    for (key, value) in raw {
        let key_ch = single_alnum_key(TABLE, &key)?;
        let mut neighbors = BTreeSet::new();
        for ch in value.chars() {
            if !is_dns_char(ch) {
                return Err(ResourceError::IllegalValue {
                    table: TABLE,
                    value,
                    ch,
                });
            }
            neighbors.insert(ch);
        }
        map.insert(key_ch, neighbors);
    }
    Ok(map)
}

/// Glyph table schema: JSON object, single-char key to an array of
/// replacement strings (`{"m": ["rn", "nn"], ...}`).
pub fn parse_glyphs_json(text: &str) -> Result<GlyphMap, ResourceError> {
    const TABLE: &str = "glyph_map";
    let raw: BTreeMap<String, Vec<String>> =
        serde_json::from_str(text).map_err(|e| ResourceError::Json {
            table: TABLE,
            detail: e.to_string(),
        })?;
    let mut map = GlyphMap::new();
    for (key, values) in raw {
        let key_ch = single_alnum_key(TABLE, &key)?;
        let mut reps = BTreeSet::new();
        for value in values {
            check_dns_word(TABLE, &value)?;
            reps.insert(value);
        }
        map.insert(key_ch, reps);
    }
    Ok(map)
}

/// Homophone dictionary schema: JSON object, word to an array of homophone
/// words (`{"weather": ["whether"], ...}`).
pub fn parse_homophones_json(text: &str) -> Result<HomophoneMap, ResourceError> {
    const TABLE: &str = "homophones";
    let raw: BTreeMap<String, Vec<String>> =
        serde_json::from_str(text).map_err(|e| ResourceError::Json {
            table: TABLE,
            detail: e.to_string(),
        })?;
    let mut map = HomophoneMap::new();
    for (word, alts) in raw {
        check_dns_word(TABLE, &word)?;
        let mut set = BTreeSet::new();
        for alt in alts {
            check_dns_word(TABLE, &alt)?;
            set.insert(alt);
        }
        map.insert(word, set);
    }
    Ok(map)
}

/// Keyword list schema: JSON array of strings.
pub fn parse_keywords_json(text: &str) -> Result<Vec<String>, ResourceError> {
    const TABLE: &str = "keywords";
    let raw: Vec<String> = serde_json::from_str(text).map_err(|e| ResourceError::Json {
        table: TABLE,
        detail: e.to_string(),
    })?;
    for kw in &raw {
        check_dns_word(TABLE, kw)?;
    }
    Ok(raw)
}

fn single_alnum_key(table: &'static str, key: &str) -> Result<char, ResourceError> {
    let mut chars = key.chars();
    match (chars.next(), chars.next()) {
        (Some(ch), None) if ch.is_ascii_lowercase() || ch.is_ascii_digit() => Ok(ch),
        _ => Err(ResourceError::BadKey {
            table,
            key: key.to_string(),
        }),
    }
}

fn check_dns_word(table: &'static str, word: &str) -> Result<(), ResourceError> {
    if word.is_empty() {
        return Err(ResourceError::EmptyValue {
            table,
            value: word.to_string(),
        });
    }
    if let Some(ch) = word.chars().find(|&c| !is_dns_char(c)) {
        return Err(ResourceError::IllegalValue {
            table,
            value: word.to_string(),
            ch,
        });
    }
    Ok(())
}
