//! Synthetic scam-site population with known ground truth.
//!
//! Generates deterministic fixture specs (UA-conditional dialog behavior,
//! annotated category/language/maliciousness), serves them over HTTP, and
//! computes the expected report tables directly from the fixture specs so
//! end-to-end runs have an oracle to match.

pub mod emulator;
pub mod server;

use std::collections::{BTreeMap, BTreeSet};

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classify::{normalize, Category, LanguageTag};
use crate::driver::{DialogKind, NavigateLimits};
use crate::manifest::{Branch, FixtureSpec, GroundTruth, ScriptedDialog, DIALOG_QUANTUM_MS};
use crate::profiles::UserAgentProfile;
use crate::report::{ReportRow, ReportTable};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("population size must be at least 1")]
    SizeZero,
    #[error("mix is invalid: {0}")]
    BadMix(String),
    #[error("unknown profile label \"{label}\" in mix")]
    UnknownProfile { label: String },
    #[error("could not bind {addr}: {source}")]
    Bind {
        addr: std::net::SocketAddr,
        source: std::io::Error,
    },
}

/// One archetype of site behavior: what kind of message it shows, in which
/// language, and which user agents it targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthProfile {
    pub category: Category,
    pub language: LanguageTag,
    pub targeted_profiles: Vec<String>,
}

/// Weighted archetype distribution; weights must sum to 1.
#[derive(Debug, Clone)]
pub struct PopulationMix {
    entries: Vec<(TruthProfile, f64)>,
}

impl PopulationMix {
    pub fn new(entries: Vec<(TruthProfile, f64)>) -> Result<Self, FixtureError> {
        if entries.is_empty() {
            return Err(FixtureError::BadMix("no entries".into()));
        }
        if entries.iter().any(|(_, w)| *w < 0.0) {
            return Err(FixtureError::BadMix("negative weight".into()));
        }
        let sum: f64 = entries.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FixtureError::BadMix(format!("weights sum to {sum}")));
        }
        for (profile, _) in &entries {
            for label in &profile.targeted_profiles {
                if ua_pattern_for(label).is_none() {
                    return Err(FixtureError::UnknownProfile {
                        label: label.clone(),
                    });
                }
            }
        }
        Ok(Self { entries })
    }

    /// Default mix echoing the measured landscape: a mobile-targeted
    /// majority, Chinese APK/GAMBLING, German LOTTERY, scattered
    /// non-malicious categories.
    pub fn default_mix() -> Self {
        use Category::*;
        let e = |category, language: LanguageTag, targets: &[&str], weight: f64| {
            (
                TruthProfile {
                    category,
                    language,
                    targeted_profiles: targets.iter().map(|s| s.to_string()).collect(),
                },
                weight,
            )
        };
        Self::new(vec![
            e(Apk, LanguageTag::Zh, &["androidchrome"], 0.20),
            e(Apk, LanguageTag::Zh, &["iossafari", "androidchrome"], 0.15),
            e(
                Lottery,
                LanguageTag::De,
                &["iossafari", "androidchrome"],
                0.15,
            ),
            e(Lottery, LanguageTag::De, &["iossafari"], 0.05),
            e(Lottery, LanguageTag::En, &["androidchrome"], 0.05),
            e(
                Fraud,
                LanguageTag::En,
                &["iossafari", "androidchrome"],
                0.06,
            ),
            e(Fraud, LanguageTag::Zh, &["androidchrome"], 0.04),
            e(
                Gambling,
                LanguageTag::Zh,
                &["chrome", "ie", "iossafari", "firefox", "androidchrome"],
                0.06,
            ),
            e(
                Errors,
                LanguageTag::En,
                &["chrome", "ie", "iossafari", "firefox", "androidchrome"],
                0.06,
            ),
            e(
                Download,
                LanguageTag::En,
                &["chrome", "ie", "firefox"],
                0.04,
            ),
            e(
                Adult,
                LanguageTag::En,
                &["chrome", "ie", "iossafari", "firefox", "androidchrome"],
                0.04,
            ),
            e(
                MobileSite,
                LanguageTag::En,
                &["iossafari", "androidchrome"],
                0.03,
            ),
            e(MobileSite, LanguageTag::De, &["androidchrome"], 0.02),
            e(MobileClient, LanguageTag::En, &["iossafari"], 0.03),
            e(MobileClient, LanguageTag::Zh, &["androidchrome"], 0.02),
        ])
        .expect("default mix is valid")
    }
}

/// A User-Agent substring that matches exactly one of the five built-in
/// profiles.
pub fn ua_pattern_for(label: &str) -> Option<&'static str> {
    match label {
        "chrome" => Some("Win64"),
        "ie" => Some("Trident"),
        "iossafari" => Some("iPhone"),
        "firefox" => Some("Firefox"),
        "androidchrome" => Some("Android"),
        _ => None,
    }
}

fn category_slug(category: Category) -> &'static str {
    match category {
        Category::Fraud => "fraud",
        Category::Lottery => "lottery",
        Category::Apk => "apk",
        Category::Gambling => "gambling",
        Category::Errors => "errors",
        Category::Download => "download",
        Category::Adult => "adult",
        Category::MobileSite => "mobsite",
        Category::MobileClient => "mobclient",
        Category::Misc => "misc",
    }
}

// Message templates crafted so the shipped rule table and language detector
// assign exactly the annotated category and language. The variant number
// keeps messages distinct across (or shared within) template groups.
fn message_for(category: Category, language: &LanguageTag, variant: usize) -> String {
    use Category::*;
    match (category, language) {
        (Apk, _) => format!("请下载专用app观看最新视频，立即安装 第{variant}版"),
        (Gambling, _) => format!("香港六合彩第{variant}期开奖结果已公布，点击查看投注信息"),
        (Fraud, LanguageTag::Zh) => {
            format!("新用户注册送{variant}元彩金，立即开户领取")
        }
        (Fraud, _) => format!(
            "Register today and claim your free credit of ${variant} for our casino"
        ),
        (Lottery, LanguageTag::De) => format!(
            "Herzlichen Glückwunsch! Sie haben ein iPhone gewonnen! Aktion Nr. {variant}"
        ),
        (Lottery, _) => format!(
            "Congratulations! You have won a prize, click OK to claim gift {variant}"
        ),
        (Errors, _) => format!(
            "An error occurred: invalid access token, please try again later (code {variant})"
        ),
        (Download, _) => format!(
            "Please update Adobe Flash Player to continue watching video {variant}"
        ),
        (Adult, _) => format!(
            "This website contains adult content, please confirm that you are 18 or older ({variant})"
        ),
        (MobileSite, LanguageTag::De) => format!(
            "Möchten Sie die mobile Version der Seite anzeigen? Variante {variant}"
        ),
        (MobileSite, _) => format!("Switch to the mobile version of this site? (v{variant})"),
        (MobileClient, LanguageTag::Zh) => {
            format!("请到应用商店下载我们的官方客户端 第{variant}版")
        }
        (MobileClient, _) => format!(
            "Get our mobile app on the App Store for a better experience (v{variant})"
        ),
        (Misc, LanguageTag::Zh) => format!("欢迎光临本站 第{variant}版"),
        (Misc, _) => format!("Welcome to our website, enjoy your stay (v{variant})"),
    }
}

/// Deterministic population for a seed: same seed, same specs. Dialog
/// timings are quantized and stay clear of the grace-window boundary.
pub fn generate_population(
    seed: u64,
    size: usize,
    mix: &PopulationMix,
) -> Result<Vec<FixtureSpec>, FixtureError> {
    if size == 0 {
        return Err(FixtureError::SizeZero);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cumulative: Vec<f64> = mix
        .entries
        .iter()
        .scan(0.0, |acc, (_, w)| {
            *acc += w;
            Some(*acc)
        })
        .collect();

    let mut specs = Vec::with_capacity(size);
    for index in 0..size {
        let roll: f64 = rng.random();
        let archetype_index = cumulative
            .iter()
            .position(|&edge| roll < edge)
            .unwrap_or(mix.entries.len() - 1);
        let truth_profile = &mix.entries[archetype_index].0;

        let load_ms = u64::from(rng.random_range(0..4u32)) * DIALOG_QUANTUM_MS;
        // Within the window with margin: during load or up to load+500.
        let at_ms = match rng.random_range(0..3u32) {
            0 => 0,
            1 => DIALOG_QUANTUM_MS,
            _ => load_ms + 500,
        };
        // Messages are shared across sites of the same archetype that land
        // on the same variant.
        let variant = index % 17;
        let message = message_for(truth_profile.category, &truth_profile.language, variant);

        let branches = truth_profile
            .targeted_profiles
            .iter()
            .map(|label| Branch {
                ua_pattern: ua_pattern_for(label)
                    .expect("mix validated labels")
                    .to_string(),
                load_ms,
                dialogs: vec![ScriptedDialog {
                    message: message.clone(),
                    at_ms,
                    kind: DialogKind::Alert,
                }],
                never_finishes: false,
                loop_dialogs: false,
            })
            .collect();

        specs.push(FixtureSpec {
            domain: format!("s{index:04}-{}.test", category_slug(truth_profile.category)),
            branches,
            truth: Some(GroundTruth {
                category: truth_profile.category,
                language: truth_profile.language.clone(),
                malicious: truth_profile.category.is_malicious(),
                targeted_profiles: truth_profile.targeted_profiles.clone(),
            }),
        });
    }
    Ok(specs)
}

/// The scripted observation-window rule: which scripted dialogs a scan with
/// these limits observes.
fn visible_dialogs<'a>(branch: &'a Branch, limits: &NavigateLimits) -> Vec<&'a ScriptedDialog> {
    let window_end = if branch.never_finishes {
        limits.hard_cap_ms
    } else if branch.load_ms + limits.grace_ms <= limits.hard_cap_ms {
        branch.load_ms + limits.grace_ms
    } else {
        limits.hard_cap_ms
    };
    branch
        .dialogs
        .iter()
        .filter(|d| d.at_ms < window_end)
        .collect()
}

/// Expected report tables computed straight from the fixture specs,
/// independent of the driver, orchestrator, store, and classifier paths.
/// Table names, dimensions, and row ordering mirror the analytics emitter
/// so files can be compared byte for byte.
pub fn ground_truth_tables(
    specs: &[FixtureSpec],
    profiles: &[UserAgentProfile],
    limits: &NavigateLimits,
) -> Vec<ReportTable> {
    struct Fact {
        message: String,
        url: String,
        site: String,
        profile: String,
        category_display: &'static str,
        language: String,
        malicious: bool,
    }

    let mut facts: Vec<Fact> = Vec::new();
    let mut total_alerts = 0u64;
    let mut malicious_alerts = 0u64;
    for spec in specs {
        let truth = spec.truth.as_ref().expect("ground truth requires truth");
        for profile in profiles {
            let Some(branch) = spec.branch_for(&profile.ua_string) else {
                continue;
            };
            for dialog in visible_dialogs(branch, limits) {
                total_alerts += 1;
                if truth.malicious {
                    malicious_alerts += 1;
                }
                facts.push(Fact {
                    message: normalize(&dialog.message),
                    url: format!("http://{}", spec.domain),
                    site: spec.domain.clone(),
                    profile: profile.label.clone(),
                    category_display: truth.category.display_group(),
                    language: truth.language.as_str().to_string(),
                    malicious: truth.malicious,
                });
            }
        }
    }

    let distinct_urls: BTreeSet<&str> = facts.iter().map(|f| f.url.as_str()).collect();
    let distinct_sites: BTreeSet<&str> = facts.iter().map(|f| f.site.as_str()).collect();
    let distinct_messages: BTreeSet<&str> = facts.iter().map(|f| f.message.as_str()).collect();

    let mut url_profiles: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut message_profiles: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for fact in &facts {
        url_profiles
            .entry(&fact.url)
            .or_default()
            .insert(&fact.profile);
        message_profiles
            .entry(&fact.message)
            .or_default()
            .insert(&fact.profile);
    }
    let mut url_single: BTreeMap<String, u64> =
        profiles.iter().map(|p| (p.label.clone(), 0)).collect();
    let mut url_multi = 0u64;
    for (_, set) in url_profiles {
        if set.len() == 1 {
            *url_single
                .entry(set.first().unwrap().to_string())
                .or_insert(0) += 1;
        } else {
            url_multi += 1;
        }
    }
    let mut message_single: BTreeMap<String, u64> =
        profiles.iter().map(|p| (p.label.clone(), 0)).collect();
    let mut message_multi = 0u64;
    for (_, set) in message_profiles {
        if set.len() == 1 {
            *message_single
                .entry(set.first().unwrap().to_string())
                .or_insert(0) += 1;
        } else {
            message_multi += 1;
        }
    }

    // Distinct entities per key tuple, deduplicated per (key, entity).
    let count_distinct = |key_of: &dyn Fn(&Fact) -> Vec<String>,
                          entity_of: &dyn Fn(&Fact) -> &str,
                          keep: &dyn Fn(&Fact) -> bool|
     -> BTreeMap<Vec<String>, u64> {
        let mut buckets: BTreeMap<Vec<String>, BTreeSet<String>> = BTreeMap::new();
        for fact in facts.iter().filter(|f| keep(f)) {
            buckets
                .entry(key_of(fact))
                .or_default()
                .insert(entity_of(fact).to_string());
        }
        buckets
            .into_iter()
            .map(|(k, set)| (k, set.len() as u64))
            .collect()
    };
    fn all(_: &Fact) -> bool {
        true
    }
    fn malicious_only(f: &Fact) -> bool {
        f.malicious
    }
    fn message(f: &Fact) -> &str {
        &f.message
    }
    fn site(f: &Fact) -> &str {
        &f.site
    }

    let table = |name: &str, dims: &[&str], counts: BTreeMap<Vec<String>, u64>| {
        let rows: Vec<ReportRow> = counts
            .into_iter()
            .map(|(key, count)| ReportRow { key, count })
            .collect();
        let total = rows.iter().map(|r| r.count).sum();
        ReportTable {
            name: name.to_string(),
            dimensions: dims.iter().map(|d| d.to_string()).collect(),
            rows,
            total,
        }
    };

    let summary: BTreeMap<Vec<String>, u64> = [
        ("distinct_messages", distinct_messages.len() as u64),
        ("distinct_sites", distinct_sites.len() as u64),
        ("distinct_urls", distinct_urls.len() as u64),
        ("malicious_alerts", malicious_alerts),
        ("multi_ua_messages", message_multi),
        ("multi_ua_urls", url_multi),
        ("single_ua_messages", message_single.values().sum()),
        ("single_ua_urls", url_single.values().sum()),
        ("total_alerts", total_alerts),
    ]
    .into_iter()
    .map(|(metric, value)| (vec![metric.to_string()], value))
    .collect();

    vec![
        table("summary_counts", &["metric"], summary),
        table(
            "fig1_messages_single_ua",
            &["profile"],
            message_single
                .into_iter()
                .map(|(label, count)| (vec![label], count))
                .collect(),
        ),
        table(
            "fig2_urls_single_ua",
            &["profile"],
            url_single
                .into_iter()
                .map(|(label, count)| (vec![label], count))
                .collect(),
        ),
        table(
            "fig3_messages_per_category",
            &["category"],
            count_distinct(&|f| vec![f.category_display.to_string()], &message, &all),
        ),
        table(
            "fig4_sites_per_category",
            &["category"],
            count_distinct(&|f| vec![f.category_display.to_string()], &site, &all),
        ),
        table(
            "fig5_messages_malicious_by_ua",
            &["category", "profile"],
            count_distinct(
                &|f| vec![f.category_display.to_string(), f.profile.clone()],
                &message,
                &malicious_only,
            ),
        ),
        table(
            "fig6_sites_malicious_by_ua",
            &["category", "profile"],
            count_distinct(
                &|f| vec![f.category_display.to_string(), f.profile.clone()],
                &site,
                &malicious_only,
            ),
        ),
        table(
            "fig7_sites_per_language",
            &["language"],
            count_distinct(&|f| vec![f.language.clone()], &site, &all),
        ),
        table(
            "fig8_messages_language_by_category",
            &["language", "category"],
            count_distinct(
                &|f| vec![f.language.clone(), f.category_display.to_string()],
                &message,
                &all,
            ),
        ),
        table(
            "fig9_sites_language_by_category",
            &["language", "category"],
            count_distinct(
                &|f| vec![f.language.clone(), f.category_display.to_string()],
                &site,
                &all,
            ),
        ),
        table(
            "fig10_messages_language_by_ua",
            &["language", "profile"],
            count_distinct(
                &|f| vec![f.language.clone(), f.profile.clone()],
                &message,
                &all,
            ),
        ),
        table(
            "fig11_sites_language_by_ua",
            &["language", "profile"],
            count_distinct(
                &|f| vec![f.language.clone(), f.profile.clone()],
                &site,
                &all,
            ),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{detect_language, RuleTable};

    #[test]
    fn population_is_deterministic() {
        let mix = PopulationMix::default_mix();
        let a = generate_population(42, 10, &mix).unwrap();
        let b = generate_population(42, 10, &mix).unwrap();
        assert_eq!(a, b);
        let c = generate_population(43, 10, &mix).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_mix_yields_single_category() {
        let mix = PopulationMix::new(vec![(
            TruthProfile {
                category: Category::Lottery,
                language: LanguageTag::De,
                targeted_profiles: vec!["iossafari".into()],
            },
            1.0,
        )])
        .unwrap();
        let specs = generate_population(7, 25, &mix).unwrap();
        for spec in &specs {
            let truth = spec.truth.as_ref().unwrap();
            assert_eq!(truth.category, Category::Lottery);
            assert!(truth.malicious);
        }
    }

    #[test]
    fn invalid_mixes_are_rejected() {
        assert!(matches!(
            PopulationMix::new(vec![]),
            Err(FixtureError::BadMix(_))
        ));
        let half = PopulationMix::new(vec![(
            TruthProfile {
                category: Category::Misc,
                language: LanguageTag::En,
                targeted_profiles: vec!["chrome".into()],
            },
            0.5,
        )]);
        assert!(matches!(half, Err(FixtureError::BadMix(_))));
        assert!(matches!(
            generate_population(1, 0, &PopulationMix::default_mix()),
            Err(FixtureError::SizeZero)
        ));
    }

    #[test]
    fn generated_messages_classify_to_their_truth() {
        let mix = PopulationMix::default_mix();
        let specs = generate_population(42, 120, &mix).unwrap();
        let rules = RuleTable::builtin();
        for spec in &specs {
            let truth = spec.truth.as_ref().unwrap();
            for branch in &spec.branches {
                for dialog in &branch.dialogs {
                    let message = normalize(&dialog.message);
                    let language = detect_language(&message);
                    assert_eq!(
                        language, truth.language,
                        "language of {message:?} in {}",
                        spec.domain
                    );
                    let classified = rules.categorize(&message, &language);
                    assert_eq!(
                        classified.category, truth.category,
                        "category of {message:?} in {}",
                        spec.domain
                    );
                }
            }
        }
    }

    #[test]
    fn ua_patterns_are_mutually_exclusive_over_builtin_profiles() {
        let profiles = UserAgentProfile::builtin_all();
        for profile in &profiles {
            let matching: Vec<&str> = profiles
                .iter()
                .filter_map(|p| ua_pattern_for(&p.label))
                .filter(|pattern| profile.ua_string.contains(*pattern))
                .collect();
            assert_eq!(
                matching.len(),
                1,
                "profile {} matched patterns {matching:?}",
                profile.label
            );
        }
    }

    #[test]
    fn branches_target_exactly_the_annotated_profiles() {
        let mix = PopulationMix::default_mix();
        let specs = generate_population(9, 60, &mix).unwrap();
        let profiles = UserAgentProfile::builtin_all();
        for spec in &specs {
            let truth = spec.truth.as_ref().unwrap();
            for profile in &profiles {
                let targeted = truth.targeted_profiles.contains(&profile.label);
                let has_dialogs = spec
                    .branch_for(&profile.ua_string)
                    .map(|b| !b.dialogs.is_empty())
                    .unwrap_or(false);
                assert_eq!(
                    targeted, has_dialogs,
                    "{} vs {}",
                    spec.domain, profile.label
                );
            }
        }
    }

    #[test]
    fn ground_truth_summary_is_consistent() {
        let mix = PopulationMix::default_mix();
        let specs = generate_population(42, 50, &mix).unwrap();
        let profiles = UserAgentProfile::builtin_all();
        let tables = ground_truth_tables(&specs, &profiles, &NavigateLimits::default());
        let summary = &tables[0];
        assert_eq!(summary.name, "summary_counts");
        let metric = |name: &str| {
            summary
                .rows
                .iter()
                .find(|r| r.key[0] == name)
                .map(|r| r.count)
                .unwrap()
        };
        // Every generated site shows dialogs to at least one profile.
        assert_eq!(metric("distinct_urls"), 50);
        assert_eq!(metric("distinct_sites"), 50);
        assert!(metric("total_alerts") >= metric("malicious_alerts"));
        assert_eq!(
            metric("single_ua_urls") + metric("multi_ua_urls"),
            metric("distinct_urls")
        );
        assert_eq!(
            metric("single_ua_messages") + metric("multi_ua_messages"),
            metric("distinct_messages")
        );
        // Category partition over messages matches the distinct count.
        let fig3 = tables
            .iter()
            .find(|t| t.name == "fig3_messages_per_category")
            .unwrap();
        assert_eq!(fig3.total, metric("distinct_messages"));
    }
}
