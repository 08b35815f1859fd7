//! Acceptance suite: one test per acceptance criterion, exercising the
//! generators against a brute-force oracle, the spoofing/timeout/dialog
//! semantics over the wire, the end-to-end fixture pipeline, classifier
//! conformance, metric definitions, store durability, and workload shape.

mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Output;
use std::time::{Duration, Instant};

use typoscan_core::classify::{
    build_index, classify_run, detect_language, normalize, Category, LanguageDetector, LanguageTag,
    RuleTable,
};
use typoscan_core::domain::DomainName;
use typoscan_core::driver::devtools::DevToolsDriver;
use typoscan_core::driver::fake::FakeDriver;
use typoscan_core::driver::{BrowserDriver, DialogKind, NavStatus, NavigateLimits};
use typoscan_core::fixture::emulator::{BrowserEmulator, HostMap};
use typoscan_core::fixture::server::FixtureServer;
use typoscan_core::manifest::parse_manifest;
use typoscan_core::permute::{
    generate, generate_all, AdjacencyMap, CandidateDomain, GenResources, GlyphMap, HomophoneMap,
    Technique,
};
use typoscan_core::profiles::UserAgentProfile;
use typoscan_core::report::{distinct_counts, distribution, ua_exclusivity, Granularity, GroupKey};
use typoscan_core::scan::{build_workload, build_workload_from_names, ScanRecord};
use typoscan_core::store::{RecordEnvelope, Store};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_typoscan")
}

fn run_cli(args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .output()
        .expect("spawn typoscan")
}

fn assert_ok(output: &Output, what: &str) {
    assert!(
        output.status.success(),
        "{what} failed: {}\n{}",
        String::from_utf8_lossy(&output.stderr),
        String::from_utf8_lossy(&output.stdout)
    );
}

const TABLE_NAMES: [&str; 12] = [
    "summary_counts",
    "fig1_messages_single_ua",
    "fig2_urls_single_ua",
    "fig3_messages_per_category",
    "fig4_sites_per_category",
    "fig5_messages_malicious_by_ua",
    "fig6_sites_malicious_by_ua",
    "fig7_sites_per_language",
    "fig8_messages_language_by_category",
    "fig9_sites_language_by_category",
    "fig10_messages_language_by_ua",
    "fig11_sites_language_by_ua",
];

fn assert_dirs_byte_identical(left: &Path, right: &Path) {
    for name in TABLE_NAMES {
        let a = std::fs::read(left.join(format!("{name}.csv")))
            .unwrap_or_else(|e| panic!("missing {name} in {}: {e}", left.display()));
        let b = std::fs::read(right.join(format!("{name}.csv")))
            .unwrap_or_else(|e| panic!("missing {name} in {}: {e}", right.display()));
        assert_eq!(
            a,
            b,
            "table {name} differs:\n--- {}\n{}\n--- {}\n{}",
            left.display(),
            String::from_utf8_lossy(&a),
            right.display(),
            String::from_utf8_lossy(&b)
        );
    }
}

/// GenResources mirroring the oracle's literal tables.
fn resources_for_oracle() -> GenResources {
    let tables = oracle::test_tables();
    let mut res = GenResources::new();
    res.adjacency = Some(
        tables
            .adjacency
            .iter()
            .map(|(k, v)| (*k, v.iter().copied().collect()))
            .collect::<AdjacencyMap>(),
    );
    res.glyph_map = Some(
        tables
            .glyphs
            .iter()
            .map(|(k, v)| (*k, v.iter().map(|s| s.to_string()).collect()))
            .collect::<GlyphMap>(),
    );
    res.homophones = Some(
        tables
            .homophones
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect::<HomophoneMap>(),
    );
    res.keywords = Some(tables.keywords.iter().map(|s| s.to_string()).collect());
    res
}

// Criterion 1: generator output equals an independent brute-force oracle,
// exhaustively over the {a,b,c,1} alphabet with label length <= 5, in under
// 30 seconds.
#[test]
fn criterion_01_generator_oracle_equivalence() {
    let started = Instant::now();
    let tables = oracle::test_tables();
    let resources = resources_for_oracle();
    let labels = oracle::all_labels(&['a', 'b', 'c', '1'], 5);
    assert_eq!(labels.len(), 4 + 16 + 64 + 256 + 1024);

    let mut compared = 0usize;
    for label in &labels {
        let seed = DomainName::parse(&format!("{label}.com")).unwrap();
        for technique in Technique::ALL {
            let expected = oracle::oracle(label, "com", technique.as_str(), &tables);
            let actual: BTreeSet<String> = generate(&seed, technique, &resources)
                .unwrap()
                .into_iter()
                .map(|c| c.candidate.name())
                .collect();
            assert_eq!(
                actual, expected,
                "technique {technique} over seed {label}.com"
            );
            compared += actual.len().max(1);
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(30),
        "oracle sweep took {elapsed:?}"
    );
    println!(
        "criterion 1 PASS: {} seeds x 8 techniques ({compared} candidates) match the oracle in {elapsed:?}",
        labels.len()
    );
}

// Criterion 2: 10 000 randomized seeds produce only candidates that
// re-parse as valid names and never equal the seed; bitsquat outputs differ
// from the original in exactly one octet bit pre-folding.
#[test]
fn criterion_02_generator_validity_randomized() {
    struct XorShift(u64);
    impl XorShift {
        fn next(&mut self) -> u64 {
            let mut x = self.0;
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            self.0 = x;
            x
        }
    }
    let mut rng = XorShift(0x5eed_cafe_f00d_0042);
    let alphabet: Vec<char> = ('a'..='z').chain('0'..='9').collect();
    let resources = resources_for_oracle();
    let enabled: BTreeSet<Technique> = Technique::ALL.into_iter().collect();

    let mut candidates_checked = 0usize;
    for _ in 0..10_000 {
        let len = 1 + (rng.next() % 8) as usize;
        let label: String = (0..len)
            .map(|_| alphabet[(rng.next() % alphabet.len() as u64) as usize])
            .collect();
        let seed = DomainName::parse(&format!("{label}.com")).unwrap();
        let generated = generate_all(&seed, &resources, &enabled).unwrap();
        for candidate in &generated {
            let reparsed = DomainName::parse(&candidate.candidate.name())
                .unwrap_or_else(|e| panic!("{} does not re-parse: {e}", candidate.candidate));
            assert_eq!(reparsed, candidate.candidate);
            assert_ne!(candidate.candidate, seed, "candidate equals seed {seed}");
        }
        // Bitsquat candidates differ in exactly one bit of one octet.
        for candidate in generate(&seed, Technique::Bitsquat, &resources).unwrap() {
            let original = seed.second_level().as_bytes();
            let mutated_name = candidate.candidate.name();
            let mutated = mutated_name.strip_suffix(".com").unwrap().as_bytes();
            assert_eq!(original.len(), mutated.len());
            let bit_diffs: u32 = original
                .iter()
                .zip(mutated)
                .map(|(a, b)| (a ^ b).count_ones())
                .sum();
            assert_eq!(bit_diffs, 1, "{} vs {}", seed, candidate.candidate);
            candidates_checked += 1;
        }
    }
    println!(
        "criterion 2 PASS: 10000 randomized seeds valid; {candidates_checked} bitsquat candidates one bit off"
    );
}

// Table 1 user-agent strings, byte for byte.
const TABLE1: [(&str, &str); 5] = [
    ("chrome", "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/69.0.3497.100 Safari/537.36"),
    ("ie", "Mozilla/5.0 (Windows NT 6.1; WOW64; Trident/7.0; rv:11.0) like Gecko"),
    ("iossafari", "Mozilla/5.0 (iPhone; CPU iPhone OS 12_0_1 like Mac OS X) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/12.0 Mobile/15E148 Safari/604.1"),
    ("firefox", "Mozilla/5.0 (Windows NT 10.0; WOW64; rv:46.0) Gecko/20100101 Firefox/46.0"),
    ("androidchrome", "Mozilla/5.0 (Linux; Android 8.1.0; TA-1053 Build/OPR1.170623.026) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/69.0.3497.100 Mobile Safari/537.3"),
];

// Criterion 3: scanning the fixture server with each built-in profile puts
// exactly the Table 1 string on the wire, logged server-side.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn criterion_03_ua_spoofing_byte_exact() {
    let specs = parse_manifest(
        r#"[{"domain": "catchall.test",
             "branches": [{"ua_pattern": "*", "load_ms": 0,
                            "dialogs": [{"message": "hello", "at_ms": 0}]}]}]"#,
    )
    .unwrap();
    let server = FixtureServer::start(specs, "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let emulator = BrowserEmulator::start(
        "127.0.0.1:0".parse().unwrap(),
        HostMap::MapAll(server.addr()),
    )
    .await
    .unwrap();
    let driver = DevToolsDriver::new(&emulator.endpoint());

    for (label, _) in TABLE1 {
        let profile = UserAgentProfile::builtin(label).unwrap();
        let mut session = driver.open_session(&profile).await.unwrap();
        let outcome = session
            .navigate("http://catchall.test", &NavigateLimits::default())
            .await
            .unwrap();
        session.close().await.unwrap();
        assert_eq!(outcome.status, NavStatus::Loaded, "{label}");
    }

    let log = server.ua_log();
    assert_eq!(log.len(), 5);
    for ((label, expected_ua), entry) in TABLE1.iter().zip(&log) {
        assert_eq!(
            entry.user_agent.as_bytes(),
            expected_ua.as_bytes(),
            "profile {label} sent a different User-Agent"
        );
    }
    println!("criterion 3 PASS: five server-logged User-Agent headers byte-identical to Table 1");
}

// Criterion 4: the one-second grace window after load bounds dialog
// capture, and a never-finishing page times out at 30 seconds.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn criterion_04_timeout_semantics() {
    let manifest = r#"[
        {"domain": "boundary.test",
         "branches": [{"ua_pattern": "*", "load_ms": 2000,
                        "dialogs": [{"message": "half second after load", "at_ms": 2500},
                                     {"message": "too late", "at_ms": 3500}]}]},
        {"domain": "hang.test",
         "branches": [{"ua_pattern": "*", "never_finishes": true}]}
    ]"#;
    let specs = parse_manifest(manifest).unwrap();
    let profile = UserAgentProfile::builtin("chrome").unwrap();
    let limits = NavigateLimits::default();
    assert_eq!((limits.grace_ms, limits.hard_cap_ms), (1_000, 30_000));

    // Fake driver, virtual clock.
    let fake = FakeDriver::new(specs.clone());
    let mut session = fake.open_session(&profile).await.unwrap();
    let outcome = session
        .navigate("http://boundary.test", &limits)
        .await
        .unwrap();
    let messages: Vec<&str> = outcome.dialogs.iter().map(|d| d.message.as_str()).collect();
    assert_eq!(messages, ["half second after load"]);
    let outcome = session.navigate("http://hang.test", &limits).await.unwrap();
    assert_eq!(outcome.status, NavStatus::Timeout);
    assert_eq!(outcome.duration_ms, 30_000);
    session.close().await.unwrap();

    // Wire path: DevTools client against the emulator and HTTP server, with
    // a faster-loading boundary page (same offsets relative to load).
    let wire_manifest = r#"[
        {"domain": "boundary.test",
         "branches": [{"ua_pattern": "*", "load_ms": 200,
                        "dialogs": [{"message": "half second after load", "at_ms": 700},
                                     {"message": "too late", "at_ms": 1700}]}]},
        {"domain": "hang.test",
         "branches": [{"ua_pattern": "*", "never_finishes": true}]}
    ]"#;
    let server = FixtureServer::start(
        parse_manifest(wire_manifest).unwrap(),
        "127.0.0.1:0".parse().unwrap(),
    )
    .await
    .unwrap();
    let emulator = BrowserEmulator::start(
        "127.0.0.1:0".parse().unwrap(),
        HostMap::MapAll(server.addr()),
    )
    .await
    .unwrap();
    let driver = DevToolsDriver::new(&emulator.endpoint());
    let mut session = driver.open_session(&profile).await.unwrap();
    let outcome = session
        .navigate("http://boundary.test", &limits)
        .await
        .unwrap();
    let messages: Vec<&str> = outcome.dialogs.iter().map(|d| d.message.as_str()).collect();
    assert_eq!(messages, ["half second after load"]);
    assert_eq!(outcome.status, NavStatus::Loaded);

    // The full 30-second hard cap, measured on the wall clock.
    let outcome = session.navigate("http://hang.test", &limits).await.unwrap();
    session.close().await.unwrap();
    assert_eq!(outcome.status, NavStatus::Timeout);
    assert!(
        (29_500..=30_500).contains(&outcome.duration_ms),
        "duration {} outside 30000 +/- 500",
        outcome.duration_ms
    );
    println!(
        "criterion 4 PASS: grace window captured +0.5s and dropped +1.5s dialogs; hang timed out at {} ms",
        outcome.duration_ms
    );
}

// Criterion 5: an infinite alert loop records exactly dialog_cap events,
// flags truncation, and the scan ends within hard_cap + 2s.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn criterion_05_adversarial_dialog_loop() {
    let manifest = r#"[
        {"domain": "looper.test",
         "branches": [{"ua_pattern": "*", "never_finishes": true, "loop_dialogs": true,
                        "dialogs": [{"message": "pay attention", "at_ms": 0}]}]}
    ]"#;
    let specs = parse_manifest(manifest).unwrap();
    let profile = UserAgentProfile::builtin("androidchrome").unwrap();
    let limits = NavigateLimits::default();

    // Fake driver at the default cap of 100.
    let fake = FakeDriver::new(specs.clone());
    let mut session = fake.open_session(&profile).await.unwrap();
    let outcome = session
        .navigate("http://looper.test", &limits)
        .await
        .unwrap();
    session.close().await.unwrap();
    assert_eq!(outcome.dialogs.len(), limits.dialog_cap);
    assert!(outcome.dialogs_truncated);

    // Wire path with the full default limits and a wall-clock bound.
    let server = FixtureServer::start(specs, "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let emulator = BrowserEmulator::start(
        "127.0.0.1:0".parse().unwrap(),
        HostMap::MapAll(server.addr()),
    )
    .await
    .unwrap();
    let driver = DevToolsDriver::new(&emulator.endpoint());
    let mut session = driver.open_session(&profile).await.unwrap();
    let started = Instant::now();
    let outcome = session
        .navigate("http://looper.test", &limits)
        .await
        .unwrap();
    let elapsed = started.elapsed();
    session.close().await.unwrap();
    assert_eq!(outcome.dialogs.len(), limits.dialog_cap);
    assert!(outcome.dialogs_truncated);
    assert_eq!(outcome.status, NavStatus::Timeout);
    assert!(
        elapsed <= Duration::from_millis(limits.hard_cap_ms + 2_000),
        "loop scan ran {elapsed:?}"
    );
    println!(
        "criterion 5 PASS: dialog loop truncated at {} events, scan ended in {elapsed:?}",
        limits.dialog_cap
    );
}

// Criterion 6: seed 42, 200-spec population; the fake-driver pipeline's
// tables are byte-identical to the independently computed ground truth and
// across repeated runs; the DevTools driver over HTTP matches the same
// tables.
#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn criterion_06_end_to_end_distribution_reproduction() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let pop = root.join("pop.json");
    let domains = root.join("domains.csv");
    assert_ok(
        &run_cli(&[
            "fixture",
            "gen",
            "--seed",
            "42",
            "--size",
            "200",
            "--out",
            pop.to_str().unwrap(),
            "--domains-out",
            domains.to_str().unwrap(),
        ]),
        "fixture gen",
    );

    // Independent ground truth from the manifest alone.
    let truth_dir = root.join("truth");
    assert_ok(
        &run_cli(&[
            "fixture",
            "truth",
            "--specs",
            pop.to_str().unwrap(),
            "--out",
            truth_dir.to_str().unwrap(),
        ]),
        "fixture truth",
    );

    // Two fake-driver pipeline runs in fresh directories.
    let mut report_dirs = Vec::new();
    for run in ["one", "two"] {
        let run_root = root.join(run);
        std::fs::create_dir_all(&run_root).unwrap();
        let config_path = run_root.join("config.json");
        let config = serde_json::json!({
            "driver": {"kind": "fake", "manifest": pop},
            "store_path": run_root.join("records.jsonl"),
            "report_dir": run_root.join("reports"),
            "pipeline": {"fixtures": pop},
        });
        std::fs::write(&config_path, config.to_string()).unwrap();
        assert_ok(
            &run_cli(&["--config", config_path.to_str().unwrap(), "pipeline"]),
            "pipeline",
        );
        report_dirs.push(run_root.join("reports"));
    }
    assert_dirs_byte_identical(&report_dirs[0], &truth_dir);
    assert_dirs_byte_identical(&report_dirs[0], &report_dirs[1]);

    // The same population served over HTTP and scanned with the DevTools
    // driver produces the same tables.
    let specs = typoscan_core::manifest::load_manifest(&pop).unwrap();
    let server = FixtureServer::start(specs, "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let emulator = BrowserEmulator::start(
        "127.0.0.1:0".parse().unwrap(),
        HostMap::MapAll(server.addr()),
    )
    .await
    .unwrap();

    let wire_root = root.join("wire");
    std::fs::create_dir_all(&wire_root).unwrap();
    let store_path = wire_root.join("records.jsonl");
    let profiles = UserAgentProfile::builtin_all();
    let run_cfg = typoscan_core::scan::RunConfig {
        run_id: "run".to_string(),
        pool_size: 32,
        limits: NavigateLimits::default(),
        max_attempts: 2,
        progress_every: None,
    };
    let driver = std::sync::Arc::new(DevToolsDriver::new(&emulator.endpoint()));
    let summary =
        typoscan_core::pipeline::stage_scan(&domains, &store_path, driver, &profiles, &run_cfg)
            .await
            .unwrap();
    assert_eq!(summary.total_jobs, 200 * 5);
    assert_eq!(summary.network_error, 0, "wire scan hit network errors");
    typoscan_core::pipeline::stage_classify(
        &store_path,
        &RuleTable::builtin(),
        &LanguageDetector::builtin(),
    )
    .unwrap();
    let wire_reports = wire_root.join("reports");
    let labels: Vec<String> = profiles.iter().map(|p| p.label.clone()).collect();
    typoscan_core::pipeline::stage_report(
        &store_path,
        &wire_reports,
        typoscan_core::report::ReportFormat::Csv,
        &labels,
        None,
    )
    .unwrap();
    assert_dirs_byte_identical(&wire_reports, &truth_dir);
    println!(
        "criterion 6 PASS: 200-spec population tables byte-identical (fake pipeline x2, DevTools-over-HTTP, ground truth)"
    );
}

// Criterion 7: the curated 60-message corpus classifies with 100%
// agreement, and malicious <=> {FRAUD, LOTTERY, APK} exhaustively.
#[test]
fn criterion_07_classifier_conformance() {
    let corpus = include_str!("data/messages_corpus.csv");
    let rules = RuleTable::builtin();
    let mut per_category: BTreeMap<Category, usize> = BTreeMap::new();
    let mut languages_seen: BTreeSet<String> = BTreeSet::new();
    let mut rows = 0usize;

    let mut reader = csv::ReaderBuilder::new().from_reader(corpus.as_bytes());
    for row in reader.records() {
        let row = row.unwrap();
        let raw_message = row.get(0).unwrap();
        let expected_category = Category::parse(row.get(1).unwrap()).unwrap();
        let expected_language = LanguageTag::new(row.get(2).unwrap()).unwrap();

        let message = normalize(raw_message);
        let language = detect_language(&message);
        assert_eq!(language, expected_language, "language of {message:?}");
        let classified = rules.categorize(&message, &language);
        assert_eq!(
            classified.category, expected_category,
            "category of {message:?} (matched rule {})",
            classified.matched_rule_id
        );
        assert_eq!(
            classified.malicious,
            matches!(
                expected_category,
                Category::Fraud | Category::Lottery | Category::Apk
            ),
            "maliciousness of {message:?}"
        );
        *per_category.entry(expected_category).or_insert(0) += 1;
        languages_seen.insert(expected_language.as_str().to_string());
        rows += 1;
    }

    assert_eq!(rows, 60, "corpus must hold 60 messages");
    for category in Category::ALL {
        assert!(
            per_category.get(&category).copied().unwrap_or(0) >= 4,
            "fewer than 4 corpus messages for {category}"
        );
    }
    assert!(languages_seen.contains("zh") && languages_seen.contains("de"));

    // Exhaustive maliciousness rule over the whole enum.
    for category in Category::ALL {
        assert_eq!(
            category.is_malicious(),
            matches!(
                category,
                Category::Fraud | Category::Lottery | Category::Apk
            )
        );
    }
    println!(
        "criterion 7 PASS: 60/60 corpus messages agree; malicious rule exhaustive over the enum"
    );
}

fn micro_record(url: &str, profile: &str, messages: &[&str]) -> ScanRecord {
    ScanRecord {
        job_id: format!("j-{url}-{profile}"),
        run_id: "micro".into(),
        url: url.into(),
        final_url: format!("{url}/"),
        profile_label: profile.into(),
        status: NavStatus::Loaded,
        duration_ms: 1_000,
        started_at: chrono::Utc::now(),
        dialogs: messages
            .iter()
            .map(|m| typoscan_core::driver::DialogEvent {
                message: (*m).to_string(),
                page_url: format!("{url}/"),
                kind: DialogKind::Alert,
                offset_ms: 0,
            })
            .collect(),
    }
}

// Criterion 8: hand-enumerated 12-record micro-fixture: distinct counts,
// exclusivity, and every distribution table match hand-computed values,
// including the MOBILE merge.
#[test]
fn criterion_08_metric_definitions_micro_fixture() {
    const M1: &str = "恭喜您中奖了"; // LOTTERY zh
    const M2: &str = "请下载专用app"; // APK zh
    const M3: &str = "Switch to the mobile version of this site?"; // MOBILE_SITE en
    const M4: &str = "Get our mobile app on the App Store"; // MOBILE_CLIENT en
    const M5: &str = "An error occurred: invalid token"; // ERRORS en
    const M6: &str = "Welcome to our site"; // MISC en

    let records = vec![
        micro_record("http://alpha.test", "iossafari", &[M1]),
        micro_record("http://alpha.test", "androidchrome", &[M1]),
        micro_record("http://beta.test", "androidchrome", &[M2, M5]),
        micro_record("http://beta.test", "chrome", &[]),
        micro_record("http://gamma.test", "iossafari", &[M3]),
        micro_record("http://gamma.test", "ie", &[]),
        micro_record("http://delta.test", "chrome", &[M4]),
        micro_record("http://delta.test", "firefox", &[]),
        micro_record("http://epsilon.test", "firefox", &[M6]),
        micro_record("http://epsilon.test", "ie", &[M6]),
        micro_record("http://zeta.test", "ie", &[M5]),
        micro_record("http://zeta.test", "chrome", &[]),
    ];
    assert_eq!(records.len(), 12);

    let (classifications, index) = classify_run(
        &records,
        &RuleTable::builtin(),
        &LanguageDetector::builtin(),
    );

    let counts = distinct_counts(&records, &classifications).unwrap();
    assert_eq!(counts.total_alerts, 9);
    assert_eq!(counts.distinct_urls, 6);
    assert_eq!(counts.distinct_messages, 6);
    assert_eq!(counts.malicious_alerts, 3);

    let labels: Vec<String> = ["chrome", "ie", "iossafari", "firefox", "androidchrome"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let exclusivity = ua_exclusivity(&records, &labels).unwrap();
    let singles: BTreeMap<&str, u64> = exclusivity
        .url_single
        .iter()
        .map(|(k, v)| (k.as_str(), *v))
        .collect();
    assert_eq!(
        singles,
        BTreeMap::from([
            ("androidchrome", 1),
            ("chrome", 1),
            ("firefox", 0),
            ("ie", 1),
            ("iossafari", 1),
        ])
    );
    assert_eq!(exclusivity.url_multi, 2);
    let message_singles: BTreeMap<&str, u64> = exclusivity
        .message_single
        .iter()
        .map(|(k, v)| (k.as_str(), *v))
        .collect();
    assert_eq!(
        message_singles,
        BTreeMap::from([
            ("androidchrome", 1),
            ("chrome", 1),
            ("firefox", 0),
            ("ie", 0),
            ("iossafari", 1),
        ])
    );
    assert_eq!(exclusivity.message_multi, 3);

    let rows_of = |table: &typoscan_core::report::ReportTable| -> BTreeMap<Vec<String>, u64> {
        table
            .rows
            .iter()
            .map(|r| (r.key.clone(), r.count))
            .collect()
    };
    let expected = |pairs: &[(&[&str], u64)]| -> BTreeMap<Vec<String>, u64> {
        pairs
            .iter()
            .map(|(key, count)| (key.iter().map(|s| s.to_string()).collect(), *count))
            .collect()
    };

    let fig3 = distribution(
        &classifications,
        &index,
        &[GroupKey::Category],
        Granularity::Message,
        "fig3",
    )
    .unwrap();
    assert_eq!(
        rows_of(&fig3),
        expected(&[
            (&["APK"], 1),
            (&["ERRORS"], 1),
            (&["LOTTERY"], 1),
            (&["MISC"], 1),
            (&["MOBILE"], 2),
        ])
    );
    assert_eq!(fig3.total, 6);

    let fig4 = distribution(
        &classifications,
        &index,
        &[GroupKey::Category],
        Granularity::Site,
        "fig4",
    )
    .unwrap();
    assert_eq!(
        rows_of(&fig4),
        expected(&[
            (&["APK"], 1),
            (&["ERRORS"], 2),
            (&["LOTTERY"], 1),
            (&["MISC"], 1),
            (&["MOBILE"], 2),
        ])
    );

    let fig5 = distribution(
        &classifications,
        &index,
        &[GroupKey::Category, GroupKey::Profile],
        Granularity::Message,
        "fig5",
    )
    .unwrap();
    let malicious_rows: BTreeMap<Vec<String>, u64> = rows_of(&fig5)
        .into_iter()
        .filter(|(key, _)| ["FRAUD", "LOTTERY", "APK"].contains(&key[0].as_str()))
        .collect();
    assert_eq!(
        malicious_rows,
        expected(&[
            (&["APK", "androidchrome"], 1),
            (&["LOTTERY", "androidchrome"], 1),
            (&["LOTTERY", "iossafari"], 1),
        ])
    );

    let fig7 = distribution(
        &classifications,
        &index,
        &[GroupKey::Language],
        Granularity::Site,
        "fig7",
    )
    .unwrap();
    assert_eq!(rows_of(&fig7), expected(&[(&["en"], 5), (&["zh"], 2)]));

    let fig8 = distribution(
        &classifications,
        &index,
        &[GroupKey::Language, GroupKey::Category],
        Granularity::Message,
        "fig8",
    )
    .unwrap();
    assert_eq!(
        rows_of(&fig8),
        expected(&[
            (&["en", "ERRORS"], 1),
            (&["en", "MISC"], 1),
            (&["en", "MOBILE"], 2),
            (&["zh", "APK"], 1),
            (&["zh", "LOTTERY"], 1),
        ])
    );

    let fig9 = distribution(
        &classifications,
        &index,
        &[GroupKey::Language, GroupKey::Category],
        Granularity::Site,
        "fig9",
    )
    .unwrap();
    assert_eq!(
        rows_of(&fig9),
        expected(&[
            (&["en", "ERRORS"], 2),
            (&["en", "MISC"], 1),
            (&["en", "MOBILE"], 2),
            (&["zh", "APK"], 1),
            (&["zh", "LOTTERY"], 1),
        ])
    );

    let fig10 = distribution(
        &classifications,
        &index,
        &[GroupKey::Language, GroupKey::Profile],
        Granularity::Message,
        "fig10",
    )
    .unwrap();
    assert_eq!(
        rows_of(&fig10),
        expected(&[
            (&["en", "androidchrome"], 1),
            (&["en", "chrome"], 1),
            (&["en", "firefox"], 1),
            (&["en", "ie"], 2),
            (&["en", "iossafari"], 1),
            (&["zh", "androidchrome"], 2),
            (&["zh", "iossafari"], 1),
        ])
    );
    assert_eq!(fig10.total, 9);

    let fig11 = distribution(
        &classifications,
        &index,
        &[GroupKey::Language, GroupKey::Profile],
        Granularity::Site,
        "fig11",
    )
    .unwrap();
    assert_eq!(
        rows_of(&fig11),
        expected(&[
            (&["en", "androidchrome"], 1),
            (&["en", "chrome"], 1),
            (&["en", "firefox"], 1),
            (&["en", "ie"], 2),
            (&["en", "iossafari"], 1),
            (&["zh", "androidchrome"], 2),
            (&["zh", "iossafari"], 1),
        ])
    );
    assert_eq!(fig11.total, 9);

    println!(
        "criterion 8 PASS: micro-fixture metrics match hand-computed tables, MOBILE merge included"
    );
}

// Criterion 9: 1000 randomized envelopes survive append/load byte-
// identically; one corrupt line loads the other 999 with corrupt_count 1.
#[test]
fn criterion_09_store_round_trip() {
    let fragments = [
        "You have won",
        "恭喜您中奖",
        "Größe prüfen",
        "🎉🎰💰",
        "Ωmega",
        "tab\tand  spaces",
        "König-straße",
        "请下载",
        "ümlaut üä ß",
        "🀄 mahjong",
    ];
    struct XorShift(u64);
    impl XorShift {
        fn next(&mut self) -> u64 {
            let mut x = self.0;
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            self.0 = x;
            x
        }
    }
    let mut rng = XorShift(0x0acc_e97a_4ce5_0009);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let mut store = Store::open(&path).unwrap();
    let mut originals = Vec::with_capacity(1_000);
    for i in 0..1_000u64 {
        let mut message = String::new();
        for _ in 0..(1 + rng.next() % 4) {
            message.push_str(fragments[(rng.next() % fragments.len() as u64) as usize]);
            message.push(' ');
        }
        let record = micro_record(&format!("http://s{i}.test"), "chrome", &[message.as_str()]);
        let envelope = RecordEnvelope::scan(&record);
        store.append(&envelope).unwrap();
        originals.push((envelope, message));
    }
    drop(store);

    let (loaded, report) = Store::load_all(&path, None).unwrap();
    assert_eq!(report.corrupt_lines, 0);
    assert_eq!(loaded.len(), 1_000);
    for (loaded_envelope, (original, message)) in loaded.iter().zip(&originals) {
        assert_eq!(loaded_envelope, original);
        let payload = loaded_envelope.scan_payload().unwrap();
        assert_eq!(payload.dialogs[0].message.as_bytes(), message.as_bytes());
    }

    // Corrupt one line in the middle (a torn write), keep the other 999.
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut rewritten = String::new();
    for (i, line) in lines.iter().enumerate() {
        if i == 500 {
            rewritten.push_str(&line[..line.len() / 2]);
        } else {
            rewritten.push_str(line);
        }
        rewritten.push('\n');
    }
    std::fs::write(&path, rewritten).unwrap();
    let (loaded, report) = Store::load_all(&path, None).unwrap();
    assert_eq!(loaded.len(), 999);
    assert_eq!(report.corrupt_lines, 1);
    println!("criterion 9 PASS: 1000 envelopes round-tripped; corrupt line isolated (999 + corrupt_count=1)");
}

// Criterion 10: N domains x 5 built-in profiles = exactly 5N jobs in 5
// contiguous passes.
#[test]
fn criterion_10_workload_shape() {
    let profiles = UserAgentProfile::builtin_all();
    for n in [1usize, 3, 17, 64] {
        let names: Vec<DomainName> = (0..n)
            .map(|i| DomainName::parse(&format!("d{i}.test")).unwrap())
            .collect();
        let jobs = build_workload_from_names(&names, &profiles).unwrap();
        assert_eq!(jobs.len(), 5 * n);
        for (pass, profile) in profiles.iter().enumerate() {
            for i in 0..n {
                let job = &jobs[pass * n + i];
                assert_eq!(job.profile_label, profile.label, "pass {pass} job {i}");
                assert_eq!(job.url, format!("http://d{i}.test"));
            }
        }
        let pairs: BTreeSet<(String, String)> = jobs
            .iter()
            .map(|j| (j.url.clone(), j.profile_label.clone()))
            .collect();
        assert_eq!(pairs.len(), 5 * n, "every (url, profile) pair exactly once");
    }

    // Same shape through the candidate-typed surface.
    let candidates: Vec<CandidateDomain> = (0..4)
        .map(|i| CandidateDomain {
            original: DomainName::parse("seed.com").unwrap(),
            candidate: DomainName::parse(&format!("c{i}.com")).unwrap(),
            technique: Technique::Deletion,
        })
        .collect();
    let jobs = build_workload(&candidates, &profiles).unwrap();
    assert_eq!(jobs.len(), 20);

    println!("criterion 10 PASS: workloads form 5 contiguous passes of N jobs each");
}

// The index rebuild used by the report stage matches what classify_run
// produced, so reports recomputed from a store see the same pairs.
#[test]
fn index_rebuild_consistency() {
    let records = vec![
        micro_record("http://a.test", "chrome", &["You have won a prize"]),
        micro_record("http://a.test", "firefox", &["You have won a prize"]),
        micro_record("http://b.test", "chrome", &["Welcome to our site"]),
    ];
    let (_classified, index) = classify_run(
        &records,
        &RuleTable::builtin(),
        &LanguageDetector::builtin(),
    );
    assert_eq!(build_index(&records), index);
}
