//! Pipeline stages behind the CLI subcommands. Each stage reads its
//! predecessor's file output and writes its own, so stages run separately
//! or composed; the composed run is exactly the stage sequence.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::classify::{
    build_index, classify_run, ClassificationRecord, ClassifiedMessage, LanguageDetector, RuleTable,
};
use crate::config::{ConfigError, DriverChoice, PipelineConfig};
use crate::domain::{DomainName, SuffixList};
use crate::driver::devtools::DevToolsDriver;
use crate::driver::fake::FakeDriver;
use crate::driver::BrowserDriver;
use crate::fixture::FixtureError;
use crate::manifest;
use crate::permute::{
    generate_all_with_stats, CandidateDomain, GenError, GenResources, GenStats, Technique,
};
use crate::report::{emit_report, figure_tables, ReportError, ReportFormat};
use crate::resolve::{
    filter_registered, resolve_batch, write_results_csv, DnsBackend, FilterSummary, ResolveError,
    ResolverConfig, WireBackend,
};
use crate::scan::{build_workload_from_names, run, RunConfig, RunError, RunSummary, WorkloadError};
use crate::store::{RecordEnvelope, RecordFilter, RecordType, Store, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("could not access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Manifest(#[from] crate::manifest::ManifestError),
    #[error("pipeline requires \"{0}\" in the configuration")]
    MissingInput(&'static str),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One skipped input row: line number (1-based) and reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct GenerateSummary {
    pub seeds: usize,
    pub candidates: usize,
    pub skipped: Vec<SkippedRow>,
    pub stats: GenStats,
}

/// Reads a `rank,domain` seed list, generates candidates for the enabled
/// techniques, and writes `technique,original,candidate` rows. Malformed
/// rows are skipped and reported with their line numbers.
pub fn stage_generate(
    seeds_path: &Path,
    out_path: &Path,
    techniques: &BTreeSet<Technique>,
    resources: &GenResources,
    suffixes: &SuffixList,
) -> Result<GenerateSummary, PipelineError> {
    let text = std::fs::read_to_string(seeds_path).map_err(io_err(seeds_path))?;
    let mut summary = GenerateSummary::default();
    let mut seeds: Vec<DomainName> = Vec::new();
    for (index, raw_line) in text.lines().enumerate() {
        let line = (index + 1) as u64;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let Some((rank, domain)) = trimmed.split_once(',') else {
            summary.skipped.push(SkippedRow {
                line,
                reason: "expected rank,domain".to_string(),
            });
            continue;
        };
        if rank.trim().parse::<u64>().is_err() {
            summary.skipped.push(SkippedRow {
                line,
                reason: format!("rank \"{}\" is not a number", rank.trim()),
            });
            continue;
        }
        match DomainName::parse_with(domain.trim(), suffixes) {
            Ok(seed) => seeds.push(seed),
            Err(e) => summary.skipped.push(SkippedRow {
                line,
                reason: e.to_string(),
            }),
        }
    }
    summary.seeds = seeds.len();

    let file = std::fs::File::create(out_path).map_err(io_err(out_path))?;
    let mut writer = csv::WriterBuilder::new().from_writer(file);
    writer.write_record(["technique", "original", "candidate"])?;
    for seed in &seeds {
        let (candidates, stats) = generate_all_with_stats(seed, resources, techniques)?;
        summary.stats.dropped_too_long += stats.dropped_too_long;
        summary.stats.dropped_invalid += stats.dropped_invalid;
        for candidate in candidates {
            writer.write_record([
                candidate.technique.as_str(),
                &candidate.original.name(),
                &candidate.candidate.name(),
            ])?;
            summary.candidates += 1;
        }
    }
    writer.flush().map_err(io_err(out_path))?;
    Ok(summary)
}

/// Reads a `technique,original,candidate` CSV.
pub fn read_candidates(
    path: &Path,
) -> Result<(Vec<CandidateDomain>, Vec<SkippedRow>), PipelineError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(file);
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let line = (index + 2) as u64;
        let row = row?;
        let parsed = (|| -> Result<CandidateDomain, String> {
            let technique = row
                .get(0)
                .and_then(Technique::parse)
                .ok_or_else(|| format!("unknown technique {:?}", row.get(0).unwrap_or("")))?;
            let original =
                DomainName::parse(row.get(1).unwrap_or("")).map_err(|e| e.to_string())?;
            let candidate =
                DomainName::parse(row.get(2).unwrap_or("")).map_err(|e| e.to_string())?;
            Ok(CandidateDomain {
                original,
                candidate,
                technique,
            })
        })();
        match parsed {
            Ok(candidate) => out.push(candidate),
            Err(reason) => skipped.push(SkippedRow { line, reason }),
        }
    }
    Ok((out, skipped))
}

/// Resolves a candidate list and writes the registered subset (same CSV
/// shape) plus a full `<out>.audit.csv` resolution dump.
pub async fn stage_resolve(
    candidates_path: &Path,
    out_path: &Path,
    backend: &dyn DnsBackend,
    cfg: &ResolverConfig,
) -> Result<(FilterSummary, Vec<SkippedRow>), PipelineError> {
    let (candidates, skipped) = read_candidates(candidates_path)?;
    let results = resolve_batch(&candidates, backend, cfg).await?;
    let (registered, summary) = filter_registered(&results);

    let file = std::fs::File::create(out_path).map_err(io_err(out_path))?;
    let mut writer = csv::WriterBuilder::new().from_writer(file);
    writer.write_record(["technique", "original", "candidate"])?;
    for candidate in &registered {
        writer.write_record([
            candidate.technique.as_str(),
            &candidate.original.name(),
            &candidate.candidate.name(),
        ])?;
    }
    writer.flush().map_err(io_err(out_path))?;

    let audit_path = out_path.with_extension("audit.csv");
    let audit = std::fs::File::create(&audit_path).map_err(io_err(&audit_path))?;
    write_results_csv(&results, audit)?;
    Ok((summary, skipped))
}

/// The system resolver, or the configured nameservers when present.
pub fn build_dns_backend(cfg: &ResolverConfig) -> Result<WireBackend, PipelineError> {
    if cfg.nameservers.is_empty() {
        Ok(WireBackend::system(cfg)?)
    } else {
        Ok(WireBackend::from_config(cfg)?)
    }
}

pub fn build_driver(choice: &DriverChoice) -> Arc<dyn BrowserDriver> {
    match choice {
        DriverChoice::Fake { specs } => Arc::new(FakeDriver::new(specs.clone())),
        DriverChoice::Devtools { endpoint } => Arc::new(DevToolsDriver::new(endpoint)),
    }
}

/// Domain names from any CSV with a `candidate` column.
pub fn read_scan_targets(path: &Path) -> Result<(Vec<DomainName>, Vec<SkippedRow>), PipelineError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(file);
    let headers = reader.headers()?.clone();
    let column = headers.iter().position(|h| h == "candidate").unwrap_or(0);
    let mut names = Vec::new();
    let mut seen = BTreeSet::new();
    let mut skipped = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let line = (index + 2) as u64;
        let row = row?;
        match DomainName::parse(row.get(column).unwrap_or("")) {
            Ok(name) => {
                if seen.insert(name.name()) {
                    names.push(name);
                }
            }
            Err(e) => skipped.push(SkippedRow {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok((names, skipped))
}

/// Scans every target under every profile, appending one record per job to
/// the store.
pub async fn stage_scan(
    registered_path: &Path,
    store_path: &Path,
    driver: Arc<dyn BrowserDriver>,
    profiles: &[crate::profiles::UserAgentProfile],
    run_cfg: &RunConfig,
) -> Result<RunSummary, PipelineError> {
    let (targets, _skipped) = read_scan_targets(registered_path)?;
    if targets.is_empty() {
        let _ = Store::open(store_path)?;
        return Ok(RunSummary::default());
    }
    let workload = build_workload_from_names(&targets, profiles)?;
    let mut store = Store::open(store_path)?;
    let mut sink = crate::store::StoreSink::new(&mut store);
    Ok(run(workload, driver, profiles, run_cfg, &mut sink).await?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassifySummary {
    pub scan_records: usize,
    pub distinct_messages: usize,
}

/// Classifies every distinct message in the store's scan records and
/// appends one classification record per message.
pub fn stage_classify(
    store_path: &Path,
    rules: &RuleTable,
    detector: &LanguageDetector,
) -> Result<ClassifySummary, PipelineError> {
    let filter = RecordFilter {
        record_type: Some(RecordType::Scan),
        run_id: None,
    };
    let (envelopes, _report) = Store::load_all(store_path, Some(&filter))?;
    let records: Vec<crate::scan::ScanRecord> = envelopes
        .iter()
        .map(|e| e.scan_payload())
        .collect::<Result<_, _>>()?;
    let (classified, _index) = classify_run(&records, rules, detector);

    let mut store = Store::open(store_path)?;
    for message in &classified {
        let record = ClassificationRecord::from_classified(message, rules.checksum());
        store.append(&RecordEnvelope::classification(&record))?;
    }
    Ok(ClassifySummary {
        scan_records: records.len(),
        distinct_messages: classified.len(),
    })
}

/// Builds and emits the figure tables for the store's records.
pub fn stage_report(
    store_path: &Path,
    report_dir: &Path,
    format: ReportFormat,
    expected_profiles: &[String],
    run_id: Option<&str>,
) -> Result<Vec<PathBuf>, PipelineError> {
    let scan_filter = RecordFilter {
        record_type: Some(RecordType::Scan),
        run_id: run_id.map(|s| s.to_string()),
    };
    let (scan_envelopes, _) = Store::load_all(store_path, Some(&scan_filter))?;
    let records: Vec<crate::scan::ScanRecord> = scan_envelopes
        .iter()
        .map(|e| e.scan_payload())
        .collect::<Result<_, _>>()?;

    let class_filter = RecordFilter {
        record_type: Some(RecordType::Classification),
        run_id: None,
    };
    let (class_envelopes, _) = Store::load_all(store_path, Some(&class_filter))?;
    // Latest classification wins per message (re-classification appends).
    let mut by_message: BTreeMap<String, ClassifiedMessage> = BTreeMap::new();
    for envelope in &class_envelopes {
        let record = envelope.classification_payload()?;
        by_message.insert(
            record.message.clone(),
            ClassifiedMessage {
                message: record.message,
                category: record.category,
                language: record.language,
                malicious: record.malicious,
                matched_rule_id: record.matched_rule_id,
            },
        );
    }
    let classifications: Vec<ClassifiedMessage> = by_message.into_values().collect();
    let index = build_index(&records);

    let tables = figure_tables(&records, &classifications, &index, expected_profiles)?;
    Ok(emit_report(&tables, format, report_dir)?)
}

#[derive(Debug, Default)]
pub struct PipelineSummary {
    pub generate: Option<GenerateSummary>,
    pub resolve: Option<FilterSummary>,
    pub scan: RunSummary,
    pub classify: ClassifySummary,
    pub reports: Vec<PathBuf>,
}

/// All stages in order, driven by one configuration. Intermediate files
/// land next to the store so a composed run equals the stage-by-stage run.
pub async fn stage_pipeline(config: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    config.validate()?;
    let store_path = config
        .store_path
        .clone()
        .ok_or(PipelineError::MissingInput("store_path"))?;
    let report_dir = config
        .report_dir
        .clone()
        .ok_or(PipelineError::MissingInput("report_dir"))?;
    let work_dir = store_path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&work_dir).map_err(io_err(&work_dir))?;

    let mut summary = PipelineSummary::default();
    let profiles = config.profiles()?;
    let labels: Vec<String> = profiles.iter().map(|p| p.label.clone()).collect();

    let registered_path = if let Some(fixtures) = &config.pipeline.fixtures {
        // Fixture domains are the registered set.
        let specs = manifest::load_manifest(fixtures)?;
        let path = work_dir.join("registered.csv");
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        let mut writer = csv::WriterBuilder::new().from_writer(file);
        writer.write_record(["candidate"])?;
        for spec in &specs {
            writer.write_record([spec.domain.as_str()])?;
        }
        writer.flush().map_err(io_err(&path))?;
        path
    } else if let Some(registered) = &config.pipeline.registered {
        registered.clone()
    } else if let Some(seeds) = &config.pipeline.seeds {
        let candidates_path = work_dir.join("candidates.csv");
        let generated = stage_generate(
            seeds,
            &candidates_path,
            &Technique::ALL.into_iter().collect(),
            &config.gen_resources()?,
            &config.suffix_list()?,
        )?;
        summary.generate = Some(generated);
        let registered_path = work_dir.join("registered.csv");
        let backend = build_dns_backend(&config.resolver)?;
        let (filter_summary, _skipped) = stage_resolve(
            &candidates_path,
            &registered_path,
            &backend,
            &config.resolver,
        )
        .await?;
        summary.resolve = Some(filter_summary);
        registered_path
    } else {
        return Err(PipelineError::MissingInput(
            "pipeline.fixtures, pipeline.registered, or pipeline.seeds",
        ));
    };

    let driver = build_driver(&config.driver_choice()?);
    summary.scan = stage_scan(
        &registered_path,
        &store_path,
        driver,
        &profiles,
        &config.run_config(),
    )
    .await?;
    summary.classify = stage_classify(&store_path, &config.rule_table()?, &config.detector()?)?;
    summary.reports = stage_report(
        &store_path,
        &report_dir,
        config.report_format()?,
        &labels,
        Some(&config.scan.run_id),
    )?;
    Ok(summary)
}
