//! typoscan: generate typosquatting candidates, filter the registered ones,
//! scan them under spoofed user agents while recording JavaScript dialogs,
//! classify the captured messages, and emit distribution report tables.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use typoscan_core::config::{DriverKind, PipelineConfig};
use typoscan_core::fixture::{
    emulator::{BrowserEmulator, HostMap},
    generate_population, ground_truth_tables,
    server::FixtureServer,
    PopulationMix,
};
use typoscan_core::manifest::load_manifest;
use typoscan_core::permute::Technique;
use typoscan_core::pipeline::{
    build_dns_backend, build_driver, stage_classify, stage_generate, stage_pipeline, stage_report,
    stage_resolve, stage_scan, SkippedRow,
};
use typoscan_core::profiles::UserAgentProfile;
use typoscan_core::report::{emit_report, ReportFormat};

#[derive(Parser)]
#[command(
    name = "typoscan",
    version,
    about = "Typosquatting pop-up scam scan pipeline",
    propagate_version = true
)]
struct Cli {
    /// JSON pipeline configuration file.
    #[arg(long, global = true, env = "TYPOSCAN_CONFIG")]
    config: Option<PathBuf>,

    /// Driver override: fake or devtools.
    #[arg(long, global = true, env = "TYPOSCAN_DRIVER")]
    driver: Option<String>,

    /// Seed for all randomness (fixture population generation).
    #[arg(long, global = true, env = "TYPOSCAN_SEED", default_value_t = 42)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate typosquatting candidates from a rank,domain seed list.
    Generate {
        /// Seed CSV (`rank,domain` per line, Alexa list shape).
        #[arg(long)]
        seeds: PathBuf,
        /// Output candidate CSV (`technique,original,candidate`).
        #[arg(long, env = "TYPOSCAN_OUT")]
        out: PathBuf,
        /// Comma-separated technique subset (default: all eight).
        #[arg(long, value_delimiter = ',')]
        techniques: Vec<String>,
    },
    /// Resolve candidates and keep the registered ones.
    Resolve {
        /// Candidate CSV from the generate stage.
        #[arg(long)]
        candidates: PathBuf,
        /// Output registered CSV; a full audit dump lands next to it.
        #[arg(long, env = "TYPOSCAN_OUT")]
        out: PathBuf,
    },
    /// Scan registered domains under every configured profile.
    Scan {
        /// CSV with a `candidate` column naming the domains to scan.
        #[arg(long)]
        registered: PathBuf,
        /// Record store path (overrides the config).
        #[arg(long, env = "TYPOSCAN_STORE")]
        store: Option<PathBuf>,
        /// Fixture manifest for the fake driver.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// DevTools endpoint (host:port) for the devtools driver.
        #[arg(long)]
        endpoint: Option<String>,
        /// Comma-separated profile labels (overrides the config).
        #[arg(long, value_delimiter = ',')]
        profiles: Vec<String>,
        /// Run identifier recorded on every scan record.
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Classify every distinct captured message in the store.
    Classify {
        #[arg(long, env = "TYPOSCAN_STORE")]
        store: Option<PathBuf>,
    },
    /// Compute and emit the figure-analogue report tables.
    Report {
        #[arg(long, env = "TYPOSCAN_STORE")]
        store: Option<PathBuf>,
        /// Report output directory.
        #[arg(long, env = "TYPOSCAN_OUT")]
        out: Option<PathBuf>,
        /// csv or json.
        #[arg(long)]
        format: Option<String>,
        /// Restrict to one run's scan records.
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Run every stage from one configuration.
    Pipeline {},
    /// Fixture population tools: generate, serve, emulate, ground truth.
    Fixture {
        #[command(subcommand)]
        command: FixtureCommand,
    },
}

#[derive(Subcommand)]
enum FixtureCommand {
    /// Generate a deterministic fixture population manifest.
    Gen {
        /// Output manifest path (JSON).
        #[arg(long, env = "TYPOSCAN_OUT")]
        out: PathBuf,
        /// Number of fixture sites.
        #[arg(long, default_value_t = 200)]
        size: usize,
        /// Also write the domain list as a scan-ready CSV.
        #[arg(long)]
        domains_out: Option<PathBuf>,
    },
    /// Compute the population's expected report tables from its manifest.
    Truth {
        /// Fixture manifest path.
        #[arg(long)]
        specs: PathBuf,
        /// Output directory for the expected tables.
        #[arg(long, env = "TYPOSCAN_OUT")]
        out: PathBuf,
        /// csv or json.
        #[arg(long)]
        format: Option<String>,
    },
    /// Serve a fixture population over HTTP until interrupted.
    Serve {
        #[arg(long)]
        specs: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Run the DevTools browser emulator until interrupted.
    Emulate {
        #[arg(long, default_value = "127.0.0.1:9222")]
        bind: SocketAddr,
        /// Route every page fetch to this address (e.g. the fixture server).
        #[arg(long)]
        map_all: Option<SocketAddr>,
    },
}

#[tokio::main]
async fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(driver) = &cli.driver {
        config.driver.kind = match driver.as_str() {
            "fake" => DriverKind::Fake,
            "devtools" => DriverKind::Devtools,
            other => bail!("unknown driver \"{other}\" (expected fake or devtools)"),
        };
    }

    let seed = cli.seed;
    match cli.command {
        Command::Generate {
            seeds,
            out,
            techniques,
        } => {
            let enabled = parse_techniques(&techniques)?;
            let resources = config.gen_resources().context("generate stage")?;
            let suffixes = config.suffix_list().context("generate stage")?;
            let summary = stage_generate(&seeds, &out, &enabled, &resources, &suffixes)
                .context("generate stage")?;
            warn_skipped("generate", &summary.skipped);
            if summary.seeds == 0 {
                eprintln!("generate: warning: seed list is empty");
            }
            eprintln!(
                "generate: {} seeds -> {} candidates ({} dropped over-length, {} dropped invalid)",
                summary.seeds,
                summary.candidates,
                summary.stats.dropped_too_long,
                summary.stats.dropped_invalid
            );
        }
        Command::Resolve { candidates, out } => {
            let backend = build_dns_backend(&config.resolver).context("resolve stage")?;
            let (summary, skipped) = stage_resolve(&candidates, &out, &backend, &config.resolver)
                .await
                .context("resolve stage")?;
            warn_skipped("resolve", &skipped);
            eprintln!(
                "resolve: {} registered, {} unregistered, {} unresolved",
                summary.registered, summary.unregistered, summary.unresolved
            );
        }
        Command::Scan {
            registered,
            store,
            manifest,
            endpoint,
            profiles,
            run_id,
        } => {
            if let Some(path) = manifest {
                config.driver.manifest = Some(path);
            }
            if let Some(endpoint) = endpoint {
                config.driver.endpoint = Some(endpoint);
            }
            if !profiles.is_empty() {
                config.scan.profiles = profiles;
            }
            if let Some(run_id) = run_id {
                config.scan.run_id = run_id;
            }
            // Validate configuration before any scan starts.
            let resolved_profiles = config.profiles().context("scan stage")?;
            let choice = config.driver_choice().context("scan stage")?;
            let store_path = store
                .or_else(|| config.store_path.clone())
                .context("scan stage: no store path (set --store or store_path)")?;
            let summary = stage_scan(
                &registered,
                &store_path,
                build_driver(&choice),
                &resolved_profiles,
                &config.run_config(),
            )
            .await
            .context("scan stage")?;
            eprintln!(
                "scan: {} jobs ({} loaded, {} timeout, {} network errors, {} retried, {} truncated)",
                summary.total_jobs,
                summary.loaded,
                summary.timeout,
                summary.network_error,
                summary.retried_jobs,
                summary.truncated_outcomes
            );
        }
        Command::Classify { store } => {
            let store_path = store
                .or_else(|| config.store_path.clone())
                .context("classify stage: no store path (set --store or store_path)")?;
            let rules = config.rule_table().context("classify stage")?;
            let detector = config.detector().context("classify stage")?;
            let summary =
                stage_classify(&store_path, &rules, &detector).context("classify stage")?;
            eprintln!(
                "classify: {} scan records -> {} distinct messages (rule table {})",
                summary.scan_records,
                summary.distinct_messages,
                rules.checksum()
            );
        }
        Command::Report {
            store,
            out,
            format,
            run_id,
        } => {
            let store_path = store
                .or_else(|| config.store_path.clone())
                .context("report stage: no store path (set --store or store_path)")?;
            let report_dir = out
                .or_else(|| config.report_dir.clone())
                .context("report stage: no output dir (set --out or report_dir)")?;
            if let Some(format) = format {
                config.report_format = format;
            }
            let format = config.report_format().context("report stage")?;
            let labels = config
                .profiles()
                .context("report stage")?
                .into_iter()
                .map(|p| p.label)
                .collect::<Vec<_>>();
            let written =
                stage_report(&store_path, &report_dir, format, &labels, run_id.as_deref())
                    .context("report stage")?;
            eprintln!(
                "report: wrote {} tables to {}",
                written.len(),
                report_dir.display()
            );
        }
        Command::Pipeline {} => {
            let summary = stage_pipeline(&config).await.context("pipeline")?;
            if let Some(generate) = &summary.generate {
                eprintln!(
                    "pipeline: generated {} candidates from {} seeds",
                    generate.candidates, generate.seeds
                );
            }
            if let Some(resolve) = &summary.resolve {
                eprintln!(
                    "pipeline: {} registered, {} unregistered, {} unresolved",
                    resolve.registered, resolve.unregistered, resolve.unresolved
                );
            }
            eprintln!(
                "pipeline: scanned {} jobs, classified {} messages, wrote {} tables",
                summary.scan.total_jobs,
                summary.classify.distinct_messages,
                summary.reports.len()
            );
        }
        Command::Fixture { command } => run_fixture(command, seed, &config).await?,
    }
    Ok(())
}

async fn run_fixture(command: FixtureCommand, seed: u64, config: &PipelineConfig) -> Result<()> {
    match command {
        FixtureCommand::Gen {
            out,
            size,
            domains_out,
        } => {
            let specs = generate_population(seed, size, &PopulationMix::default_mix())
                .context("fixture gen")?;
            let json = serde_json::to_string_pretty(&specs).context("fixture gen")?;
            std::fs::write(&out, json + "\n")
                .with_context(|| format!("fixture gen: writing {}", out.display()))?;
            if let Some(domains_path) = domains_out {
                let mut text = String::from("candidate\n");
                for spec in &specs {
                    text.push_str(&spec.domain);
                    text.push('\n');
                }
                std::fs::write(&domains_path, text)
                    .with_context(|| format!("fixture gen: writing {}", domains_path.display()))?;
            }
            eprintln!("fixture gen: {} specs (seed {})", specs.len(), seed);
        }
        FixtureCommand::Truth { specs, out, format } => {
            let population = load_manifest(&specs).context("fixture truth")?;
            let profiles: Vec<UserAgentProfile> = config.profiles().context("fixture truth")?;
            let tables = ground_truth_tables(&population, &profiles, &config.navigate_limits());
            let format = match format {
                Some(f) => ReportFormat::parse(&f)
                    .with_context(|| format!("fixture truth: unknown format \"{f}\""))?,
                None => config.report_format().context("fixture truth")?,
            };
            let written = emit_report(&tables, format, &out).context("fixture truth")?;
            eprintln!(
                "fixture truth: wrote {} tables to {}",
                written.len(),
                out.display()
            );
        }
        FixtureCommand::Serve { specs, bind } => {
            let population = load_manifest(&specs).context("fixture serve")?;
            let server = FixtureServer::start(population, bind)
                .await
                .context("fixture serve")?;
            eprintln!("fixture serve: listening on {}", server.addr());
            tokio::signal::ctrl_c().await.context("fixture serve")?;
        }
        FixtureCommand::Emulate { bind, map_all } => {
            let host_map = match map_all {
                Some(addr) => HostMap::MapAll(addr),
                None => HostMap::Direct,
            };
            let emulator = BrowserEmulator::start(bind, host_map)
                .await
                .context("fixture emulate")?;
            eprintln!(
                "fixture emulate: DevTools endpoint on {}",
                emulator.endpoint()
            );
            tokio::signal::ctrl_c().await.context("fixture emulate")?;
        }
    }
    Ok(())
}

fn parse_techniques(names: &[String]) -> Result<BTreeSet<Technique>> {
    if names.is_empty() {
        return Ok(Technique::ALL.into_iter().collect());
    }
    names
        .iter()
        .map(|name| Technique::parse(name).with_context(|| format!("unknown technique \"{name}\"")))
        .collect()
}

fn warn_skipped(stage: &str, skipped: &[SkippedRow]) {
    for row in skipped {
        eprintln!(
            "{stage}: warning: line {}: {} (row skipped)",
            row.line, row.reason
        );
    }
}
