//! Scan workload construction and bounded worker-pool execution.
//!
//! A workload is one full pass per user-agent profile over the registered
//! candidate list. A coordinator feeds jobs to `pool_size` workers, each
//! owning one driver session at a time; finished records funnel through a
//! single sink to preserve append ordering.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;

use crate::domain::DomainName;
use crate::driver::{
    BrowserDriver, BrowserSession, DialogEvent, DriverError, NavStatus, NavigateLimits,
};
use crate::permute::CandidateDomain;
use crate::profiles::UserAgentProfile;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanJob {
    pub job_id: String,
    pub url: String,
    pub profile_label: String,
    pub attempt: u32,
}

/// One persisted scan outcome. Field order matches the stored payload
/// schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub job_id: String,
    pub run_id: String,
    pub url: String,
    pub final_url: String,
    pub profile_label: String,
    pub status: NavStatus,
    pub duration_ms: u64,
    pub started_at: DateTime<Utc>,
    pub dialogs: Vec<DialogEvent>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("profile list is empty")]
    NoProfiles,
    #[error("domain list is empty")]
    NoDomains,
}

/// |domains| × |profiles| jobs, grouped into one full pass per profile;
/// within a pass the input order is preserved. URLs are
/// `http://<candidate name>`.
pub fn build_workload(
    domains: &[CandidateDomain],
    profiles: &[UserAgentProfile],
) -> Result<Vec<ScanJob>, WorkloadError> {
    let names: Vec<DomainName> = domains.iter().map(|c| c.candidate.clone()).collect();
    build_workload_from_names(&names, profiles)
}

pub fn build_workload_from_names(
    domains: &[DomainName],
    profiles: &[UserAgentProfile],
) -> Result<Vec<ScanJob>, WorkloadError> {
    if profiles.is_empty() {
        return Err(WorkloadError::NoProfiles);
    }
    if domains.is_empty() {
        return Err(WorkloadError::NoDomains);
    }
    let mut jobs = Vec::with_capacity(domains.len() * profiles.len());
    let mut seq = 0usize;
    for profile in profiles {
        for domain in domains {
            jobs.push(ScanJob {
                job_id: format!("j{seq:06}"),
                url: format!("http://{}", domain.name()),
                profile_label: profile.label.clone(),
                attempt: 1,
            });
            seq += 1;
        }
    }
    Ok(jobs)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub run_id: String,
    pub pool_size: usize,
    pub limits: NavigateLimits,
    /// Total attempts per job; only NETWORK_ERROR outcomes are retried.
    pub max_attempts: u32,
    /// Progress line on stderr every N completed jobs.
    pub progress_every: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".to_string(),
            pool_size: 8,
            limits: NavigateLimits::default(),
            max_attempts: 2,
            progress_every: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub total_jobs: usize,
    pub loaded: usize,
    pub timeout: usize,
    pub network_error: usize,
    /// Jobs that needed more than one attempt.
    pub retried_jobs: usize,
    /// Outcomes whose dialog list hit the cap.
    pub truncated_outcomes: usize,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("pool_size must be at least 1")]
    ZeroPool,
    #[error("unknown profile label \"{label}\" in workload")]
    UnknownProfile { label: String },
    #[error("scan backend failed: {0}")]
    Backend(String),
    #[error("record sink failed after durable job {last_durable_job_id:?}: {detail}")]
    SinkFailed {
        last_durable_job_id: Option<String>,
        detail: String,
    },
}

/// Serial consumer of finished records.
pub trait RecordSink: Send {
    fn accept(
        &mut self,
        record: &ScanRecord,
    ) -> Result<(), Box<dyn std::error::Error + Send + Sync>>;
}

/// Collects records in memory; handy for tests and dry runs.
impl RecordSink for Vec<ScanRecord> {
    fn accept(
        &mut self,
        record: &ScanRecord,
    ) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        self.push(record.clone());
        Ok(())
    }
}

enum WorkerMsg {
    Record {
        record: ScanRecord,
        attempts: u32,
        truncated: bool,
    },
    Fatal(String),
}

/// Executes the workload. Every job yields exactly one record; at most
/// `pool_size` navigations are in flight; NETWORK_ERROR jobs are retried up
/// to `max_attempts` before their failing record is emitted.
pub async fn run(
    workload: Vec<ScanJob>,
    driver: Arc<dyn BrowserDriver>,
    profiles: &[UserAgentProfile],
    cfg: &RunConfig,
    sink: &mut dyn RecordSink,
) -> Result<RunSummary, RunError> {
    if cfg.pool_size == 0 {
        return Err(RunError::ZeroPool);
    }
    let profile_map: Arc<BTreeMap<String, UserAgentProfile>> = Arc::new(
        profiles
            .iter()
            .map(|p| (p.label.clone(), p.clone()))
            .collect(),
    );
    for job in &workload {
        if !profile_map.contains_key(&job.profile_label) {
            return Err(RunError::UnknownProfile {
                label: job.profile_label.clone(),
            });
        }
    }

    let total_jobs = workload.len();
    let mut summary = RunSummary {
        total_jobs,
        ..RunSummary::default()
    };
    if total_jobs == 0 {
        return Ok(summary);
    }

    let queue = Arc::new(Mutex::new(VecDeque::from(workload)));
    let (tx, mut rx) = mpsc::unbounded_channel::<WorkerMsg>();

    let mut handles = Vec::new();
    for _ in 0..cfg.pool_size {
        let queue = Arc::clone(&queue);
        let driver = Arc::clone(&driver);
        let profile_map = Arc::clone(&profile_map);
        let tx = tx.clone();
        let run_id = cfg.run_id.clone();
        let limits = cfg.limits;
        let max_attempts = cfg.max_attempts.max(1);
        handles.push(tokio::spawn(async move {
            worker(queue, driver, profile_map, tx, run_id, limits, max_attempts).await;
        }));
    }
    drop(tx);

    let mut last_durable: Option<String> = None;
    let mut completed = 0u64;
    let mut failure: Option<RunError> = None;
    while let Some(msg) = rx.recv().await {
        match msg {
            WorkerMsg::Record {
                record,
                attempts,
                truncated,
            } => {
                if let Err(e) = sink.accept(&record) {
                    failure = Some(RunError::SinkFailed {
                        last_durable_job_id: last_durable.clone(),
                        detail: e.to_string(),
                    });
                    break;
                }
                last_durable = Some(record.job_id.clone());
                match record.status {
                    NavStatus::Loaded => summary.loaded += 1,
                    NavStatus::Timeout => summary.timeout += 1,
                    NavStatus::NetworkError => summary.network_error += 1,
                }
                if attempts > 1 {
                    summary.retried_jobs += 1;
                }
                if truncated {
                    summary.truncated_outcomes += 1;
                }
                completed += 1;
                if let Some(every) = cfg.progress_every {
                    if every > 0 && completed.is_multiple_of(every) {
                        eprintln!("scan: {completed}/{total_jobs} jobs complete");
                    }
                }
            }
            WorkerMsg::Fatal(detail) => {
                failure = Some(RunError::Backend(detail));
                break;
            }
        }
    }
    if failure.is_some() {
        // Unblock workers: drain the queue so they exit promptly.
        queue.lock().expect("queue lock").clear();
        rx.close();
    }
    for handle in handles {
        let _ = handle.await;
    }
    match failure {
        Some(err) => Err(err),
        None => Ok(summary),
    }
}

async fn worker(
    queue: Arc<Mutex<VecDeque<ScanJob>>>,
    driver: Arc<dyn BrowserDriver>,
    profile_map: Arc<BTreeMap<String, UserAgentProfile>>,
    tx: mpsc::UnboundedSender<WorkerMsg>,
    run_id: String,
    limits: NavigateLimits,
    max_attempts: u32,
) {
    let mut session: Option<(String, Box<dyn BrowserSession>)> = None;
    loop {
        let job = {
            let mut queue = queue.lock().expect("queue lock");
            queue.pop_front()
        };
        let Some(job) = job else { break };

        // Reuse the session while consecutive jobs share a profile.
        if session.as_ref().map(|(label, _)| label.as_str()) != Some(job.profile_label.as_str()) {
            if let Some((_, mut old)) = session.take() {
                let _ = old.close().await;
            }
            let profile = &profile_map[&job.profile_label];
            match driver.open_session(profile).await {
                Ok(new_session) => session = Some((job.profile_label.clone(), new_session)),
                Err(e) => {
                    let _ = tx.send(WorkerMsg::Fatal(e.to_string()));
                    return;
                }
            }
        }
        let (_, active) = session.as_mut().expect("session just ensured");

        let mut attempts = 0u32;
        let (record, truncated) = loop {
            attempts += 1;
            let started_at = Utc::now();
            let outcome = active.navigate(&job.url, &limits).await;
            match outcome {
                Ok(outcome) => {
                    let retryable = outcome.status == NavStatus::NetworkError;
                    let truncated = outcome.dialogs_truncated;
                    let record = record_from(&job, &run_id, started_at, outcome);
                    if retryable && attempts < max_attempts {
                        continue;
                    }
                    break (record, truncated);
                }
                Err(DriverError::SessionClosed) | Err(DriverError::Unreachable { .. }) => {
                    // Session died under us: reopen once per attempt.
                    let profile = &profile_map[&job.profile_label];
                    match driver.open_session(profile).await {
                        Ok(new_session) => *active = new_session,
                        Err(e) => {
                            let _ = tx.send(WorkerMsg::Fatal(e.to_string()));
                            return;
                        }
                    }
                    if attempts < max_attempts {
                        continue;
                    }
                    break (failed_record(&job, &run_id, started_at), false);
                }
                Err(_) => {
                    if attempts < max_attempts {
                        continue;
                    }
                    break (failed_record(&job, &run_id, started_at), false);
                }
            }
        };
        if tx
            .send(WorkerMsg::Record {
                record,
                attempts,
                truncated,
            })
            .is_err()
        {
            break;
        }
    }
    if let Some((_, mut old)) = session.take() {
        let _ = old.close().await;
    }
}

fn record_from(
    job: &ScanJob,
    run_id: &str,
    started_at: DateTime<Utc>,
    outcome: crate::driver::NavigationOutcome,
) -> ScanRecord {
    ScanRecord {
        job_id: job.job_id.clone(),
        run_id: run_id.to_string(),
        url: job.url.clone(),
        final_url: outcome.final_url,
        profile_label: job.profile_label.clone(),
        status: outcome.status,
        duration_ms: outcome.duration_ms,
        started_at,
        dialogs: outcome.dialogs,
    }
}

fn failed_record(job: &ScanJob, run_id: &str, started_at: DateTime<Utc>) -> ScanRecord {
    ScanRecord {
        job_id: job.job_id.clone(),
        run_id: run_id.to_string(),
        url: job.url.clone(),
        final_url: job.url.clone(),
        profile_label: job.profile_label.clone(),
        status: NavStatus::NetworkError,
        duration_ms: 0,
        started_at,
        dialogs: Vec::new(),
    }
}
