//! Registration filtering: concurrent DNS resolution of candidate domains.
//!
//! A candidate counts as registered when an A/AAAA record exists or, failing
//! that, an NS record. Queries run concurrently up to a bound, retried per a
//! fixed budget, rate limited by a token bucket, and returned in input
//! order.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::permute::CandidateDomain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResolveStatus {
    Registered,
    Unregistered,
    Unresolved,
}

impl ResolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResolveStatus::Registered => "REGISTERED",
            ResolveStatus::Unregistered => "UNREGISTERED",
            ResolveStatus::Unresolved => "UNRESOLVED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionResult {
    pub candidate: CandidateDomain,
    pub status: ResolveStatus,
    pub addresses: Vec<String>,
    pub queried_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolverConfig {
    /// `ip:port` nameserver endpoints; empty means the system resolver.
    #[serde(default)]
    pub nameservers: Vec<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_rate")]
    pub rate_per_ns: u32,
}

fn default_in_flight() -> usize {
    64
}
fn default_timeout_ms() -> u64 {
    3_000
}
fn default_retries() -> u32 {
    2
}
fn default_rate() -> u32 {
    100
}

impl Default for ResolverConfig {
    fn default() -> Self {
        Self {
            nameservers: Vec::new(),
            max_in_flight: default_in_flight(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            rate_per_ns: default_rate(),
        }
    }
}

/// One lookup attempt's outcome, before retry policy is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DnsAnswer {
    Records {
        addresses: Vec<String>,
        has_ns: bool,
    },
    NxDomain,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DnsQueryError {
    #[error("query timed out")]
    Timeout,
    #[error("server failure: {0}")]
    ServFail(String),
    #[error("nameserver unreachable: {0}")]
    Unreachable(String),
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("invalid nameserver endpoint \"{endpoint}\"")]
    InvalidNameserver { endpoint: String },
    #[error("could not construct resolver: {0}")]
    Backend(String),
    #[error("nameservers unreachable for the entire batch: {detail}")]
    BatchUnreachable { detail: String },
}

/// Performs one lookup; the batch layer owns timeouts, retries, and rate
/// limiting.
#[async_trait]
pub trait DnsBackend: Send + Sync {
    async fn lookup(&self, name: &str) -> Result<DnsAnswer, DnsQueryError>;
}

struct TokenBucket {
    state: tokio::sync::Mutex<BucketState>,
    rate_per_sec: f64,
    burst: f64,
}

struct BucketState {
    tokens: f64,
    refilled_at: tokio::time::Instant,
}

impl TokenBucket {
    fn new(rate_per_sec: f64) -> Self {
        let rate = rate_per_sec.max(0.001);
        Self {
            state: tokio::sync::Mutex::new(BucketState {
                tokens: rate,
                refilled_at: tokio::time::Instant::now(),
            }),
            rate_per_sec: rate,
            burst: rate,
        }
    }

    async fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().await;
                let now = tokio::time::Instant::now();
                let elapsed = now.duration_since(state.refilled_at).as_secs_f64();
                state.tokens = (state.tokens + elapsed * self.rate_per_sec).min(self.burst);
                state.refilled_at = now;
                if state.tokens >= 1.0 {
                    state.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.tokens) / self.rate_per_sec)
            };
            tokio::time::sleep(wait).await;
        }
    }
}

enum Attempted {
    Answer(DnsAnswer),
    Unresolved { unreachable: bool },
}

/// Resolves every candidate, one result per input in input order.
/// Timeout/SERVFAIL retries up to `cfg.retries` extra attempts; a batch in
/// which every query died unreachable is a batch-level error.
pub async fn resolve_batch(
    candidates: &[CandidateDomain],
    backend: &dyn DnsBackend,
    cfg: &ResolverConfig,
) -> Result<Vec<ResolutionResult>, ResolveError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let aggregate_rate = cfg.rate_per_ns as f64 * cfg.nameservers.len().max(1) as f64;
    let bucket = TokenBucket::new(aggregate_rate);
    let attempts_per_query = 1 + cfg.retries;
    let timeout = Duration::from_millis(cfg.timeout_ms);
    let in_flight = cfg.max_in_flight.max(1);

    let attempted: Vec<(CandidateDomain, DateTime<Utc>, Attempted)> = stream::iter(candidates)
        .map(|candidate| {
            let bucket = &bucket;
            async move {
                let queried_at = Utc::now();
                let mut unreachable = true;
                for _ in 0..attempts_per_query {
                    bucket.acquire().await;
                    let name = candidate.candidate.name();
                    let answer = tokio::time::timeout(timeout, backend.lookup(&name)).await;
                    match answer {
                        Ok(Ok(answer)) => {
                            return (candidate.clone(), queried_at, Attempted::Answer(answer))
                        }
                        Ok(Err(DnsQueryError::Unreachable(_))) => {}
                        Ok(Err(_)) | Err(_) => unreachable = false,
                    }
                }
                (
                    candidate.clone(),
                    queried_at,
                    Attempted::Unresolved { unreachable },
                )
            }
        })
        .buffered(in_flight)
        .collect()
        .await;

    let all_unreachable = attempted
        .iter()
        .all(|(_, _, a)| matches!(a, Attempted::Unresolved { unreachable: true }));
    if all_unreachable {
        return Err(ResolveError::BatchUnreachable {
            detail: format!(
                "all {} queries failed without reaching a nameserver",
                attempted.len()
            ),
        });
    }

    Ok(attempted
        .into_iter()
        .map(|(candidate, queried_at, attempt)| {
            let (status, addresses) = match attempt {
                Attempted::Answer(DnsAnswer::Records { addresses, has_ns }) => {
                    if !addresses.is_empty() || has_ns {
                        (ResolveStatus::Registered, addresses)
                    } else {
                        (ResolveStatus::Unregistered, Vec::new())
                    }
                }
                Attempted::Answer(DnsAnswer::NxDomain) => (ResolveStatus::Unregistered, Vec::new()),
                Attempted::Unresolved { .. } => (ResolveStatus::Unresolved, Vec::new()),
            };
            ResolutionResult {
                candidate,
                status,
                addresses,
                queried_at,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FilterSummary {
    pub registered: usize,
    pub unregistered: usize,
    pub unresolved: usize,
}

/// Keeps exactly the REGISTERED candidates; the excluded ones are counted in
/// the side summary.
pub fn filter_registered(
    results: &[ResolutionResult],
) -> (std::collections::BTreeSet<CandidateDomain>, FilterSummary) {
    let mut summary = FilterSummary::default();
    let mut kept = std::collections::BTreeSet::new();
    for result in results {
        match result.status {
            ResolveStatus::Registered => {
                summary.registered += 1;
                kept.insert(result.candidate.clone());
            }
            ResolveStatus::Unregistered => summary.unregistered += 1,
            ResolveStatus::Unresolved => summary.unresolved += 1,
        }
    }
    (kept, summary)
}

/// Audit dump: `candidate,status,first_address,queried_at`.
pub fn write_results_csv<W: std::io::Write>(
    results: &[ResolutionResult],
    writer: W,
) -> csv::Result<()> {
    let mut csv_writer = csv::WriterBuilder::new().from_writer(writer);
    csv_writer.write_record(["candidate", "status", "first_address", "queried_at"])?;
    for result in results {
        csv_writer.write_record([
            result.candidate.candidate.name().as_str(),
            result.status.as_str(),
            result.addresses.first().map(String::as_str).unwrap_or(""),
            &result.queried_at.to_rfc3339(),
        ])?;
    }
    csv_writer.flush()?;
    Ok(())
}

/// Scripted in-process backend for tests: per-name behaviors plus call
/// counting and an in-flight gauge.
pub struct StubBackend {
    scripts: BTreeMap<String, StubScript>,
    default: StubScript,
    calls: std::sync::Mutex<BTreeMap<String, u32>>,
    active: std::sync::atomic::AtomicUsize,
    peak: std::sync::atomic::AtomicUsize,
    delay: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubScript {
    Addresses(Vec<String>),
    NsOnly,
    NoRecords,
    NxDomain,
    Timeout,
    ServFail,
    Unreachable,
}

impl StubBackend {
    pub fn new(scripts: BTreeMap<String, StubScript>, default: StubScript) -> Self {
        Self {
            scripts,
            default,
            calls: std::sync::Mutex::new(BTreeMap::new()),
            active: std::sync::atomic::AtomicUsize::new(0),
            peak: std::sync::atomic::AtomicUsize::new(0),
            delay: Duration::ZERO,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self, name: &str) -> u32 {
        *self
            .calls
            .lock()
            .expect("calls lock")
            .get(name)
            .unwrap_or(&0)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(std::sync::atomic::Ordering::SeqCst)
    }
}

#[async_trait]
impl DnsBackend for StubBackend {
    async fn lookup(&self, name: &str) -> Result<DnsAnswer, DnsQueryError> {
        use std::sync::atomic::Ordering;
        *self
            .calls
            .lock()
            .expect("calls lock")
            .entry(name.to_string())
            .or_insert(0) += 1;
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        let script = self.scripts.get(name).unwrap_or(&self.default).clone();
        self.active.fetch_sub(1, Ordering::SeqCst);
        match script {
            StubScript::Addresses(addresses) => Ok(DnsAnswer::Records {
                addresses,
                has_ns: false,
            }),
            StubScript::NsOnly => Ok(DnsAnswer::Records {
                addresses: Vec::new(),
                has_ns: true,
            }),
            StubScript::NoRecords => Ok(DnsAnswer::Records {
                addresses: Vec::new(),
                has_ns: false,
            }),
            StubScript::NxDomain => Ok(DnsAnswer::NxDomain),
            StubScript::Timeout => Err(DnsQueryError::Timeout),
            StubScript::ServFail => Err(DnsQueryError::ServFail("scripted".into())),
            StubScript::Unreachable => Err(DnsQueryError::Unreachable("scripted".into())),
        }
    }
}

/// Wire backend over hickory-resolver: A/AAAA lookup with an NS fallback
/// probe before declaring a name unregistered.
pub struct WireBackend {
    resolver: hickory_resolver::TokioResolver,
}

impl WireBackend {
    /// Resolver against the configured `ip:port` endpoints (UDP).
    pub fn from_config(cfg: &ResolverConfig) -> Result<Self, ResolveError> {
        use hickory_resolver::config::{
            ConnectionConfig, NameServerConfig, ProtocolConfig, ResolveHosts,
            ResolverConfig as HickoryConfig,
        };
        use hickory_resolver::net::runtime::TokioRuntimeProvider;
        use hickory_resolver::Resolver;

        let mut hickory_cfg = HickoryConfig::default();
        for endpoint in &cfg.nameservers {
            let addr: std::net::SocketAddr =
                endpoint
                    .parse()
                    .map_err(|_| ResolveError::InvalidNameserver {
                        endpoint: endpoint.clone(),
                    })?;
            let mut connection = ConnectionConfig::new(ProtocolConfig::Udp);
            connection.port = addr.port();
            let mut ns = NameServerConfig::udp(addr.ip());
            ns.connections = vec![connection];
            hickory_cfg.add_name_server(ns);
        }
        let mut builder =
            Resolver::builder_with_config(hickory_cfg, TokioRuntimeProvider::default());
        let opts = builder.options_mut();
        opts.timeout = Duration::from_millis(cfg.timeout_ms);
        // The batch layer owns the retry budget and caching would mask it.
        opts.attempts = 0;
        opts.cache_size = 0;
        opts.use_hosts_file = ResolveHosts::Never;
        opts.edns0 = false;
        let resolver = builder
            .build()
            .map_err(|e| ResolveError::Backend(e.to_string()))?;
        Ok(Self { resolver })
    }

    /// Resolver from the operating system configuration.
    pub fn system(cfg: &ResolverConfig) -> Result<Self, ResolveError> {
        use hickory_resolver::TokioResolver;
        let mut builder =
            TokioResolver::builder_tokio().map_err(|e| ResolveError::Backend(e.to_string()))?;
        let opts = builder.options_mut();
        opts.timeout = Duration::from_millis(cfg.timeout_ms);
        opts.attempts = 0;
        let resolver = builder
            .build()
            .map_err(|e| ResolveError::Backend(e.to_string()))?;
        Ok(Self { resolver })
    }

    async fn ns_probe(&self, fqdn: &str) -> Result<bool, DnsQueryError> {
        use hickory_resolver::proto::rr::RecordType;
        match self.resolver.lookup(fqdn, RecordType::NS).await {
            Ok(lookup) => Ok(!lookup.answers().is_empty()),
            Err(e) => match classify_net_error(e) {
                NetFailure::Empty | NetFailure::NxDomain => Ok(false),
                NetFailure::Query(err) => Err(err),
            },
        }
    }
}

enum NetFailure {
    NxDomain,
    Empty,
    Query(DnsQueryError),
}

fn classify_net_error(err: hickory_resolver::net::NetError) -> NetFailure {
    use hickory_resolver::net::{DnsError, NetError};
    use hickory_resolver::proto::op::ResponseCode;
    match err {
        NetError::Dns(DnsError::NoRecordsFound(no_records)) => {
            if no_records.response_code == ResponseCode::NXDomain {
                NetFailure::NxDomain
            } else {
                NetFailure::Empty
            }
        }
        NetError::Dns(other) => NetFailure::Query(DnsQueryError::ServFail(other.to_string())),
        NetError::Timeout => NetFailure::Query(DnsQueryError::Timeout),
        NetError::Io(e) => NetFailure::Query(DnsQueryError::Unreachable(e.to_string())),
        other => NetFailure::Query(DnsQueryError::ServFail(other.to_string())),
    }
}

#[async_trait]
impl DnsBackend for WireBackend {
    async fn lookup(&self, name: &str) -> Result<DnsAnswer, DnsQueryError> {
        // Trailing dot: query the name as given, no search-domain suffixing.
        let fqdn = format!("{name}.");
        match self.resolver.lookup_ip(fqdn.as_str()).await {
            Ok(lookup) => {
                let addresses: Vec<String> = lookup.iter().map(|ip| ip.to_string()).collect();
                if addresses.is_empty() {
                    let has_ns = self.ns_probe(&fqdn).await?;
                    Ok(DnsAnswer::Records { addresses, has_ns })
                } else {
                    Ok(DnsAnswer::Records {
                        addresses,
                        has_ns: false,
                    })
                }
            }
            Err(e) => match classify_net_error(e) {
                NetFailure::NxDomain => Ok(DnsAnswer::NxDomain),
                NetFailure::Empty => {
                    let has_ns = self.ns_probe(&fqdn).await?;
                    Ok(DnsAnswer::Records {
                        addresses: Vec::new(),
                        has_ns,
                    })
                }
                NetFailure::Query(err) => Err(err),
            },
        }
    }
}

pub mod stub_server {
    //! Minimal scripted UDP nameserver: responds to A/AAAA/NS questions per
    //! a per-domain script. Wire-level test harness for the resolver path.

    use std::collections::BTreeMap;
    use std::net::{Ipv4Addr, SocketAddr};
    use std::sync::Arc;

    use tokio::net::UdpSocket;
    use tokio::task::JoinHandle;

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub enum ServerScript {
        /// Answer A queries with this address.
        A(Ipv4Addr),
        /// No A/AAAA records, but an NS record exists.
        NsOnly,
        /// NOERROR with no records of any queried type.
        Empty,
        NxDomain,
        ServFail,
        /// Never respond; the client times out.
        Ignore,
    }

    pub struct StubDnsServer {
        addr: SocketAddr,
        handle: JoinHandle<()>,
    }

    impl StubDnsServer {
        pub async fn start(scripts: BTreeMap<String, ServerScript>) -> std::io::Result<Self> {
            let socket = UdpSocket::bind((Ipv4Addr::LOCALHOST, 0)).await?;
            let addr = socket.local_addr()?;
            let socket = Arc::new(socket);
            let handle = tokio::spawn(serve(socket, scripts));
            Ok(Self { addr, handle })
        }

        pub fn addr(&self) -> SocketAddr {
            self.addr
        }

        pub fn endpoint(&self) -> String {
            self.addr.to_string()
        }
    }

    impl Drop for StubDnsServer {
        fn drop(&mut self) {
            self.handle.abort();
        }
    }

    async fn serve(socket: Arc<UdpSocket>, scripts: BTreeMap<String, ServerScript>) {
        let mut buf = [0u8; 1500];
        loop {
            let Ok((len, peer)) = socket.recv_from(&mut buf).await else {
                continue;
            };
            let Some(query) = parse_query(&buf[..len]) else {
                continue;
            };
            let script = scripts
                .get(query.name.trim_end_matches('.'))
                .unwrap_or(&ServerScript::NxDomain);
            let response = match (script, query.qtype) {
                (ServerScript::Ignore, _) => continue,
                (ServerScript::ServFail, _) => build_response(&query, 2, &[]),
                (ServerScript::NxDomain, _) => build_response(&query, 3, &[]),
                (ServerScript::A(ip), 1) => build_response(&query, 0, &[answer(1, &ip.octets())]),
                (ServerScript::NsOnly, 2) => {
                    build_response(&query, 0, &[answer(2, &encode_name("ns1.invalid"))])
                }
                // Empty / non-matching record type: NOERROR, zero answers.
                _ => build_response(&query, 0, &[]),
            };
            let _ = socket.send_to(&response, peer).await;
        }
    }

    struct Query {
        id: u16,
        name: String,
        qtype: u16,
        question: Vec<u8>,
    }

    fn parse_query(buf: &[u8]) -> Option<Query> {
        if buf.len() < 12 {
            return None;
        }
        let id = u16::from_be_bytes([buf[0], buf[1]]);
        let qdcount = u16::from_be_bytes([buf[4], buf[5]]);
        if qdcount != 1 {
            return None;
        }
        let mut pos = 12;
        let mut labels = Vec::new();
        loop {
            let len = *buf.get(pos)? as usize;
            pos += 1;
            if len == 0 {
                break;
            }
            labels.push(String::from_utf8_lossy(buf.get(pos..pos + len)?).to_string());
            pos += len;
        }
        let qtype = u16::from_be_bytes([*buf.get(pos)?, *buf.get(pos + 1)?]);
        let question = buf.get(12..pos + 4)?.to_vec();
        Some(Query {
            id,
            name: labels.join(".").to_ascii_lowercase(),
            qtype,
            question,
        })
    }

    fn encode_name(name: &str) -> Vec<u8> {
        let mut out = Vec::new();
        for label in name.split('.') {
            out.push(label.len() as u8);
            out.extend_from_slice(label.as_bytes());
        }
        out.push(0);
        out
    }

    struct Answer {
        rtype: u16,
        rdata: Vec<u8>,
    }

    fn answer(rtype: u16, rdata: &[u8]) -> Answer {
        Answer {
            rtype,
            rdata: rdata.to_vec(),
        }
    }

    fn build_response(query: &Query, rcode: u8, answers: &[Answer]) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&query.id.to_be_bytes());
        // QR | RD | RA | rcode
        out.extend_from_slice(&[0x81, 0x80 | rcode]);
        out.extend_from_slice(&1u16.to_be_bytes());
        out.extend_from_slice(&(answers.len() as u16).to_be_bytes());
        out.extend_from_slice(&0u16.to_be_bytes());
        out.extend_from_slice(&0u16.to_be_bytes());
        out.extend_from_slice(&query.question);
        for ans in answers {
            // Compression pointer to the question name at offset 12.
            out.extend_from_slice(&[0xC0, 0x0C]);
            out.extend_from_slice(&ans.rtype.to_be_bytes());
            out.extend_from_slice(&1u16.to_be_bytes());
            out.extend_from_slice(&60u32.to_be_bytes());
            out.extend_from_slice(&(ans.rdata.len() as u16).to_be_bytes());
            out.extend_from_slice(&ans.rdata);
        }
        out
    }
}
