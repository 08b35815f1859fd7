//! Browser driver abstraction: load a URL under a spoofed user agent and
//! report every JavaScript dialog opened while observing the page.
//!
//! Two backends implement the same session interface: a client speaking the
//! browser DevTools wire protocol over a WebSocket ([`devtools`]) and a
//! scripted fake replaying a manifest in virtual time ([`fake`]).

pub mod devtools;
pub mod fake;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiles::UserAgentProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DialogKind {
    Alert,
    Confirm,
    Prompt,
    Beforeunload,
}

impl DialogKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DialogKind::Alert => "alert",
            DialogKind::Confirm => "confirm",
            DialogKind::Prompt => "prompt",
            DialogKind::Beforeunload => "beforeunload",
        }
    }

    pub fn parse(s: &str) -> Option<DialogKind> {
        match s {
            "alert" => Some(DialogKind::Alert),
            "confirm" => Some(DialogKind::Confirm),
            "prompt" => Some(DialogKind::Prompt),
            "beforeunload" => Some(DialogKind::Beforeunload),
            _ => None,
        }
    }
}

/// One captured JavaScript dialog. The message is preserved verbatim,
/// whitespace included.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DialogEvent {
    pub message: String,
    pub page_url: String,
    pub kind: DialogKind,
    pub offset_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NavStatus {
    Loaded,
    Timeout,
    NetworkError,
}

impl NavStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            NavStatus::Loaded => "LOADED",
            NavStatus::Timeout => "TIMEOUT",
            NavStatus::NetworkError => "NETWORK_ERROR",
        }
    }
}

/// Result of observing one navigation. Dialogs are ordered by offset and
/// were each auto-accepted immediately after being recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavigationOutcome {
    pub requested_url: String,
    pub final_url: String,
    pub status: NavStatus,
    pub dialogs: Vec<DialogEvent>,
    pub duration_ms: u64,
    /// Set when the dialog cap was reached; further dialogs were dismissed
    /// without being recorded.
    pub dialogs_truncated: bool,
}

/// Observation window bounds. The window ends at
/// `min(load_finished + grace_ms, hard_cap_ms)`; the hard cap is measured
/// from navigation start and wins on conflict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavigateLimits {
    pub grace_ms: u64,
    pub hard_cap_ms: u64,
    pub dialog_cap: usize,
}

impl Default for NavigateLimits {
    fn default() -> Self {
        Self {
            grace_ms: 1_000,
            hard_cap_ms: 30_000,
            dialog_cap: 100,
        }
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("driver backend unreachable at {endpoint}: {detail}")]
    Unreachable { endpoint: String, detail: String },
    #[error("session is closed")]
    SessionClosed,
    #[error("invalid URL \"{url}\": {detail}")]
    InvalidUrl { url: String, detail: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Factory for navigation sessions bound to one user-agent profile.
#[async_trait]
pub trait BrowserDriver: Send + Sync {
    async fn open_session(
        &self,
        profile: &UserAgentProfile,
    ) -> Result<Box<dyn BrowserSession>, DriverError>;
}

/// One session serves one navigation at a time and carries its profile's
/// User-Agent on every request. Closing is idempotent; navigating a closed
/// session is a usage error.
#[async_trait]
pub trait BrowserSession: Send {
    async fn navigate(
        &mut self,
        url: &str,
        limits: &NavigateLimits,
    ) -> Result<NavigationOutcome, DriverError>;

    async fn close(&mut self) -> Result<(), DriverError>;

    fn profile(&self) -> &UserAgentProfile;
}
