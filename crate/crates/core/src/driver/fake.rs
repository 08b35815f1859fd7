//! Scripted fake backend: replays a fixture manifest in virtual time.
//!
//! Navigations complete immediately; the reported durations and dialog
//! offsets are the virtual-clock values the scripted page would produce.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use url::Url;

use super::{
    BrowserDriver, BrowserSession, DialogEvent, DriverError, NavStatus, NavigateLimits,
    NavigationOutcome,
};
use crate::manifest::{Branch, FixtureSpec};
use crate::profiles::UserAgentProfile;

#[derive(Clone)]
pub struct FakeDriver {
    specs: Arc<Vec<FixtureSpec>>,
    by_host: Arc<BTreeMap<String, usize>>,
    live_sessions: Arc<AtomicUsize>,
}

impl FakeDriver {
    pub fn new(specs: Vec<FixtureSpec>) -> Self {
        let by_host = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| (spec.domain.to_ascii_lowercase(), i))
            .collect();
        Self {
            specs: Arc::new(specs),
            by_host: Arc::new(by_host),
            live_sessions: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Sessions currently open (or unclosed and not yet dropped).
    pub fn live_sessions(&self) -> usize {
        self.live_sessions.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl BrowserDriver for FakeDriver {
    async fn open_session(
        &self,
        profile: &UserAgentProfile,
    ) -> Result<Box<dyn BrowserSession>, DriverError> {
        self.live_sessions.fetch_add(1, Ordering::SeqCst);
        Ok(Box::new(FakeSession {
            specs: Arc::clone(&self.specs),
            by_host: Arc::clone(&self.by_host),
            live_sessions: Arc::clone(&self.live_sessions),
            profile: profile.clone(),
            closed: false,
        }))
    }
}

struct FakeSession {
    specs: Arc<Vec<FixtureSpec>>,
    by_host: Arc<BTreeMap<String, usize>>,
    live_sessions: Arc<AtomicUsize>,
    profile: UserAgentProfile,
    closed: bool,
}

#[async_trait]
impl BrowserSession for FakeSession {
    async fn navigate(
        &mut self,
        url: &str,
        limits: &NavigateLimits,
    ) -> Result<NavigationOutcome, DriverError> {
        if self.closed {
            return Err(DriverError::SessionClosed);
        }
        let parsed = Url::parse(url).map_err(|e| DriverError::InvalidUrl {
            url: url.to_string(),
            detail: e.to_string(),
        })?;
        let host = parsed
            .host_str()
            .ok_or_else(|| DriverError::InvalidUrl {
                url: url.to_string(),
                detail: "no host".to_string(),
            })?
            .to_ascii_lowercase();
        let final_url = parsed.to_string();

        let Some(&idx) = self.by_host.get(&host) else {
            // Unknown host behaves like a DNS resolution failure.
            return Ok(NavigationOutcome {
                requested_url: url.to_string(),
                final_url,
                status: NavStatus::NetworkError,
                dialogs: Vec::new(),
                duration_ms: 0,
                dialogs_truncated: false,
            });
        };
        let branch = self.specs[idx].branch_for(&self.profile.ua_string);
        Ok(replay(url, &final_url, branch, limits))
    }

    async fn close(&mut self) -> Result<(), DriverError> {
        if !self.closed {
            self.closed = true;
            self.live_sessions.fetch_sub(1, Ordering::SeqCst);
        }
        Ok(())
    }

    fn profile(&self) -> &UserAgentProfile {
        &self.profile
    }
}

impl Drop for FakeSession {
    fn drop(&mut self) {
        if !self.closed {
            self.live_sessions.fetch_sub(1, Ordering::SeqCst);
        }
    }
}

fn replay(
    requested_url: &str,
    final_url: &str,
    branch: Option<&Branch>,
    limits: &NavigateLimits,
) -> NavigationOutcome {
    // A request matching no branch gets an inert page: instant load, no
    // dialogs.
    let inert = Branch {
        ua_pattern: "*".to_string(),
        load_ms: 0,
        dialogs: Vec::new(),
        never_finishes: false,
        loop_dialogs: false,
    };
    let branch = branch.unwrap_or(&inert);

    let (window_end, status) = if branch.never_finishes {
        (limits.hard_cap_ms, NavStatus::Timeout)
    } else if branch.load_ms + limits.grace_ms <= limits.hard_cap_ms {
        (branch.load_ms + limits.grace_ms, NavStatus::Loaded)
    } else {
        (limits.hard_cap_ms, NavStatus::Timeout)
    };

    let mut scheduled: Vec<(u64, usize)> = Vec::new();
    for (pos, dialog) in branch.dialogs.iter().enumerate() {
        if dialog.at_ms < window_end {
            scheduled.push((dialog.at_ms, pos));
        }
    }
    if branch.loop_dialogs && !branch.dialogs.is_empty() {
        let period = branch.loop_period_ms();
        let mut shift = period;
        'outer: loop {
            for (pos, dialog) in branch.dialogs.iter().enumerate() {
                let at = dialog.at_ms + shift;
                if at >= window_end {
                    break 'outer;
                }
                scheduled.push((at, pos));
            }
            shift += period;
        }
    }
    scheduled.sort_by_key(|&(at, _)| at);

    let mut dialogs = Vec::new();
    let mut truncated = false;
    for (at, pos) in scheduled {
        if dialogs.len() >= limits.dialog_cap {
            truncated = true;
            break;
        }
        let scripted = &branch.dialogs[pos];
        dialogs.push(DialogEvent {
            message: scripted.message.clone(),
            page_url: final_url.to_string(),
            kind: scripted.kind,
            offset_ms: at,
        });
    }

    NavigationOutcome {
        requested_url: requested_url.to_string(),
        final_url: final_url.to_string(),
        status,
        dialogs,
        duration_ms: window_end,
        dialogs_truncated: truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::DialogKind;
    use crate::manifest::{parse_manifest, ScriptedDialog};

    fn manifest() -> Vec<FixtureSpec> {
        parse_manifest(
            r#"[
            {
                "domain": "won.test",
                "branches": [
                    {"ua_pattern": "*", "load_ms": 500,
                     "dialogs": [{"message": "You won", "at_ms": 200}]}
                ]
            },
            {
                "domain": "late.test",
                "branches": [
                    {"ua_pattern": "*", "load_ms": 2000,
                     "dialogs": [{"message": "in grace", "at_ms": 2500},
                                  {"message": "past grace", "at_ms": 3500}]}
                ]
            },
            {
                "domain": "hang.test",
                "branches": [
                    {"ua_pattern": "*", "never_finishes": true,
                     "dialogs": [{"message": "while hanging", "at_ms": 400}]}
                ]
            },
            {
                "domain": "mobile-only.test",
                "branches": [
                    {"ua_pattern": "iPhone", "load_ms": 100,
                     "dialogs": [{"message": "mobile lure", "at_ms": 0}]}
                ]
            },
            {
                "domain": "loop.test",
                "branches": [
                    {"ua_pattern": "*", "never_finishes": true, "loop_dialogs": true,
                     "dialogs": [{"message": "again", "at_ms": 0}]}
                ]
            }
        ]"#,
        )
        .unwrap()
    }

    fn chrome() -> UserAgentProfile {
        UserAgentProfile::builtin("chrome").unwrap()
    }

    async fn nav(
        domain: &str,
        profile: &UserAgentProfile,
        limits: &NavigateLimits,
    ) -> NavigationOutcome {
        let driver = FakeDriver::new(manifest());
        let mut session = driver.open_session(profile).await.unwrap();
        let outcome = session
            .navigate(&format!("http://{domain}"), limits)
            .await
            .unwrap();
        session.close().await.unwrap();
        outcome
    }

    #[tokio::test]
    async fn records_dialog_fired_during_load() {
        let outcome = nav("won.test", &chrome(), &NavigateLimits::default()).await;
        assert_eq!(outcome.status, NavStatus::Loaded);
        assert_eq!(outcome.dialogs.len(), 1);
        assert_eq!(outcome.dialogs[0].message, "You won");
        assert_eq!(outcome.dialogs[0].kind, DialogKind::Alert);
        assert_eq!(outcome.duration_ms, 1500);
        assert_eq!(outcome.final_url, "http://won.test/");
    }

    #[tokio::test]
    async fn grace_window_bounds_capture() {
        let outcome = nav("late.test", &chrome(), &NavigateLimits::default()).await;
        assert_eq!(outcome.status, NavStatus::Loaded);
        let messages: Vec<&str> = outcome.dialogs.iter().map(|d| d.message.as_str()).collect();
        assert_eq!(messages, ["in grace"]);
        assert_eq!(outcome.duration_ms, 3000);
    }

    #[tokio::test]
    async fn never_finishing_page_times_out_at_hard_cap() {
        let outcome = nav("hang.test", &chrome(), &NavigateLimits::default()).await;
        assert_eq!(outcome.status, NavStatus::Timeout);
        assert_eq!(outcome.duration_ms, 30_000);
        assert_eq!(outcome.dialogs.len(), 1);
    }

    #[tokio::test]
    async fn unknown_host_is_a_network_error() {
        let outcome = nav("nxdomain.test", &chrome(), &NavigateLimits::default()).await;
        assert_eq!(outcome.status, NavStatus::NetworkError);
        assert!(outcome.dialogs.is_empty());
    }

    #[tokio::test]
    async fn ua_branching_matches_substring() {
        let ios = UserAgentProfile::builtin("iossafari").unwrap();
        let outcome = nav("mobile-only.test", &ios, &NavigateLimits::default()).await;
        assert_eq!(outcome.dialogs.len(), 1);

        let outcome = nav("mobile-only.test", &chrome(), &NavigateLimits::default()).await;
        assert!(outcome.dialogs.is_empty());
        assert_eq!(outcome.status, NavStatus::Loaded);
    }

    #[tokio::test]
    async fn dialog_loop_truncates_at_cap() {
        let limits = NavigateLimits {
            dialog_cap: 7,
            ..NavigateLimits::default()
        };
        let outcome = nav("loop.test", &chrome(), &limits).await;
        assert_eq!(outcome.dialogs.len(), 7);
        assert!(outcome.dialogs_truncated);
        assert_eq!(outcome.status, NavStatus::Timeout);
        let offsets: Vec<u64> = outcome.dialogs.iter().map(|d| d.offset_ms).collect();
        let mut sorted = offsets.clone();
        sorted.sort_unstable();
        assert_eq!(offsets, sorted);
    }

    #[tokio::test]
    async fn offsets_never_exceed_duration() {
        for domain in ["won.test", "late.test", "hang.test", "loop.test"] {
            let outcome = nav(domain, &chrome(), &NavigateLimits::default()).await;
            for dialog in &outcome.dialogs {
                assert!(dialog.offset_ms <= outcome.duration_ms);
            }
        }
    }

    #[tokio::test]
    async fn session_lifecycle_is_enforced() {
        let driver = FakeDriver::new(manifest());
        let mut session = driver.open_session(&chrome()).await.unwrap();
        session.close().await.unwrap();
        session.close().await.unwrap();
        let err = session
            .navigate("http://won.test", &NavigateLimits::default())
            .await
            .unwrap_err();
        assert!(matches!(err, DriverError::SessionClosed));
    }

    #[tokio::test]
    async fn repeated_open_close_leaks_nothing() {
        let driver = FakeDriver::new(manifest());
        for _ in 0..100 {
            let mut session = driver.open_session(&chrome()).await.unwrap();
            session
                .navigate("http://won.test", &NavigateLimits::default())
                .await
                .unwrap();
            session.close().await.unwrap();
        }
        assert_eq!(driver.live_sessions(), 0);
    }

    #[tokio::test]
    async fn replay_is_deterministic() {
        let limits = NavigateLimits::default();
        let first = nav("late.test", &chrome(), &limits).await;
        let second = nav("late.test", &chrome(), &limits).await;
        assert_eq!(first, second);
    }

    #[test]
    fn dialogs_on_shared_timestamp_keep_script_order() {
        let branch = Branch {
            ua_pattern: "*".into(),
            load_ms: 0,
            dialogs: vec![
                ScriptedDialog {
                    message: "first".into(),
                    at_ms: 100,
                    kind: DialogKind::Alert,
                },
                ScriptedDialog {
                    message: "second".into(),
                    at_ms: 100,
                    kind: DialogKind::Confirm,
                },
            ],
            never_finishes: false,
            loop_dialogs: false,
        };
        let outcome = replay(
            "http://x.test",
            "http://x.test/",
            Some(&branch),
            &NavigateLimits::default(),
        );
        let messages: Vec<&str> = outcome.dialogs.iter().map(|d| d.message.as_str()).collect();
        assert_eq!(messages, ["first", "second"]);
    }
}
