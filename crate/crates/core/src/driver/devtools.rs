//! DevTools wire-protocol client: drives a debugging-enabled browser over
//! JSON-on-WebSocket using the method/event subset the scan needs
//! (Page.navigate, Network.setUserAgentOverride, Page.javascriptDialogOpening,
//! Page.handleJavaScriptDialog, Network.loadingFinished, Page.enable,
//! Network.enable).
//!
//! The endpoint is `host:port` of the browser's debugging interface — a real
//! Chromium started with a remote-debugging port, or the in-repo emulator.

use std::collections::VecDeque;
use std::time::Duration;

use async_trait::async_trait;
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::time::Instant;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use url::Url;

use super::{
    BrowserDriver, BrowserSession, DialogEvent, DialogKind, DriverError, NavStatus, NavigateLimits,
    NavigationOutcome,
};
use crate::profiles::UserAgentProfile;

const COMMAND_TIMEOUT: Duration = Duration::from_secs(10);

pub struct DevToolsDriver {
    endpoint: String,
}

impl DevToolsDriver {
    /// `endpoint` is the debugging interface as `host:port`.
    pub fn new(endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.to_string(),
        }
    }

    async fn create_target(&self) -> Result<String, DriverError> {
        // Newer browsers require PUT for /json/new; older ones accept GET.
        for method in ["PUT", "GET"] {
            if let Ok(value) = http_json(&self.endpoint, method, "/json/new?url=about:blank").await
            {
                if let Some(ws_url) = value.get("webSocketDebuggerUrl").and_then(|v| v.as_str()) {
                    return Ok(ws_url.to_string());
                }
            }
        }
        let list = http_json(&self.endpoint, "GET", "/json/list").await?;
        list.as_array()
            .and_then(|targets| {
                targets.iter().find(|t| {
                    t.get("type").and_then(|v| v.as_str()) == Some("page")
                        && t.get("webSocketDebuggerUrl").is_some()
                })
            })
            .and_then(|t| t.get("webSocketDebuggerUrl").and_then(|v| v.as_str()))
            .map(|s| s.to_string())
            .ok_or_else(|| DriverError::Unreachable {
                endpoint: self.endpoint.clone(),
                detail: "no debuggable page target".to_string(),
            })
    }
}

#[async_trait]
impl BrowserDriver for DevToolsDriver {
    async fn open_session(
        &self,
        profile: &UserAgentProfile,
    ) -> Result<Box<dyn BrowserSession>, DriverError> {
        let ws_url = self.create_target().await?;
        let (ws, _) = tokio_tungstenite::connect_async(ws_url.as_str())
            .await
            .map_err(|e| DriverError::Unreachable {
                endpoint: self.endpoint.clone(),
                detail: e.to_string(),
            })?;
        let mut session = DevToolsSession {
            ws,
            profile: profile.clone(),
            next_id: 1,
            pending_events: VecDeque::new(),
            closed: false,
        };
        session.command("Page.enable", json!({})).await?;
        session.command("Network.enable", json!({})).await?;
        session
            .command(
                "Network.setUserAgentOverride",
                json!({"userAgent": profile.ua_string}),
            )
            .await?;
        Ok(Box::new(session))
    }
}

async fn http_json(endpoint: &str, method: &str, path: &str) -> Result<Value, DriverError> {
    let unreachable = |detail: String| DriverError::Unreachable {
        endpoint: endpoint.to_string(),
        detail,
    };
    let mut stream = TcpStream::connect(endpoint)
        .await
        .map_err(|e| unreachable(e.to_string()))?;
    let request = format!("{method} {path} HTTP/1.0\r\nHost: {endpoint}\r\n\r\n");
    stream
        .write_all(request.as_bytes())
        .await
        .map_err(|e| unreachable(e.to_string()))?;
    let mut raw = Vec::new();
    stream
        .read_to_end(&mut raw)
        .await
        .map_err(|e| unreachable(e.to_string()))?;
    let text = String::from_utf8_lossy(&raw);
    let (head, body) = text
        .split_once("\r\n\r\n")
        .ok_or_else(|| unreachable("malformed HTTP response".to_string()))?;
    let status = head
        .split_whitespace()
        .nth(1)
        .unwrap_or_default()
        .parse::<u16>()
        .unwrap_or(0);
    if !(200..300).contains(&status) {
        return Err(unreachable(format!("HTTP status {status} for {path}")));
    }
    serde_json::from_str(body).map_err(|e| DriverError::Protocol(e.to_string()))
}

struct DevToolsSession {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    profile: UserAgentProfile,
    next_id: u64,
    pending_events: VecDeque<Value>,
    closed: bool,
}

impl DevToolsSession {
    async fn send(&mut self, method: &str, params: Value) -> Result<u64, DriverError> {
        let id = self.next_id;
        self.next_id += 1;
        let frame = json!({"id": id, "method": method, "params": params});
        self.ws
            .send(Message::text(frame.to_string()))
            .await
            .map_err(|e| DriverError::Protocol(e.to_string()))?;
        Ok(id)
    }

    /// Sends a command and waits for its response, queuing any events that
    /// arrive in between.
    async fn command(&mut self, method: &str, params: Value) -> Result<Value, DriverError> {
        let id = self.send(method, params).await?;
        let deadline = Instant::now() + COMMAND_TIMEOUT;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(DriverError::Protocol(format!(
                    "timed out waiting for {method} response"
                )));
            }
            let frame = tokio::time::timeout(remaining, self.ws.next())
                .await
                .map_err(|_| {
                    DriverError::Protocol(format!("timed out waiting for {method} response"))
                })?;
            let Some(Ok(message)) = frame else {
                return Err(DriverError::Protocol("connection closed".to_string()));
            };
            let Ok(text) = message.to_text() else {
                continue;
            };
            let Ok(value) = serde_json::from_str::<Value>(text) else {
                continue;
            };
            if value.get("method").is_some() {
                self.pending_events.push_back(value);
                continue;
            }
            if value.get("id").and_then(|v| v.as_u64()) == Some(id) {
                if let Some(error) = value.get("error") {
                    return Err(DriverError::Protocol(error.to_string()));
                }
                return Ok(value.get("result").cloned().unwrap_or(Value::Null));
            }
        }
    }

    /// Next protocol event: from the backlog, else from the socket within
    /// `budget`. Command responses are skipped. `Ok(None)` means the budget
    /// elapsed.
    async fn next_event(&mut self, budget: Duration) -> Result<Option<Value>, DriverError> {
        if let Some(event) = self.pending_events.pop_front() {
            return Ok(Some(event));
        }
        let deadline = Instant::now() + budget;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let Ok(frame) = tokio::time::timeout(remaining, self.ws.next()).await else {
                return Ok(None);
            };
            let Some(Ok(message)) = frame else {
                return Err(DriverError::Protocol("connection closed".to_string()));
            };
            let Ok(text) = message.to_text() else {
                continue;
            };
            let Ok(value) = serde_json::from_str::<Value>(text) else {
                continue;
            };
            if value.get("method").is_some() {
                return Ok(Some(value));
            }
        }
    }

    /// Dismisses dialogs left over from a previous navigation so the page
    /// task never stays blocked, without recording them.
    async fn drain_stale_events(&mut self) -> Result<(), DriverError> {
        while let Some(event) = self.next_event(Duration::from_millis(1)).await? {
            if event.get("method").and_then(|m| m.as_str()) == Some("Page.javascriptDialogOpening")
            {
                self.send("Page.handleJavaScriptDialog", json!({"accept": true}))
                    .await?;
            }
        }
        Ok(())
    }
}

#[async_trait]
impl BrowserSession for DevToolsSession {
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
        let mut final_url = parsed.to_string();

        self.drain_stale_events().await?;
        let started = Instant::now();
        let response = self.command("Page.navigate", json!({"url": url})).await?;
        if let Some(error_text) = response.get("errorText").and_then(|v| v.as_str()) {
            if !error_text.is_empty() {
                return Ok(network_error_outcome(url, final_url, started));
            }
        }

        let grace = Duration::from_millis(limits.grace_ms);
        let hard_end = started + Duration::from_millis(limits.hard_cap_ms);
        let mut load_finished: Option<Instant> = None;
        let mut dialogs: Vec<DialogEvent> = Vec::new();
        let mut truncated = false;

        loop {
            let window_end = match load_finished {
                Some(at) => (at + grace).min(hard_end),
                None => hard_end,
            };
            let now = Instant::now();
            if now >= window_end {
                break;
            }
            let Some(event) = self.next_event(window_end - now).await? else {
                continue;
            };
            let method = event.get("method").and_then(|m| m.as_str()).unwrap_or("");
            let params = event.get("params").cloned().unwrap_or(Value::Null);
            match method {
                "Page.javascriptDialogOpening" => {
                    let offset_ms = started.elapsed().as_millis() as u64;
                    if dialogs.len() < limits.dialog_cap {
                        dialogs.push(DialogEvent {
                            message: params
                                .get("message")
                                .and_then(|v| v.as_str())
                                .unwrap_or("")
                                .to_string(),
                            page_url: params
                                .get("url")
                                .and_then(|v| v.as_str())
                                .unwrap_or(&final_url)
                                .to_string(),
                            kind: params
                                .get("type")
                                .and_then(|v| v.as_str())
                                .and_then(DialogKind::parse)
                                .unwrap_or(DialogKind::Alert),
                            offset_ms,
                        });
                    } else {
                        truncated = true;
                    }
                    // Accept immediately so page execution continues.
                    self.send("Page.handleJavaScriptDialog", json!({"accept": true}))
                        .await?;
                }
                "Network.loadingFinished" => {
                    load_finished.get_or_insert_with(Instant::now);
                }
                "Network.loadingFailed" if load_finished.is_none() => {
                    return Ok(network_error_outcome(url, final_url, started));
                }
                "Page.frameNavigated" => {
                    if let Some(new_url) = params
                        .get("frame")
                        .and_then(|f| f.get("url"))
                        .and_then(|v| v.as_str())
                    {
                        final_url = new_url.to_string();
                    }
                }
                _ => {}
            }
        }

        let status = match load_finished {
            Some(at) if at + grace <= hard_end => NavStatus::Loaded,
            _ => NavStatus::Timeout,
        };
        Ok(NavigationOutcome {
            requested_url: url.to_string(),
            final_url,
            status,
            dialogs,
            duration_ms: started.elapsed().as_millis() as u64,
            dialogs_truncated: truncated,
        })
    }

    async fn close(&mut self) -> Result<(), DriverError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        let _ = self.ws.close(None).await;
        Ok(())
    }

    fn profile(&self) -> &UserAgentProfile {
        &self.profile
    }
}

fn network_error_outcome(url: &str, final_url: String, started: Instant) -> NavigationOutcome {
    NavigationOutcome {
        requested_url: url.to_string(),
        final_url,
        status: NavStatus::NetworkError,
        dialogs: Vec::new(),
        duration_ms: started.elapsed().as_millis() as u64,
        dialogs_truncated: false,
    }
}
