//! DevTools-protocol stand-in for a debugging-enabled browser.
//!
//! Speaks the wire subset the scan client needs — target discovery over
//! HTTP (`/json/new`, `/json/list`), then JSON commands and events over a
//! WebSocket — and actually fetches pages over HTTP with the overridden
//! User-Agent, so server-side UA logging observes the genuine header. Pages
//! are "executed" by reading the embedded dialog schedule and playing it in
//! real time, one modal dialog at a time.

use std::net::SocketAddr;
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, ReadBuf};
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use super::server::SCHEDULE_MARKER;
use super::FixtureError;
use crate::manifest::Branch;

/// Where page fetches connect: straight to the URL's host, or everything
/// mapped to one address (the fixture server), Host header preserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostMap {
    Direct,
    MapAll(SocketAddr),
}

pub struct BrowserEmulator {
    addr: SocketAddr,
    handle: JoinHandle<()>,
}

impl BrowserEmulator {
    pub async fn start(bind: SocketAddr, host_map: HostMap) -> Result<Self, FixtureError> {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|source| FixtureError::Bind { addr: bind, source })?;
        let addr = listener
            .local_addr()
            .map_err(|source| FixtureError::Bind { addr: bind, source })?;
        let next_target = Arc::new(AtomicU64::new(1));
        let handle = tokio::spawn(async move {
            loop {
                let Ok((stream, _)) = listener.accept().await else {
                    break;
                };
                let next_target = Arc::clone(&next_target);
                tokio::spawn(async move {
                    let _ = handle_connection(stream, addr, host_map, next_target).await;
                });
            }
        });
        Ok(Self { addr, handle })
    }

    /// `host:port` endpoint for the scan client's configuration.
    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for BrowserEmulator {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

async fn handle_connection(
    mut stream: TcpStream,
    addr: SocketAddr,
    host_map: HostMap,
    next_target: Arc<AtomicU64>,
) -> std::io::Result<()> {
    // Read the request head ourselves, then either answer plain HTTP or
    // hand a replaying stream to the WebSocket handshake.
    let mut head = Vec::with_capacity(1024);
    let mut byte = [0u8; 1];
    while !head.ends_with(b"\r\n\r\n") {
        if head.len() > 16 * 1024 || stream.read(&mut byte).await? == 0 {
            return Ok(());
        }
        head.push(byte[0]);
    }
    let head_text = String::from_utf8_lossy(&head).to_string();
    let mut lines = head_text.lines();
    let request_line = lines.next().unwrap_or_default();
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let is_upgrade = head_text
        .to_ascii_lowercase()
        .contains("upgrade: websocket");

    if is_upgrade && path.starts_with("/devtools/") {
        let replayed = PrefixedStream {
            prefix: head,
            pos: 0,
            inner: stream,
        };
        let ws = tokio_tungstenite::accept_async(replayed)
            .await
            .map_err(std::io::Error::other)?;
        ws_session(ws, host_map).await;
        return Ok(());
    }

    let respond = |status: &str, body: String| {
        format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json; charset=UTF-8\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
    };
    let response = match (method.as_str(), path.split('?').next().unwrap_or("")) {
        (_, "/json/new") => {
            let id = next_target.fetch_add(1, Ordering::SeqCst);
            let target = json!({
                "id": format!("page-{id}"),
                "type": "page",
                "title": "about:blank",
                "url": "about:blank",
                "webSocketDebuggerUrl": format!("ws://{addr}/devtools/page/page-{id}"),
            });
            respond("200 OK", target.to_string())
        }
        (_, "/json") | (_, "/json/list") => {
            let id = next_target.fetch_add(1, Ordering::SeqCst);
            let targets = json!([{
                "id": format!("page-{id}"),
                "type": "page",
                "title": "about:blank",
                "url": "about:blank",
                "webSocketDebuggerUrl": format!("ws://{addr}/devtools/page/page-{id}"),
            }]);
            respond("200 OK", targets.to_string())
        }
        (_, "/json/version") => respond(
            "200 OK",
            json!({
                "Browser": "EmulatedBrowser/1.0",
                "Protocol-Version": "1.3",
            })
            .to_string(),
        ),
        _ => respond("404 Not Found", "{}".to_string()),
    };
    stream.write_all(response.as_bytes()).await?;
    stream.shutdown().await.ok();
    Ok(())
}

struct ActiveNav {
    handles: Arc<Mutex<Vec<JoinHandle<()>>>>,
    ack_tx: mpsc::UnboundedSender<()>,
}

impl ActiveNav {
    fn abort(&self) {
        for handle in self.handles.lock().expect("nav handles").drain(..) {
            handle.abort();
        }
    }
}

async fn ws_session<S>(ws: tokio_tungstenite::WebSocketStream<S>, host_map: HostMap)
where
    S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
{
    let (mut sink, mut source) = ws.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Value>();
    let writer = tokio::spawn(async move {
        while let Some(value) = out_rx.recv().await {
            if sink.send(Message::text(value.to_string())).await.is_err() {
                break;
            }
        }
    });

    let mut ua_override: Option<String> = None;
    let mut nav: Option<ActiveNav> = None;

    while let Some(Ok(message)) = source.next().await {
        let Ok(text) = message.to_text() else {
            continue;
        };
        if text.is_empty() {
            continue;
        }
        let Ok(command) = serde_json::from_str::<Value>(text) else {
            continue;
        };
        let id = command.get("id").cloned().unwrap_or(Value::Null);
        let method = command
            .get("method")
            .and_then(|m| m.as_str())
            .unwrap_or_default()
            .to_string();
        let params = command.get("params").cloned().unwrap_or(Value::Null);

        let mut result = json!({});
        match method.as_str() {
            "Network.setUserAgentOverride" => {
                ua_override = params
                    .get("userAgent")
                    .and_then(|v| v.as_str())
                    .map(|s| s.to_string());
            }
            "Page.navigate" => {
                if let Some(old) = nav.take() {
                    old.abort();
                }
                let url = params
                    .get("url")
                    .and_then(|v| v.as_str())
                    .unwrap_or_default()
                    .to_string();
                let (ack_tx, ack_rx) = mpsc::unbounded_channel::<()>();
                let handles = Arc::new(Mutex::new(Vec::new()));
                let page = tokio::spawn(page_task(
                    url,
                    ua_override.clone(),
                    host_map,
                    out_tx.clone(),
                    ack_rx,
                    Arc::clone(&handles),
                ));
                handles.lock().expect("nav handles").push(page);
                nav = Some(ActiveNav { handles, ack_tx });
                result = json!({"frameId": "F1", "loaderId": "L1"});
            }
            "Page.handleJavaScriptDialog" => {
                if let Some(nav) = &nav {
                    let _ = nav.ack_tx.send(());
                }
            }
            // Page.enable, Network.enable, and anything else in the
            // subset succeed with an empty result.
            _ => {}
        }
        if out_tx.send(json!({"id": id, "result": result})).is_err() {
            break;
        }
    }
    if let Some(nav) = nav.take() {
        nav.abort();
    }
    writer.abort();
}

fn now_ts() -> f64 {
    std::time::UNIX_EPOCH
        .elapsed()
        .map(|d| d.as_secs_f64())
        .unwrap_or_default()
}

async fn page_task(
    url: String,
    ua_override: Option<String>,
    host_map: HostMap,
    events: mpsc::UnboundedSender<Value>,
    ack_rx: mpsc::UnboundedReceiver<()>,
    handles: Arc<Mutex<Vec<JoinHandle<()>>>>,
) {
    let fail = |events: &mpsc::UnboundedSender<Value>, error_text: &str| {
        let _ = events.send(json!({
            "method": "Network.loadingFailed",
            "params": {"requestId": "R1", "errorText": error_text, "timestamp": now_ts()},
        }));
    };

    let Ok(parsed) = url::Url::parse(&url) else {
        fail(&events, "net::ERR_INVALID_URL");
        return;
    };
    let Some(host) = parsed.host_str().map(|h| h.to_string()) else {
        fail(&events, "net::ERR_INVALID_URL");
        return;
    };
    let port = parsed.port().unwrap_or(80);
    let path = if parsed.path().is_empty() {
        "/"
    } else {
        parsed.path()
    };

    let connect_result = match host_map {
        HostMap::MapAll(addr) => TcpStream::connect(addr).await,
        HostMap::Direct => TcpStream::connect((host.as_str(), port)).await,
    };
    let mut stream = match connect_result {
        Ok(stream) => stream,
        Err(_) => {
            fail(&events, "net::ERR_NAME_NOT_RESOLVED");
            return;
        }
    };

    let nav_start = tokio::time::Instant::now();
    let ua = ua_override.unwrap_or_else(|| "EmulatedBrowser/1.0".to_string());
    let request = format!(
        "GET {path} HTTP/1.0\r\nHost: {host}\r\nUser-Agent: {ua}\r\nAccept: text/html\r\n\r\n"
    );
    if stream.write_all(request.as_bytes()).await.is_err() {
        fail(&events, "net::ERR_CONNECTION_RESET");
        return;
    }

    let final_url = parsed.to_string();
    let _ = events.send(json!({
        "method": "Page.frameNavigated",
        "params": {"frame": {"id": "F1", "url": final_url}},
    }));

    // Stream the body; once the embedded schedule is visible, start playing
    // it. EOF is the page's loading-finished signal.
    let mut buf = Vec::with_capacity(8 * 1024);
    let mut chunk = [0u8; 2048];
    let mut schedule_started = false;
    let mut ack_rx = Some(ack_rx);
    loop {
        match stream.read(&mut chunk).await {
            Ok(0) => break,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(_) => break,
        }
        if !schedule_started {
            if let Some(branch) = extract_schedule(&buf) {
                schedule_started = true;
                let events = events.clone();
                let final_url = final_url.clone();
                let receiver = ack_rx.take().expect("ack receiver unused");
                let player =
                    tokio::spawn(play_dialogs(branch, final_url, nav_start, events, receiver));
                handles.lock().expect("nav handles").push(player);
            }
        }
    }
    let _ = events.send(json!({
        "method": "Network.loadingFinished",
        "params": {"requestId": "R1", "timestamp": now_ts()},
    }));
}

/// Fires the scripted dialogs at their offsets, one at a time, waiting for
/// the client's dismissal between dialogs. Runs until aborted.
async fn play_dialogs(
    branch: Branch,
    page_url: String,
    nav_start: tokio::time::Instant,
    events: mpsc::UnboundedSender<Value>,
    mut ack_rx: mpsc::UnboundedReceiver<()>,
) {
    if branch.dialogs.is_empty() {
        return;
    }
    let period = branch.loop_period_ms();
    let mut shift = 0u64;
    loop {
        for dialog in &branch.dialogs {
            let at = nav_start + Duration::from_millis(dialog.at_ms + shift);
            tokio::time::sleep_until(at).await;
            let sent = events.send(json!({
                "method": "Page.javascriptDialogOpening",
                "params": {
                    "url": page_url,
                    "message": dialog.message,
                    "type": dialog.kind.as_str(),
                },
            }));
            if sent.is_err() {
                return;
            }
            // Modal: the page is blocked until the dialog is handled.
            if ack_rx.recv().await.is_none() {
                return;
            }
        }
        if !branch.loop_dialogs {
            return;
        }
        shift += period;
    }
}

fn extract_schedule(buf: &[u8]) -> Option<Branch> {
    let text = std::str::from_utf8(buf).ok()?;
    let start = text.find(SCHEDULE_MARKER)? + SCHEDULE_MARKER.len();
    let end = start + text[start..].find("</script>")?;
    serde_json::from_str(&text[start..end]).ok()
}

/// Replays already-consumed bytes before reading from the socket; lets the
/// WebSocket handshake re-read the request head we routed on.
struct PrefixedStream {
    prefix: Vec<u8>,
    pos: usize,
    inner: TcpStream,
}

impl AsyncRead for PrefixedStream {
    fn poll_read(
        mut self: Pin<&mut Self>,
        cx: &mut Context<'_>,
        buf: &mut ReadBuf<'_>,
    ) -> Poll<std::io::Result<()>> {
        if self.pos < self.prefix.len() {
            let remaining = &self.prefix[self.pos..];
            let take = remaining.len().min(buf.remaining());
            buf.put_slice(&remaining[..take]);
            self.pos += take;
            return Poll::Ready(Ok(()));
        }
        Pin::new(&mut self.inner).poll_read(cx, buf)
    }
}

impl AsyncWrite for PrefixedStream {
    fn poll_write(
        mut self: Pin<&mut Self>,
        cx: &mut Context<'_>,
        data: &[u8],
    ) -> Poll<std::io::Result<usize>> {
        Pin::new(&mut self.inner).poll_write(cx, data)
    }

    fn poll_flush(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<std::io::Result<()>> {
        Pin::new(&mut self.inner).poll_flush(cx)
    }

    fn poll_shutdown(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<std::io::Result<()>> {
        Pin::new(&mut self.inner).poll_shutdown(cx)
    }
}
