//! Fixture HTTP server: serves the scripted population with UA-conditional
//! pages, routed by Host header with a `/site/<domain>/` path fallback.
//!
//! Pages embed their dialog schedule both as JSON (read by the browser
//! emulator) and as script that a real browser executes. The body stream
//! completes after `load_ms`, or never for `never_finishes` branches.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use futures::SinkExt;

use super::FixtureError;
use crate::manifest::{Branch, FixtureSpec};

/// One logged request: which fixture domain was asked for, carrying which
/// User-Agent header. Entries are in arrival order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UaLogEntry {
    pub domain: String,
    pub user_agent: String,
}

struct ServerState {
    by_domain: BTreeMap<String, FixtureSpec>,
    ua_log: Mutex<Vec<UaLogEntry>>,
}

pub struct FixtureServer {
    addr: SocketAddr,
    state: Arc<ServerState>,
    handle: tokio::task::JoinHandle<()>,
}

impl FixtureServer {
    pub async fn start(specs: Vec<FixtureSpec>, bind: SocketAddr) -> Result<Self, FixtureError> {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|source| FixtureError::Bind { addr: bind, source })?;
        let addr = listener
            .local_addr()
            .map_err(|source| FixtureError::Bind { addr: bind, source })?;
        let state = Arc::new(ServerState {
            by_domain: specs
                .into_iter()
                .map(|s| (s.domain.to_ascii_lowercase(), s))
                .collect(),
            ua_log: Mutex::new(Vec::new()),
        });
        let app = Router::new()
            .fallback(serve_page)
            .with_state(Arc::clone(&state));
        let handle = tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        Ok(Self {
            addr,
            state,
            handle,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ua_log(&self) -> Vec<UaLogEntry> {
        self.state.ua_log.lock().expect("ua log lock").clone()
    }

    /// User-Agent of the first request that reached this domain.
    pub fn first_ua(&self, domain: &str) -> Option<String> {
        self.state
            .ua_log
            .lock()
            .expect("ua log lock")
            .iter()
            .find(|e| e.domain == domain)
            .map(|e| e.user_agent.clone())
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

async fn serve_page(
    State(state): State<Arc<ServerState>>,
    uri: Uri,
    headers: HeaderMap,
) -> Response {
    let host_domain = headers
        .get(header::HOST)
        .and_then(|v| v.to_str().ok())
        .map(|h| h.split(':').next().unwrap_or(h).to_ascii_lowercase());
    let path_domain = uri
        .path()
        .strip_prefix("/site/")
        .map(|rest| rest.split('/').next().unwrap_or(rest).to_ascii_lowercase());

    let spec = host_domain
        .as_deref()
        .and_then(|d| state.by_domain.get(d))
        .or_else(|| path_domain.as_deref().and_then(|d| state.by_domain.get(d)));
    let Some(spec) = spec else {
        return (StatusCode::NOT_FOUND, "unknown fixture domain\n").into_response();
    };

    let user_agent = headers
        .get(header::USER_AGENT)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    state.ua_log.lock().expect("ua log lock").push(UaLogEntry {
        domain: spec.domain.clone(),
        user_agent: user_agent.clone(),
    });

    let branch = spec.branch_for(&user_agent).cloned().unwrap_or(Branch {
        ua_pattern: "*".to_string(),
        load_ms: 0,
        dialogs: Vec::new(),
        never_finishes: false,
        loop_dialogs: false,
    });
    let html = render_page(&spec.domain, &branch);

    let (mut tx, rx) =
        futures::channel::mpsc::channel::<Result<Bytes, std::convert::Infallible>>(4);
    tokio::spawn(async move {
        if tx.send(Ok(Bytes::from(html))).await.is_err() {
            return;
        }
        if branch.never_finishes {
            // Hold the body open; a keepalive comment keeps the task bound
            // to the client's lifetime.
            loop {
                tokio::time::sleep(Duration::from_secs(5)).await;
                if tx
                    .send(Ok(Bytes::from_static(b"<!-- still loading -->\n")))
                    .await
                    .is_err()
                {
                    return;
                }
            }
        }
        tokio::time::sleep(Duration::from_millis(branch.load_ms)).await;
        let _ = tx.send(Ok(Bytes::from_static(b"<!-- loaded -->\n"))).await;
    });

    (
        StatusCode::OK,
        [(header::CONTENT_TYPE, "text/html; charset=utf-8")],
        Body::from_stream(rx),
    )
        .into_response()
}

pub(crate) const SCHEDULE_MARKER: &str =
    "<script type=\"application/json\" id=\"dialog-schedule\">";

fn render_page(domain: &str, branch: &Branch) -> String {
    let schedule = serde_json::to_string(branch)
        .expect("branch serializes")
        .replace('<', "\\u003c");
    format!(
        r#"<!doctype html>
<html>
<head><meta charset="utf-8"><title>{domain}</title></head>
<body>
{SCHEDULE_MARKER}{schedule}</script>
<script>
(function () {{
  var schedule = JSON.parse(document.getElementById("dialog-schedule").textContent);
  var dialogs = schedule.dialogs || [];
  function fire(d) {{
    if (d.kind === "confirm") {{ confirm(d.message); }}
    else if (d.kind === "prompt") {{ prompt(d.message); }}
    else {{ alert(d.message); }}
  }}
  dialogs.forEach(function (d) {{
    setTimeout(function () {{ fire(d); }}, d.at_ms);
  }});
  if (schedule.loop_dialogs && dialogs.length > 0) {{
    var last = 0;
    dialogs.forEach(function (d) {{ if (d.at_ms > last) {{ last = d.at_ms; }} }});
    var i = 0;
    function again() {{
      fire(dialogs[i % dialogs.length]);
      i += 1;
      setTimeout(again, 0);
    }}
    setTimeout(again, last + 100);
  }}
}})();
</script>
<p>fixture page for {domain}</p>
</body>
</html>
"#
    )
}
