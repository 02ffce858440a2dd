//! HTTP front-end speaking the same chat-completion protocol `collect` uses.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{prompt_key, SimEndpoint, StyleError};
use crate::collect::protocol::{
    ChatRequest, ChatResponse, ErrorBody, ErrorDetail, DEFAULT_PATH, META_QUERY_ID, META_SAMPLE_INDEX,
};

struct AppState {
    sim: SimEndpoint,
    requests: AtomicU64,
}

/// A running simulator endpoint. Dropping it without [`SimServer::shutdown`]
/// aborts the server task.
pub struct SimServer {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    handle: Option<JoinHandle<()>>,
}

impl SimServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn request_count(&self) -> u64 {
        self.state.requests.load(Ordering::Relaxed)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.handle.take() {
            let _ = handle.await;
        }
    }

    /// Serve until the process is interrupted.
    pub async fn run_forever(mut self) {
        if let Some(handle) = self.handle.take() {
            let _ = handle.await;
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        if let Some(handle) = &self.handle {
            handle.abort();
        }
    }
}

fn bad_request(message: impl Into<String>) -> Response {
    let body = ErrorBody {
        error: ErrorDetail {
            message: message.into(),
            kind: "invalid_request_error".to_string(),
        },
    };
    (StatusCode::BAD_REQUEST, Json(body)).into_response()
}

/// Keep the first `max` whitespace-separated words, preserving line breaks.
pub(crate) fn truncate_words(text: &str, max: usize) -> String {
    if text.split_whitespace().count() <= max {
        return text.to_string();
    }
    let mut left = max;
    let mut lines = Vec::new();
    for line in text.lines() {
        if left == 0 {
            break;
        }
        let words: Vec<&str> = line.split_whitespace().take(left).collect();
        left -= words.len();
        lines.push(words.join(" "));
    }
    lines.join("\n")
}

async fn complete(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let id = state.requests.fetch_add(1, Ordering::Relaxed);
    let req: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("malformed request body: {e}")),
    };
    let Some(prompt) = req.prompt() else {
        return bad_request("request has no user message");
    };
    let query_id = req
        .meta(META_QUERY_ID)
        .map(str::to_string)
        .unwrap_or_else(|| prompt_key(prompt));
    let sample_index = match req.meta(META_SAMPLE_INDEX).map(str::parse::<u32>) {
        None => 1,
        Some(Ok(j)) if j >= 1 => j,
        Some(_) => return bad_request("sample_index must be a positive integer"),
    };
    let text = match state.sim.generate_raw(&query_id, prompt, sample_index, req.temperature) {
        Ok(text) => text,
        Err(e) => return bad_request(e.to_string()),
    };
    let text = match req.max_tokens {
        Some(0) => return bad_request("max_tokens must be >= 1"),
        Some(m) => truncate_words(&text, m as usize),
        None => text,
    };
    Json(ChatResponse::single(format!("simcmpl-{id}"), state.sim.model_id(), text)).into_response()
}

/// Bind `bind` (e.g. `127.0.0.1:0`) and serve chat completions at the default path.
pub async fn serve(sim: SimEndpoint, bind: &str) -> Result<SimServer, StyleError> {
    serve_at(sim, bind, DEFAULT_PATH).await
}

pub async fn serve_at(sim: SimEndpoint, bind: &str, path: &str) -> Result<SimServer, StyleError> {
    let listener = TcpListener::bind(bind).await.map_err(|source| StyleError::Bind {
        addr: bind.to_string(),
        source,
    })?;
    let addr = listener.local_addr().map_err(|source| StyleError::Bind {
        addr: bind.to_string(),
        source,
    })?;
    let state = Arc::new(AppState {
        sim,
        requests: AtomicU64::new(0),
    });
    let app = Router::new()
        .route(path, post(complete))
        .with_state(state.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(SimServer {
        addr,
        state,
        shutdown: Some(tx),
        handle: Some(handle),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_preserves_lines() {
        let text = "a b c\nd e\nf";
        assert_eq!(truncate_words(text, 10), text);
        assert_eq!(truncate_words(text, 4), "a b c\nd");
        assert_eq!(truncate_words(text, 3), "a b c");
    }
}
