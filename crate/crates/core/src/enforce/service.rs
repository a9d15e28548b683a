//! HTTP check service.
//!
//! * `POST /v1/check`: body is an [`InvocationContext`] plus an optional
//!   `trace_id`; the reply is a [`Verdict`]. When `trace_id` is given and
//!   `prior_tools` omitted, the prefix is taken from an in-memory per-trace
//!   table, which is then extended with the checked tool unless the verdict
//!   terminates the trace.
//! * `GET /v1/health`
//! * `POST /v1/reload`: re-reads the policy directory.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    check_invocation, on_violation, Decision, EnforceConfig, InvocationContext, KillFlags, LogSink,
    Verdict, Violation, ViolationKind, ViolationSink,
};
use crate::policy::PolicyRepository;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailMode {
    /// Internal errors produce a terminate verdict.
    #[default]
    Closed,
    /// Internal errors produce an allow verdict (advisory deployments).
    Open,
}

impl FromStr for FailMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "closed" => Ok(FailMode::Closed),
            "open" => Ok(FailMode::Open),
            other => Err(format!("fail mode must be `closed` or `open`, got `{other}`")),
        }
    }
}

#[derive(Debug, Deserialize)]
struct CheckRequest {
    agent_role: String,
    tool_name: String,
    tool_input: String,
    #[serde(default)]
    thoughts: String,
    input_tokens: u64,
    output_tokens: u64,
    timestamp: i64,
    #[serde(default)]
    idle_ms: u64,
    #[serde(default)]
    processing_ms: u64,
    #[serde(default)]
    prior_tools: Option<Vec<String>>,
    #[serde(default)]
    trace_id: Option<String>,
}

/// Tool prefixes per trace id with lazy expiry.
#[derive(Debug)]
pub struct PrefixTable {
    ttl: Duration,
    entries: Mutex<HashMap<String, (Vec<String>, Instant)>>,
}

impl PrefixTable {
    pub fn new(ttl: Duration) -> Self {
        PrefixTable {
            ttl,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, trace_id: &str) -> Vec<String> {
        let mut entries = self.entries.lock().expect("prefix table");
        let now = Instant::now();
        entries.retain(|_, (_, touched)| now.duration_since(*touched) < self.ttl);
        entries
            .get(trace_id)
            .map(|(tools, _)| tools.clone())
            .unwrap_or_default()
    }

    pub fn set(&self, trace_id: &str, tools: Vec<String>) {
        self.entries
            .lock()
            .expect("prefix table")
            .insert(trace_id.to_string(), (tools, Instant::now()));
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("prefix table").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct ServiceState {
    pub repo: Arc<PolicyRepository>,
    pub policy_dir: Option<PathBuf>,
    pub config: EnforceConfig,
    pub fail_mode: FailMode,
    pub prefixes: PrefixTable,
    pub sink: Box<dyn ViolationSink>,
    pub kills: KillFlags,
}

impl ServiceState {
    pub fn new(repo: Arc<PolicyRepository>, policy_dir: Option<PathBuf>, config: EnforceConfig) -> Self {
        ServiceState {
            repo,
            policy_dir,
            config,
            fail_mode: FailMode::Closed,
            prefixes: PrefixTable::new(Duration::from_secs(3600)),
            sink: Box::new(LogSink),
            kills: KillFlags::default(),
        }
    }

    fn failure_verdict(&self, detail: String) -> Verdict {
        let violations = vec![Violation {
            kind: ViolationKind::Internal,
            detail,
            rule_index: None,
        }];
        Verdict {
            decision: match self.fail_mode {
                FailMode::Closed => Decision::Terminate,
                FailMode::Open => Decision::Allow,
            },
            violations,
        }
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/check", post(check))
        .route("/v1/health", get(health))
        .route("/v1/reload", post(reload))
        .with_state(state)
}

fn bad_request(field: String, reason: String) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": "malformed request", "field": field, "reason": reason })),
    )
        .into_response()
}

async fn check(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let de = &mut serde_json::Deserializer::from_slice(&body);
    let req: CheckRequest = match serde_path_to_error::deserialize(de) {
        Ok(r) => r,
        Err(e) => {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            // Missing fields are reported against the parent path.
            let field = match inner.strip_prefix("missing field `") {
                Some(rest) => rest.split('`').next().unwrap_or(&path).to_string(),
                None => path,
            };
            return bad_request(field, inner);
        }
    };

    let state2 = state.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let prior = match (&req.prior_tools, &req.trace_id) {
            (Some(p), _) => p.clone(),
            (None, Some(id)) => state2.prefixes.get(id),
            (None, None) => Vec::new(),
        };
        let ctx = InvocationContext {
            agent_role: req.agent_role,
            tool_name: req.tool_name,
            tool_input: req.tool_input,
            thoughts: req.thoughts,
            input_tokens: req.input_tokens,
            output_tokens: req.output_tokens,
            timestamp: req.timestamp,
            idle_ms: req.idle_ms,
            processing_ms: req.processing_ms,
            prior_tools: prior,
        };
        let verdict = check_invocation(&ctx, &state2.repo.snapshot(), &state2.config);
        if let Some(id) = req.trace_id.as_deref() {
            if verdict.decision != Decision::Terminate {
                let mut next = ctx.prior_tools.clone();
                next.push(ctx.tool_name.clone());
                state2.prefixes.set(id, next);
            }
        }
        on_violation(&verdict, req.trace_id.as_deref(), state2.sink.as_ref(), &state2.kills);
        verdict
    })
    .await;

    match outcome {
        Ok(verdict) => (StatusCode::OK, Json(verdict)).into_response(),
        Err(e) => {
            tracing::error!("check failed: {e}");
            let verdict = state.failure_verdict(format!("checker failed: {e}"));
            (StatusCode::INTERNAL_SERVER_ERROR, Json(verdict)).into_response()
        }
    }
}

async fn health(State(state): State<Arc<ServiceState>>) -> Response {
    Json(json!({ "status": "ok", "policies": state.repo.snapshot().len() })).into_response()
}

async fn reload(State(state): State<Arc<ServiceState>>) -> Response {
    let Some(dir) = state.policy_dir.clone() else {
        return (
            StatusCode::CONFLICT,
            Json(json!({ "error": "service was started without a policy directory" })),
        )
            .into_response();
    };
    let repo = state.repo.clone();
    match tokio::task::spawn_blocking(move || repo.reload(&dir)).await {
        Ok(Ok(snap)) => Json(json!({ "status": "reloaded", "policies": snap.len() })).into_response(),
        Ok(Err(e)) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({ "error": e.to_string(), "kept_policies": state.repo.snapshot().len() })),
        )
            .into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() })))
            .into_response(),
    }
}

/// Runs the service until Ctrl-C.
pub async fn serve(bind: SocketAddr, state: Arc<ServiceState>) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| crate::Error::Config(format!("bind {bind}: {e}")))?;
    tracing::info!("listening on {bind}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| crate::Error::Config(format!("server: {e}")))
}
