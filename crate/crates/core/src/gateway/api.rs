//! HTTP API and live event stream.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio_stream::wrappers::BroadcastStream;
use tokio_util::sync::CancellationToken;

use super::{Gateway, ManualOutcome};
use crate::model::{Action, Actuator, Mode, Param};
use crate::stats::{one_sample_ttest, samples_from_text, StatsError};
use crate::store::{QueryError, VisitSnapshot};

/// Default history window: four hours.
pub const DEFAULT_WINDOW_S: u64 = 4 * 3600;

#[derive(Clone)]
struct AppState {
    gw: Arc<Gateway>,
    shutdown: CancellationToken,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

/// Builds the API router. `ui_dir`, when set, is served at `/`.
pub fn router(gw: Arc<Gateway>, ui_dir: Option<PathBuf>, shutdown: CancellationToken) -> Router {
    let api = Router::new()
        .route("/api/v1/snapshot", get(snapshot))
        .route("/api/v1/history", get(history))
        .route("/api/v1/actuators", get(actuators))
        .route("/api/v1/actuators/{target}", post(actuate))
        .route("/api/v1/mode", put(set_mode).get(get_mode))
        .route("/api/v1/visits", get(get_visit).post(post_visit))
        .route("/api/v1/stats/ttest", post(ttest))
        .route("/api/v1/stream", get(stream))
        .with_state(AppState { gw, shutdown });
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

async fn snapshot(State(s): State<AppState>) -> Response {
    Json(s.gw.snapshot()).into_response()
}

#[derive(Deserialize)]
struct HistoryQuery {
    param: Option<String>,
    window_s: Option<u64>,
}

async fn history(State(s): State<AppState>, query: Result<Query<HistoryQuery>, axum::extract::rejection::QueryRejection>) -> Response {
    let Ok(Query(q)) = query else {
        return error(StatusCode::BAD_REQUEST, "bad query");
    };
    let Some(name) = q.param else {
        return error(StatusCode::BAD_REQUEST, "missing param");
    };
    let Ok(param) = name.parse::<Param>() else {
        return error(StatusCode::BAD_REQUEST, format!("unknown param {name:?}"));
    };
    let window_s = q.window_s.unwrap_or(DEFAULT_WINDOW_S);
    match s.gw.store().query_window(param, s.gw.now_ms(), window_s) {
        Ok(points) => Json(points).into_response(),
        Err(QueryError::EmptyWindow) => error(StatusCode::BAD_REQUEST, "window_s must be > 0"),
    }
}

#[derive(Serialize)]
struct ActuatorsBody {
    pump: bool,
    cooler: bool,
    light: bool,
    mode: Mode,
}

async fn actuators(State(s): State<AppState>) -> Response {
    let flags = s.gw.flags();
    Json(ActuatorsBody {
        pump: flags.pump,
        cooler: flags.cooler,
        light: flags.light,
        mode: s.gw.mode().mode,
    })
    .into_response()
}

#[derive(Deserialize)]
struct ActionBody {
    action: String,
}

async fn actuate(State(s): State<AppState>, Path(target): Path<String>, body: Bytes) -> Response {
    let Ok(target) = target.to_ascii_uppercase().parse::<Actuator>() else {
        return error(StatusCode::NOT_FOUND, format!("unknown actuator {target:?}"));
    };
    let action = match serde_json::from_slice::<ActionBody>(&body) {
        Ok(b) => match b.action.as_str() {
            "ON" => Action::On,
            "OFF" => Action::Off,
            other => return error(StatusCode::BAD_REQUEST, format!("unknown action {other:?}")),
        },
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    match s.gw.manual(target, action) {
        ManualOutcome::Accepted { cmd_id } => (StatusCode::ACCEPTED, Json(json!({ "cmd_id": cmd_id }))).into_response(),
        ManualOutcome::Rejected => error(StatusCode::CONFLICT, "manual control is disabled in AUTO mode"),
        ManualOutcome::NotConnected => error(StatusCode::SERVICE_UNAVAILABLE, "node not connected"),
    }
}

#[derive(Deserialize)]
struct ModeBody {
    mode: String,
    by: Option<String>,
}

async fn get_mode(State(s): State<AppState>) -> Response {
    Json(s.gw.mode()).into_response()
}

async fn set_mode(State(s): State<AppState>, body: Bytes) -> Response {
    let body = match serde_json::from_slice::<ModeBody>(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let mode = match body.mode.as_str() {
        "AUTO" => Mode::Auto,
        "MANUAL" => Mode::Manual,
        other => return error(StatusCode::BAD_REQUEST, format!("unknown mode {other:?}")),
    };
    match s.gw.set_mode(mode, body.by.as_deref().unwrap_or("api")) {
        Ok(m) => Json(m).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Deserialize)]
struct UserQuery {
    user: Option<String>,
}

#[derive(Serialize)]
struct VisitBody {
    last_visit_ts_ms: u64,
    snapshot_at_visit: VisitSnapshot,
}

fn user_of(q: Result<Query<UserQuery>, axum::extract::rejection::QueryRejection>) -> Result<String, Response> {
    match q {
        Ok(Query(UserQuery { user: Some(u) })) if !u.is_empty() => Ok(u),
        _ => Err(error(StatusCode::BAD_REQUEST, "missing user")),
    }
}

async fn get_visit(
    State(s): State<AppState>,
    q: Result<Query<UserQuery>, axum::extract::rejection::QueryRejection>,
) -> Response {
    let user = match user_of(q) {
        Ok(u) => u,
        Err(r) => return r,
    };
    match s.gw.store().last_visit(&user) {
        Some(v) => Json(VisitBody {
            last_visit_ts_ms: v.ts_ms,
            snapshot_at_visit: v.snapshot,
        })
        .into_response(),
        None => error(StatusCode::NOT_FOUND, "first visit"),
    }
}

async fn post_visit(
    State(s): State<AppState>,
    q: Result<Query<UserQuery>, axum::extract::rejection::QueryRejection>,
) -> Response {
    let user = match user_of(q) {
        Ok(u) => u,
        Err(r) => return r,
    };
    match s.gw.record_visit(&user) {
        Ok(Some(v)) => (
            StatusCode::CREATED,
            Json(VisitBody {
                last_visit_ts_ms: v.ts_ms,
                snapshot_at_visit: v.snapshot,
            }),
        )
            .into_response(),
        Ok(None) => error(StatusCode::CONFLICT, "no reading yet"),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Deserialize)]
struct TTestQuery {
    test_value: Option<f64>,
    day: Option<String>,
}

async fn ttest(
    q: Result<Query<TTestQuery>, axum::extract::rejection::QueryRejection>,
    body: Bytes,
) -> Response {
    let Ok(Query(q)) = q else {
        return error(StatusCode::BAD_REQUEST, "bad query");
    };
    let Some(test_value) = q.test_value else {
        return error(StatusCode::BAD_REQUEST, "missing test_value");
    };
    let Ok(text) = std::str::from_utf8(&body) else {
        return error(StatusCode::BAD_REQUEST, "body is not UTF-8");
    };
    let samples = match samples_from_text(text, q.day.as_deref()) {
        Ok(s) => s,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    match one_sample_ttest(&samples, test_value) {
        Ok(r) => Json(r).into_response(),
        Err(e @ (StatsError::InsufficientData { .. } | StatsError::DegenerateSample)) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
        }
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn stream(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let events = BroadcastStream::new(s.gw.subscribe())
        .filter_map(|e| async move { e.ok() })
        .map(|e| {
            let data = serde_json::to_string(&e).unwrap_or_default();
            Ok(Event::default().event(e.name()).data(data))
        })
        .take_until(s.shutdown.clone().cancelled_owned());
    Sse::new(events).keep_alive(KeepAlive::default())
}
