use crate::state::{Status, TaskFilter, VerdictRequest};
use crate::{AuditError, AuditService};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use l2i_core::Difficulty;
use serde::Deserialize;
use serde_json::json;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use tower_http::services::ServeDir;

impl IntoResponse for AuditError {
    fn into_response(self) -> Response {
        let code = match &self {
            AuditError::UnknownRecord(_) => StatusCode::NOT_FOUND,
            AuditError::UnknownCheck(_)
            | AuditError::InvalidRequest(_)
            | AuditError::BadCursor(_)
            | AuditError::BadFilename(_) => StatusCode::BAD_REQUEST,
            AuditError::Init(_) | AuditError::CorruptLog { .. } | AuditError::Io(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        (code, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = Arc<AuditService>;

#[derive(Debug, Deserialize)]
struct ListParams {
    status: Option<String>,
    bucket: Option<String>,
    cursor: Option<String>,
    limit: Option<String>,
}

fn filter_from(p: &ListParams) -> Result<(TaskFilter, Option<usize>), AuditError> {
    let status = p
        .status
        .as_deref()
        .map(str::parse::<Status>)
        .transpose()
        .map_err(AuditError::InvalidRequest)?;
    let bucket = p
        .bucket
        .as_deref()
        .map(str::parse::<Difficulty>)
        .transpose()
        .map_err(AuditError::InvalidRequest)?;
    let limit = p
        .limit
        .as_deref()
        .map(str::parse::<usize>)
        .transpose()
        .map_err(|e| AuditError::InvalidRequest(format!("bad limit: {e}")))?;
    Ok((TaskFilter { status, bucket }, limit))
}

async fn list_tasks(State(svc): State<Shared>, Query(p): Query<ListParams>) -> Result<Response, AuditError> {
    let (filter, limit) = filter_from(&p)?;
    let page = svc.list(filter, p.cursor.as_deref(), limit)?;
    Ok(Json(page).into_response())
}

async fn get_task(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, AuditError> {
    Ok(Json(svc.task(&id)?).into_response())
}

async fn post_verdict(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<VerdictRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, AuditError> {
    let Json(req) = body.map_err(|e| AuditError::InvalidRequest(e.body_text()))?;
    // the append syncs to disk; keep it off the async workers
    let outcome = tokio::task::spawn_blocking(move || svc.post_verdict(&id, req))
        .await
        .map_err(|e| AuditError::Io(std::io::Error::other(e)))??;
    let code = if outcome.duplicate {
        StatusCode::OK
    } else {
        StatusCode::CREATED
    };
    Ok((code, Json(outcome)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportRequest {
    filename: String,
}

async fn export(
    State(svc): State<Shared>,
    body: Result<Json<ExportRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, AuditError> {
    let Json(req) = body.map_err(|e| AuditError::InvalidRequest(e.body_text()))?;
    let summary = tokio::task::spawn_blocking(move || svc.export_approved(&req.filename))
        .await
        .map_err(|e| AuditError::Io(std::io::Error::other(e)))??;
    Ok(Json(summary).into_response())
}

/// API routes, with `ui_dir` (if any) served for every other path.
pub fn router(service: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/verdicts", post(post_verdict))
        .route("/export", post(export))
        .with_state(service);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api,
    }
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(service: Shared, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
