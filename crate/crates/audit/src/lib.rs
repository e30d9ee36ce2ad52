//! Backend for the human audit of layout records.
//!
//! Tasks are built from an annotation file plus its scored companion. Each
//! task collects one yes/no verdict per check; the latest verdict per check
//! wins. Verdicts are appended to a JSONL event log and synced before the
//! caller sees a response, so replaying the log rebuilds every status.
//!
//! HTTP surface (see [`http::router`]):
//!
//! | method | path                   | body / query                                    |
//! |--------|------------------------|-------------------------------------------------|
//! | GET    | `/tasks`               | `?status=&bucket=&cursor=&limit=`               |
//! | GET    | `/tasks/{id}`          |                                                 |
//! | POST   | `/tasks/{id}/verdicts` | `{"check","verdict","auditor","idempotency_key"}` |
//! | POST   | `/export`              | `{"filename"}`                                  |
//!
//! Anything else falls through to the static UI directory when configured.

pub mod http;
mod log;
mod service;
mod state;

pub use log::EventLog;
pub use service::{AuditConfig, AuditService, ExportSummary, TaskView, VerdictOutcome};
pub use state::{
    AuditState, AuditTask, CheckState, Cursor, Page, Status, TaskFilter, TaskSummary,
    VerdictEvent, VerdictRequest, DEFAULT_CHECKS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("unknown record '{0}'")]
    UnknownRecord(String),
    #[error("unknown check '{0}'")]
    UnknownCheck(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("bad cursor: {0}")]
    BadCursor(String),
    #[error("bad export filename '{0}': use letters, digits, '.', '_' or '-', not starting with '.'")]
    BadFilename(String),
    #[error("cannot build tasks: {0}")]
    Init(String),
    #[error("event log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
