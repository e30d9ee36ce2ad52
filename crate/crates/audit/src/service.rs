use crate::log::EventLog;
use crate::state::{AuditState, AuditTask, Cursor, Page, Status, TaskFilter, VerdictEvent, VerdictRequest};
use crate::{AuditError, DEFAULT_CHECKS};
use l2i_core::annotations::{record_to_line, write_dataset};
use l2i_core::overlayscore::ScoredRecordLine;
use l2i_core::{Difficulty, LayoutRecord};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;

#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub checks: Vec<String>,
    pub log_path: PathBuf,
    pub export_dir: PathBuf,
}

impl AuditConfig {
    pub fn new(log_path: impl Into<PathBuf>, export_dir: impl Into<PathBuf>) -> Self {
        Self {
            checks: DEFAULT_CHECKS.map(String::from).to_vec(),
            log_path: log_path.into(),
            export_dir: export_dir.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictOutcome {
    pub event: VerdictEvent,
    pub status: Status,
    /// True when the submission repeated an idempotency key and nothing was
    /// logged.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExportSummary {
    pub path: PathBuf,
    pub total: usize,
    pub counts: BTreeMap<Difficulty, usize>,
}

/// Full task view: the record in annotation-file form plus audit state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskView {
    pub id: String,
    pub record: serde_json::Value,
    pub score: f64,
    pub bucket: Difficulty,
    pub image: Option<String>,
    pub status: Status,
    pub checks: BTreeMap<String, Option<crate::CheckState>>,
}

type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

/// Shared service state. Reads take the state lock; writers additionally
/// hold the log mutex, which serializes appends and sequence numbers.
pub struct AuditService {
    state: RwLock<AuditState>,
    log: Mutex<EventLog>,
    export_dir: PathBuf,
    clock: Clock,
}

fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn valid_filename(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

impl AuditService {
    /// Builds tasks and replays any existing log. Returns the service and the
    /// ids of records skipped for lack of a score.
    pub fn open(
        records: Vec<LayoutRecord>,
        scored: &[ScoredRecordLine],
        config: AuditConfig,
    ) -> Result<(Self, Vec<String>), AuditError> {
        let (mut state, unscored) = AuditState::new(records, scored, config.checks)?;
        let (log, events) = EventLog::open(&config.log_path)?;
        for (k, ev) in events.into_iter().enumerate() {
            state.apply(ev).map_err(|e| AuditError::CorruptLog {
                line: k + 1,
                message: e.to_string(),
            })?;
        }
        Ok((
            Self {
                state: RwLock::new(state),
                log: Mutex::new(log),
                export_dir: config.export_dir,
                clock: Box::new(unix_millis),
            },
            unscored,
        ))
    }

    /// Replaces the timestamp source.
    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn checks(&self) -> Vec<String> {
        self.state.read().unwrap().checks().to_vec()
    }

    pub fn statuses(&self) -> BTreeMap<String, Status> {
        self.state.read().unwrap().statuses()
    }

    pub fn list(&self, filter: TaskFilter, cursor: Option<&str>, limit: Option<usize>) -> Result<Page, AuditError> {
        let cursor = cursor.map(Cursor::decode).transpose()?;
        let limit = limit.unwrap_or(DEFAULT_PAGE_SIZE);
        if limit == 0 || limit > MAX_PAGE_SIZE {
            return Err(AuditError::InvalidRequest(format!(
                "limit must be in 1..={MAX_PAGE_SIZE}"
            )));
        }
        Ok(self.state.read().unwrap().page(filter, cursor.as_ref(), limit))
    }

    pub fn task(&self, id: &str) -> Result<TaskView, AuditError> {
        let state = self.state.read().unwrap();
        let task = state
            .task(id)
            .ok_or_else(|| AuditError::UnknownRecord(id.to_owned()))?;
        Ok(view(task, state.checks()))
    }

    pub fn post_verdict(&self, record_id: &str, req: VerdictRequest) -> Result<VerdictOutcome, AuditError> {
        let mut log = self.log.lock().unwrap();
        let seq = {
            let state = self.state.read().unwrap();
            state.validate(record_id, &req)?;
            if let Some(prev) = state.find_duplicate(record_id, &req) {
                return Ok(VerdictOutcome {
                    event: prev.clone(),
                    status: state.task(record_id).expect("validated").status,
                    duplicate: true,
                });
            }
            state.last_seq() + 1
        };
        let event = VerdictEvent {
            seq,
            record_id: record_id.to_owned(),
            check: req.check,
            verdict: req.verdict,
            auditor: req.auditor,
            idempotency_key: req.idempotency_key,
            timestamp_ms: (self.clock)(),
        };
        log.append(&event)?;
        let status = self.state.write().unwrap().apply(event.clone())?;
        Ok(VerdictOutcome {
            event,
            status,
            duplicate: false,
        })
    }

    /// Writes the approved records, in `(bucket, id)` order, to
    /// `export_dir/filename` atomically.
    pub fn export_approved(&self, filename: &str) -> Result<ExportSummary, AuditError> {
        if !valid_filename(filename) {
            return Err(AuditError::BadFilename(filename.to_owned()));
        }
        let (records, counts) = {
            let state = self.state.read().unwrap();
            let mut counts: BTreeMap<Difficulty, usize> = Difficulty::ALL.iter().map(|&d| (d, 0)).collect();
            let records: Vec<LayoutRecord> = state
                .ordered()
                .filter(|t| t.status == Status::Approved)
                .inspect(|t| *counts.get_mut(&t.bucket).unwrap() += 1)
                .map(|t| t.record.clone())
                .collect();
            (records, counts)
        };
        std::fs::create_dir_all(&self.export_dir)?;
        let dest = self.export_dir.join(filename);
        write_atomically(&dest, &records)?;
        Ok(ExportSummary {
            path: dest,
            total: records.len(),
            counts,
        })
    }
}

fn write_atomically(dest: &Path, records: &[LayoutRecord]) -> Result<(), AuditError> {
    let dir = dest.parent().unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write_dataset(&mut w, records)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(dest).map_err(|e| AuditError::Io(e.error))?;
    Ok(())
}

fn view(task: &AuditTask, checks: &[String]) -> TaskView {
    TaskView {
        id: task.record.id.clone(),
        record: serde_json::from_str(&record_to_line(&task.record)).expect("record line is JSON"),
        score: task.score,
        bucket: task.bucket,
        image: task.record.image.clone(),
        status: task.status,
        checks: checks
            .iter()
            .map(|c| (c.clone(), task.checks.get(c).cloned()))
            .collect(),
    }
}
