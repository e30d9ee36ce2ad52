use crate::AuditError;
use base64::Engine as _;
use l2i_core::matching::Verdict;
use l2i_core::overlayscore::ScoredRecordLine;
use l2i_core::{Difficulty, LayoutRecord};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Bound;

pub const DEFAULT_CHECKS: [&str; 3] = ["bbox_accuracy", "caption_alignment", "relationship_validity"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Approved,
    Rejected,
}

impl std::str::FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(Status::Pending),
            "approved" => Ok(Status::Approved),
            "rejected" => Ok(Status::Rejected),
            other => Err(format!("unknown status '{other}'")),
        }
    }
}

/// One logged verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEvent {
    pub seq: u64,
    pub record_id: String,
    pub check: String,
    pub verdict: Verdict,
    pub auditor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    pub timestamp_ms: u64,
}

/// Body of a verdict submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub check: String,
    pub verdict: Verdict,
    pub auditor: String,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckState {
    pub verdict: Verdict,
    pub auditor: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditTask {
    pub record: LayoutRecord,
    pub score: f64,
    pub bucket: Difficulty,
    pub checks: BTreeMap<String, CheckState>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSummary {
    pub id: String,
    pub bucket: Difficulty,
    pub score: f64,
    pub status: Status,
    pub caption: String,
    pub image: Option<String>,
}

impl TaskSummary {
    fn of(task: &AuditTask) -> Self {
        Self {
            id: task.record.id.clone(),
            bucket: task.bucket,
            score: task.score,
            status: task.status,
            caption: task.record.global_caption.clone(),
            image: task.record.image.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TaskFilter {
    pub status: Option<Status>,
    pub bucket: Option<Difficulty>,
}

/// Position after the last task of a page, in `(bucket, id)` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub bucket: Difficulty,
    pub id: String,
}

impl Cursor {
    pub fn encode(&self) -> String {
        let json = serde_json::to_vec(self).expect("cursor serializes");
        base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(json)
    }

    pub fn decode(text: &str) -> Result<Self, AuditError> {
        let bytes = base64::engine::general_purpose::URL_SAFE_NO_PAD
            .decode(text)
            .map_err(|e| AuditError::BadCursor(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| AuditError::BadCursor(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Page {
    pub tasks: Vec<TaskSummary>,
    pub next_cursor: Option<String>,
}

type DedupKey = (String, String, String, String);

/// Materialized task state. Pure: all persistence lives in the service.
#[derive(Debug, Clone)]
pub struct AuditState {
    checks: Vec<String>,
    tasks: HashMap<String, AuditTask>,
    order: BTreeSet<(Difficulty, String)>,
    dedup: HashMap<DedupKey, VerdictEvent>,
    last_seq: u64,
}

fn status_of(checks: &[String], latest: &BTreeMap<String, CheckState>) -> Status {
    if latest.values().any(|c| c.verdict == Verdict::No) {
        Status::Rejected
    } else if checks
        .iter()
        .all(|c| latest.get(c).is_some_and(|s| s.verdict == Verdict::Yes))
    {
        Status::Approved
    } else {
        Status::Pending
    }
}

impl AuditState {
    /// Pairs every record with its scored line. Scored lines without a
    /// record are an error; records without a score are skipped and their
    /// ids returned.
    pub fn new(
        records: Vec<LayoutRecord>,
        scored: &[ScoredRecordLine],
        checks: Vec<String>,
    ) -> Result<(Self, Vec<String>), AuditError> {
        if checks.is_empty() {
            return Err(AuditError::Init("no checks configured".into()));
        }
        let mut unique = BTreeSet::new();
        for c in &checks {
            if c.trim().is_empty() || !unique.insert(c.as_str()) {
                return Err(AuditError::Init(format!("invalid or duplicate check name '{c}'")));
            }
        }
        let mut scores: HashMap<&str, &ScoredRecordLine> = HashMap::new();
        for s in scored {
            if scores.insert(&s.id, s).is_some() {
                return Err(AuditError::Init(format!("record '{}' scored twice", s.id)));
            }
        }
        let mut tasks = HashMap::new();
        let mut order = BTreeSet::new();
        let mut unscored = Vec::new();
        for record in records {
            let Some(s) = scores.remove(record.id.as_str()) else {
                unscored.push(record.id.clone());
                continue;
            };
            order.insert((s.bucket, record.id.clone()));
            tasks.insert(
                record.id.clone(),
                AuditTask {
                    record,
                    score: s.score,
                    bucket: s.bucket,
                    checks: BTreeMap::new(),
                    status: Status::Pending,
                },
            );
        }
        if let Some(orphan) = scores.keys().min() {
            return Err(AuditError::Init(format!(
                "scored record '{orphan}' is missing from the annotations"
            )));
        }
        Ok((
            Self {
                checks,
                tasks,
                order,
                dedup: HashMap::new(),
                last_seq: 0,
            },
            unscored,
        ))
    }

    pub fn checks(&self) -> &[String] {
        &self.checks
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, id: &str) -> Option<&AuditTask> {
        self.tasks.get(id)
    }

    pub fn validate(&self, record_id: &str, req: &VerdictRequest) -> Result<(), AuditError> {
        if !self.tasks.contains_key(record_id) {
            return Err(AuditError::UnknownRecord(record_id.to_owned()));
        }
        if !self.checks.contains(&req.check) {
            return Err(AuditError::UnknownCheck(req.check.clone()));
        }
        if req.auditor.trim().is_empty() {
            return Err(AuditError::InvalidRequest("auditor label is empty".into()));
        }
        if req.idempotency_key.as_deref().is_some_and(|k| k.is_empty()) {
            return Err(AuditError::InvalidRequest("idempotency key is empty".into()));
        }
        Ok(())
    }

    /// The event previously stored for the same keyed submission, if any.
    pub fn find_duplicate(&self, record_id: &str, req: &VerdictRequest) -> Option<&VerdictEvent> {
        let key = req.idempotency_key.as_ref()?;
        self.dedup.get(&(
            record_id.to_owned(),
            req.check.clone(),
            req.auditor.clone(),
            key.clone(),
        ))
    }

    /// Applies a logged event and returns the record's new status.
    pub fn apply(&mut self, event: VerdictEvent) -> Result<Status, AuditError> {
        if event.seq <= self.last_seq {
            return Err(AuditError::InvalidRequest(format!(
                "sequence {} does not follow {}",
                event.seq, self.last_seq
            )));
        }
        let req = VerdictRequest {
            check: event.check.clone(),
            verdict: event.verdict,
            auditor: event.auditor.clone(),
            idempotency_key: event.idempotency_key.clone(),
        };
        self.validate(&event.record_id, &req)?;
        if self.find_duplicate(&event.record_id, &req).is_some() {
            return Err(AuditError::InvalidRequest(format!(
                "event {} repeats an idempotency key",
                event.seq
            )));
        }
        self.last_seq = event.seq;
        let task = self.tasks.get_mut(&event.record_id).expect("validated");
        task.checks.insert(
            event.check.clone(),
            CheckState {
                verdict: event.verdict,
                auditor: event.auditor.clone(),
                seq: event.seq,
            },
        );
        task.status = status_of(&self.checks, &task.checks);
        let status = task.status;
        if let Some(key) = &event.idempotency_key {
            self.dedup.insert(
                (
                    event.record_id.clone(),
                    event.check.clone(),
                    event.auditor.clone(),
                    key.clone(),
                ),
                event,
            );
        }
        Ok(status)
    }

    pub fn statuses(&self) -> BTreeMap<String, Status> {
        self.tasks
            .iter()
            .map(|(id, t)| (id.clone(), t.status))
            .collect()
    }

    /// Tasks in `(bucket, id)` order.
    pub fn ordered(&self) -> impl Iterator<Item = &AuditTask> {
        self.order.iter().map(|(_, id)| &self.tasks[id])
    }

    pub fn page(&self, filter: TaskFilter, cursor: Option<&Cursor>, limit: usize) -> Page {
        let start = match cursor {
            Some(c) => Bound::Excluded((c.bucket, c.id.clone())),
            None => Bound::Unbounded,
        };
        let mut matching = self
            .order
            .range((start, Bound::Unbounded))
            .map(|(_, id)| &self.tasks[id])
            .filter(|t| filter.status.is_none_or(|s| t.status == s))
            .filter(|t| filter.bucket.is_none_or(|b| t.bucket == b));
        let tasks: Vec<TaskSummary> = matching.by_ref().take(limit).map(TaskSummary::of).collect();
        let next_cursor = match (tasks.last(), matching.next()) {
            (Some(last), Some(_)) => Some(
                Cursor {
                    bucket: last.bucket,
                    id: last.id.clone(),
                }
                .encode(),
            ),
            _ => None,
        };
        Page { tasks, next_cursor }
    }
}
