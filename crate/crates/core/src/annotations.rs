//! Layout records: data model, record-per-line ingestion and validation, and
//! the overlap-pair filters used to select benchmark layouts.
//!
//! # File format
//!
//! One JSON object per line. Blank lines are ignored, as is a leading
//! `{"provenance": ...}` header line written by the toolkit itself.
//!
//! ```text
//! {"id": "r1", "caption": "a cat beside a dog", "width": 1024, "height": 768,
//!  "split": "simple", "image": "images/r1.png",
//!  "instances": [{"name": "cat", "caption": "a grey cat", "bbox": [0.1, 0.2, 0.5, 0.9]},
//!                {"name": "dog", "category": "dog", "caption": "a brown dog", "bbox": [0.4, 0.3, 0.9, 0.9]}],
//!  "relationships": [{"subject": "cat", "object": "dog", "phrase": "the cat leans on the dog"}]}
//! ```
//!
//! `split`, `image`, `relationships` and the per-instance `category` are
//! optional. `category` defaults to the instance name and is the key used to
//! look up detections.

use crate::geometry::{BBox, ImageDims};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

/// Smallest and largest number of instances an evaluation record may carry.
pub const MIN_INSTANCES: usize = 2;
pub const MAX_INSTANCES: usize = 10;

/// Difficulty label, ordered `Simple < Regular < Complex`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Regular,
    Complex,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Simple, Difficulty::Regular, Difficulty::Complex];

    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Regular => "regular",
            Difficulty::Complex => "complex",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(Difficulty::Simple),
            "regular" => Ok(Difficulty::Regular),
            "complex" => Ok(Difficulty::Complex),
            other => Err(format!("unknown difficulty '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub caption: String,
    pub bbox: BBox,
}

impl InstanceAnnotation {
    /// Detection lookup key: the explicit category, else the instance name.
    pub fn category(&self) -> &str {
        self.category.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationshipAnnotation {
    pub subject: String,
    pub object: String,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutRecord {
    pub id: String,
    pub global_caption: String,
    pub dims: ImageDims,
    pub instances: Vec<InstanceAnnotation>,
    pub relationships: Vec<RelationshipAnnotation>,
    pub split: Option<Difficulty>,
    pub image: Option<String>,
}

impl LayoutRecord {
    pub fn instance(&self, name: &str) -> Option<&InstanceAnnotation> {
        self.instances.iter().find(|i| i.name == name)
    }
}

/// Wire form of a record line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    caption: String,
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    instances: Vec<InstanceLine>,
    #[serde(default)]
    relationships: Vec<RelationshipAnnotation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceLine {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
    caption: String,
    bbox: [f64; 4],
}

/// Why a record was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    Malformed(String),
    InstanceCountOutOfRange(usize),
    EmptyField(&'static str),
    DuplicateInstance(String),
    DuplicateRecordId,
    InvalidBox { instance: String, detail: String },
    InvalidDims(String),
    UnknownEndpoint(String),
    SelfRelationship(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed(e) => write!(f, "malformed record: {e}"),
            RejectReason::InstanceCountOutOfRange(n) => write!(
                f,
                "instance count out of range: {n} (expected {MIN_INSTANCES}..={MAX_INSTANCES})"
            ),
            RejectReason::EmptyField(field) => write!(f, "empty field: {field}"),
            RejectReason::DuplicateInstance(n) => write!(f, "duplicate instance name '{n}'"),
            RejectReason::DuplicateRecordId => write!(f, "duplicate record id"),
            RejectReason::InvalidBox { instance, detail } => {
                write!(f, "invalid bbox for '{instance}': {detail}")
            }
            RejectReason::InvalidDims(e) => write!(f, "invalid image dimensions: {e}"),
            RejectReason::UnknownEndpoint(n) => write!(f, "unknown endpoint '{n}'"),
            RejectReason::SelfRelationship(n) => write!(f, "relationship from '{n}' to itself"),
        }
    }
}

/// A rejected record, located by line number (1-based) and id when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: usize,
    pub record_id: Option<String>,
    pub reason: RejectReason,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.record_id {
            Some(id) => write!(f, "line {} (record '{}'): {}", self.line, id, self.reason),
            None => write!(f, "line {}: {}", self.line, self.reason),
        }
    }
}

#[derive(Debug, Default)]
pub struct ParsedDataset {
    pub records: Vec<LayoutRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Relationship phrases that mean "no relationship" and are dropped on load.
fn is_none_phrase(phrase: &str) -> bool {
    let p = phrase.trim().trim_end_matches('.');
    p.eq_ignore_ascii_case("none")
}

pub(crate) fn is_provenance_line(line: &str) -> bool {
    line.trim_start().starts_with("{\"provenance\"")
}

/// Reads a record-per-line annotation stream.
///
/// Only an unreadable stream is an error; every bad record becomes a
/// diagnostic and is excluded from the returned records.
pub fn parse_dataset<R: BufRead>(reader: R) -> io::Result<ParsedDataset> {
    let mut out = ParsedDataset::default();
    let mut seen_ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() || is_provenance_line(&line) {
            continue;
        }
        let raw: RecordLine = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                out.diagnostics.push(Diagnostic {
                    line: line_no,
                    record_id: peek_id(&line),
                    reason: RejectReason::Malformed(e.to_string()),
                });
                continue;
            }
        };
        let id = raw.id.clone();
        match validate(raw) {
            Ok(record) => {
                if !seen_ids.insert(record.id.clone()) {
                    out.diagnostics.push(Diagnostic {
                        line: line_no,
                        record_id: Some(id),
                        reason: RejectReason::DuplicateRecordId,
                    });
                } else {
                    out.records.push(record);
                }
            }
            Err(reason) => out.diagnostics.push(Diagnostic {
                line: line_no,
                record_id: Some(id),
                reason,
            }),
        }
    }
    Ok(out)
}

fn peek_id(line: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    v.get("id")?.as_str().map(str::to_owned)
}

fn validate(raw: RecordLine) -> Result<LayoutRecord, RejectReason> {
    if raw.id.trim().is_empty() {
        return Err(RejectReason::EmptyField("id"));
    }
    let dims =
        ImageDims::new(raw.width, raw.height).map_err(|e| RejectReason::InvalidDims(e.to_string()))?;
    let n = raw.instances.len();
    if !(MIN_INSTANCES..=MAX_INSTANCES).contains(&n) {
        return Err(RejectReason::InstanceCountOutOfRange(n));
    }

    let mut names = HashSet::new();
    let mut instances = Vec::with_capacity(n);
    for inst in raw.instances {
        if inst.name.trim().is_empty() {
            return Err(RejectReason::EmptyField("instance name"));
        }
        if inst.caption.trim().is_empty() {
            return Err(RejectReason::EmptyField("instance caption"));
        }
        if inst.category.as_deref().is_some_and(|c| c.trim().is_empty()) {
            return Err(RejectReason::EmptyField("instance category"));
        }
        if !names.insert(inst.name.clone()) {
            return Err(RejectReason::DuplicateInstance(inst.name));
        }
        let bbox = BBox::try_from(inst.bbox).map_err(|e| RejectReason::InvalidBox {
            instance: inst.name.clone(),
            detail: e.to_string(),
        })?;
        instances.push(InstanceAnnotation {
            name: inst.name,
            category: inst.category,
            caption: inst.caption,
            bbox,
        });
    }

    let mut relationships = Vec::with_capacity(raw.relationships.len());
    for rel in raw.relationships {
        if is_none_phrase(&rel.phrase) {
            continue;
        }
        for endpoint in [&rel.subject, &rel.object] {
            if !names.contains(endpoint) {
                return Err(RejectReason::UnknownEndpoint(endpoint.clone()));
            }
        }
        if rel.subject == rel.object {
            return Err(RejectReason::SelfRelationship(rel.subject));
        }
        if rel.phrase.trim().is_empty() {
            return Err(RejectReason::EmptyField("relationship phrase"));
        }
        relationships.push(rel);
    }

    Ok(LayoutRecord {
        id: raw.id,
        global_caption: raw.caption,
        dims,
        instances,
        relationships,
        split: raw.split,
        image: raw.image,
    })
}

fn to_line(record: &LayoutRecord) -> RecordLine {
    RecordLine {
        id: record.id.clone(),
        caption: record.global_caption.clone(),
        width: record.dims.width_px,
        height: record.dims.height_px,
        split: record.split,
        image: record.image.clone(),
        instances: record
            .instances
            .iter()
            .map(|i| InstanceLine {
                name: i.name.clone(),
                category: i.category.clone(),
                caption: i.caption.clone(),
                bbox: i.bbox.coords(),
            })
            .collect(),
        relationships: record.relationships.clone(),
    }
}

/// Serializes one record as a single JSON line (no trailing newline).
pub fn record_to_line(record: &LayoutRecord) -> String {
    serde_json::to_string(&to_line(record)).expect("record serialization is infallible")
}

pub fn write_dataset<'a, W, I>(mut writer: W, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a LayoutRecord>,
{
    for r in records {
        writeln!(writer, "{}", record_to_line(r))?;
    }
    Ok(())
}

/// Thresholds for a box pair to count as a meaningful overlap. Both
/// comparisons are strict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairThresholds {
    pub iou_min: f64,
    pub area_min: f64,
}

impl Default for PairThresholds {
    fn default() -> Self {
        Self {
            iou_min: 0.05,
            area_min: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidPair {
    pub i: String,
    pub j: String,
    pub iou: f64,
    pub inter_area: f64,
}

/// Unordered instance pairs passing both thresholds, sorted by descending IoU,
/// ties by name. Each pair is reported with its names in lexicographic order.
pub fn valid_overlap_pairs(record: &LayoutRecord, thresholds: PairThresholds) -> Vec<ValidPair> {
    let mut pairs = Vec::new();
    let inst = &record.instances;
    for a in 0..inst.len() {
        for b in (a + 1)..inst.len() {
            let (p, q) = (&inst[a], &inst[b]);
            let inter_area = p.bbox.intersection_area(&q.bbox);
            if inter_area <= thresholds.area_min {
                continue;
            }
            let iou = p.bbox.iou(&q.bbox);
            if iou <= thresholds.iou_min {
                continue;
            }
            let (i, j) = if p.name <= q.name {
                (p.name.clone(), q.name.clone())
            } else {
                (q.name.clone(), p.name.clone())
            };
            pairs.push(ValidPair {
                i,
                j,
                iou,
                inter_area,
            });
        }
    }
    pairs.sort_by(|x, y| {
        y.iou
            .total_cmp(&x.iou)
            .then_with(|| x.i.cmp(&y.i))
            .then_with(|| x.j.cmp(&y.j))
    });
    pairs
}

/// Inclusive bounds on the number of valid pairs for a benchmark layout.
pub const MIN_VALID_PAIRS: usize = 1;
pub const MAX_VALID_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Ineligible {
    pub record: LayoutRecord,
    pub valid_pairs: usize,
}

/// Splits records into those with one to ten valid overlap pairs and the rest.
pub fn filter_benchmark_eligible(
    records: Vec<LayoutRecord>,
    thresholds: PairThresholds,
) -> (Vec<LayoutRecord>, Vec<Ineligible>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for record in records {
        let count = valid_overlap_pairs(&record, thresholds).len();
        if (MIN_VALID_PAIRS..=MAX_VALID_PAIRS).contains(&count) {
            kept.push(record);
        } else {
            rejected.push(Ineligible {
                record,
                valid_pairs: count,
            });
        }
    }
    (kept, rejected)
}
