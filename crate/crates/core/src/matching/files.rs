//! Detection and judgment files produced by the external detector and judge.
//!
//! Both are record-per-line JSON:
//!
//! ```text
//! {"record_id": "r1", "seed": "20251202", "categories": {"cat": [[0.1, 0.2, 0.5, 0.9]], "dog": []}}
//! {"record_id": "r1", "seed": "20251202", "entities": {"cat": "Yes", "dog": "No"},
//!  "relationships": [{"subject": "cat", "object": "dog", "verdict": "Yes"}]}
//! ```
//!
//! `seed` may be a string or an integer.

use crate::annotations::{is_provenance_line, LayoutRecord};
use crate::geometry::BBox;
use serde::{Deserialize, Deserializer, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{self, BufRead};

fn seed_label<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "seed must be a string or integer, got {other}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DetectionSet {
    pub record_id: String,
    pub seed: String,
    pub categories: BTreeMap<String, Vec<BBox>>,
}

impl DetectionSet {
    pub fn empty(record_id: &str, seed: &str) -> Self {
        Self {
            record_id: record_id.to_owned(),
            seed: seed.to_owned(),
            categories: BTreeMap::new(),
        }
    }

    pub fn boxes(&self, category: &str) -> &[BBox] {
        self.categories.get(category).map_or(&[], Vec::as_slice)
    }

    pub fn total_boxes(&self) -> usize {
        self.categories.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    record_id: String,
    #[serde(deserialize_with = "seed_label")]
    seed: String,
    #[serde(default)]
    categories: BTreeMap<String, Vec<[f64; 4]>>,
}

/// A problem found while reading a detection or judgment file.
#[derive(Debug, Clone, PartialEq)]
pub struct FileIssue {
    pub line: usize,
    pub record_id: Option<String>,
    pub message: String,
}

impl fmt::Display for FileIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.record_id {
            Some(id) => write!(f, "line {} (record '{}'): {}", self.line, id, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

/// Reads detections. Invalid boxes are dropped with an issue; box indices
/// refer to the retained boxes of each category.
pub fn read_detections<R: BufRead>(reader: R) -> io::Result<(Vec<DetectionSet>, Vec<FileIssue>)> {
    let mut sets = Vec::new();
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() || is_provenance_line(&line) {
            continue;
        }
        let raw: DetectionLine = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                issues.push(FileIssue {
                    line: line_no,
                    record_id: None,
                    message: format!("malformed detection line: {e}"),
                });
                continue;
            }
        };
        if !seen.insert(raw.record_id.clone()) {
            issues.push(FileIssue {
                line: line_no,
                record_id: Some(raw.record_id),
                message: "duplicate record id".into(),
            });
            continue;
        }
        let mut categories = BTreeMap::new();
        for (cat, boxes) in raw.categories {
            if cat.trim().is_empty() {
                issues.push(FileIssue {
                    line: line_no,
                    record_id: Some(raw.record_id.clone()),
                    message: "empty category name".into(),
                });
                continue;
            }
            let mut kept = Vec::with_capacity(boxes.len());
            for c in boxes {
                match BBox::try_from(c) {
                    Ok(b) => kept.push(b),
                    Err(e) => issues.push(FileIssue {
                        line: line_no,
                        record_id: Some(raw.record_id.clone()),
                        message: format!("dropped box in '{cat}': {e}"),
                    }),
                }
            }
            categories.insert(cat, kept);
        }
        sets.push(DetectionSet {
            record_id: raw.record_id,
            seed: raw.seed,
            categories,
        });
    }
    Ok((sets, issues))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Verdict {
    Yes,
    No,
}

impl Verdict {
    pub fn is_yes(self) -> bool {
        self == Verdict::Yes
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Ok(Verdict::Yes),
            "no" => Ok(Verdict::No),
            _ => Err(serde::de::Error::custom(format!(
                "verdict must be Yes or No, got '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipVerdict {
    pub subject: String,
    pub object: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentFile {
    pub record_id: String,
    #[serde(deserialize_with = "seed_label")]
    pub seed: String,
    #[serde(default)]
    pub entities: BTreeMap<String, Verdict>,
    #[serde(default)]
    pub relationships: Vec<RelationshipVerdict>,
}

pub fn read_judgments<R: BufRead>(reader: R) -> io::Result<(Vec<JudgmentFile>, Vec<FileIssue>)> {
    let mut out = Vec::new();
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || is_provenance_line(&line) {
            continue;
        }
        match serde_json::from_str::<JudgmentFile>(&line) {
            Ok(j) if !seen.insert(j.record_id.clone()) => issues.push(FileIssue {
                line: idx + 1,
                record_id: Some(j.record_id),
                message: "duplicate record id".into(),
            }),
            Ok(j) => out.push(j),
            Err(e) => issues.push(FileIssue {
                line: idx + 1,
                record_id: None,
                message: format!("malformed judgment line: {e}"),
            }),
        }
    }
    Ok((out, issues))
}

/// Checks that every verdict refers to something the record annotates.
/// Relationship verdicts may name the pair in either order.
pub fn validate_judgment(record: &LayoutRecord, judgment: &JudgmentFile) -> Vec<String> {
    let mut problems = Vec::new();
    if record.id != judgment.record_id {
        problems.push(format!(
            "judgment for '{}' checked against record '{}'",
            judgment.record_id, record.id
        ));
        return problems;
    }
    for name in judgment.entities.keys() {
        if record.instance(name).is_none() {
            problems.push(format!("verdict for unknown instance '{name}'"));
        }
    }
    for rv in &judgment.relationships {
        let known = record.relationships.iter().any(|r| {
            (r.subject == rv.subject && r.object == rv.object)
                || (r.subject == rv.object && r.object == rv.subject)
        });
        if !known {
            problems.push(format!(
                "verdict for unknown relationship '{}' -> '{}'",
                rv.subject, rv.object
            ));
        }
    }
    problems
}
