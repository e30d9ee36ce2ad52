//! Spatial and judge-based metrics for generated images.
//!
//! Ground-truth boxes are matched one-to-one to detected boxes by maximizing
//! total IoU. mIoU averages the matched IoU over all ground-truth instances
//! (unmatched instances count as zero). O-mIoU compares, for each annotated
//! pair, the ground-truth intersection region with the intersection of the
//! two matched predictions.

mod files;
pub mod hungarian;

pub use files::{
    read_detections, read_judgments, validate_judgment, DetectionSet, FileIssue, JudgmentFile,
    RelationshipVerdict, Verdict,
};

use crate::annotations::{valid_overlap_pairs, LayoutRecord, PairThresholds};
use crate::geometry::BBox;
use hungarian::{linear_sum_assignment, CostMatrix};
use serde::Serialize;
use std::collections::HashSet;
use thiserror::Error;

/// Slack when deciding whether a constrained assignment is still optimal.
const OPTIMALITY_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("detections for '{detections}' evaluated against record '{record}'")]
    RecordMismatch { record: String, detections: String },
    #[error("record '{record}' has no instance '{instance}'")]
    UnknownInstance { record: String, instance: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub gt: String,
    pub pred: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Matching {
    /// Matched pairs in ground-truth order.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_gt: Vec<String>,
}

impl Matching {
    pub fn total_iou(&self) -> f64 {
        self.pairs.iter().map(|p| p.iou).sum()
    }
}

fn assignment_value(ious: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let cost = CostMatrix::from_fn(rows.len(), cols.len(), |r, c| 1.0 - ious[rows[r]][cols[c]]);
    linear_sum_assignment(&cost)
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| ious[rows[r]][cols[c]]))
        .sum()
}

/// Matches ground-truth boxes to predictions maximizing total IoU.
///
/// Among optimal assignments, the one that gives each ground-truth box (in
/// order) the lowest-indexed prediction is chosen. A ground-truth box whose
/// only option has zero IoU is reported unmatched.
pub fn hungarian_match(gt: &[(&str, BBox)], pred: &[BBox]) -> Matching {
    gated_match(gt, pred, None)
}

fn gated_match(gt: &[(&str, BBox)], pred: &[BBox], min_iou: Option<f64>) -> Matching {
    let ious: Vec<Vec<f64>> = gt
        .iter()
        .map(|(_, g)| {
            pred.iter()
                .map(|p| {
                    let v = g.iou(p);
                    match min_iou {
                        Some(gate) if v < gate => 0.0,
                        _ => v,
                    }
                })
                .collect()
        })
        .collect();

    let all_cols: Vec<usize> = (0..pred.len()).collect();
    let all_rows: Vec<usize> = (0..gt.len()).collect();
    let optimum = assignment_value(&ious, &all_rows, &all_cols);

    // Fix rows one at a time to the first column that keeps the optimum
    // reachable.
    let mut free_cols = all_cols;
    let mut fixed_value = 0.0;
    let mut matching = Matching::default();
    for r in 0..gt.len() {
        let rest: Vec<usize> = ((r + 1)..gt.len()).collect();
        let mut chosen = None;
        for (k, &c) in free_cols.iter().enumerate() {
            let v = ious[r][c];
            if v <= 0.0 {
                continue;
            }
            let mut remaining = free_cols.clone();
            remaining.remove(k);
            let reachable = fixed_value + v + assignment_value(&ious, &rest, &remaining);
            if reachable >= optimum - OPTIMALITY_SLACK {
                chosen = Some((k, c, v));
                break;
            }
        }
        match chosen {
            Some((k, c, v)) => {
                free_cols.remove(k);
                fixed_value += v;
                matching.pairs.push(MatchedPair {
                    gt: gt[r].0.to_owned(),
                    pred: c,
                    iou: v,
                });
            }
            None => matching.unmatched_gt.push(gt[r].0.to_owned()),
        }
    }
    matching
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum MatchScope {
    /// Match each instance only against detections of its category.
    #[default]
    PerCategory,
    /// Ignore categories and match against every detected box.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchOptions {
    pub scope: MatchScope,
    /// Optional minimum IoU for a match to count. Off by default.
    pub min_iou: Option<f64>,
}

/// Identifies one detected box: its category list and position in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PredRef {
    pub category: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceMatch {
    pub name: String,
    pub pred: Option<(PredRef, BBox)>,
    pub iou: f64,
}

/// Per-instance matching for a whole record, in record instance order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordMatching {
    pub instances: Vec<InstanceMatch>,
}

impl RecordMatching {
    pub fn get(&self, name: &str) -> Option<&InstanceMatch> {
        self.instances.iter().find(|m| m.name == name)
    }

    /// Mean matched IoU over all ground-truth instances.
    pub fn miou(&self) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        self.instances.iter().map(|m| m.iou).sum::<f64>() / self.instances.len() as f64
    }
}

fn check_ids(record: &LayoutRecord, det: &DetectionSet) -> Result<(), MetricError> {
    if record.id != det.record_id {
        return Err(MetricError::RecordMismatch {
            record: record.id.clone(),
            detections: det.record_id.clone(),
        });
    }
    Ok(())
}

pub fn match_record(
    record: &LayoutRecord,
    det: &DetectionSet,
    options: MatchOptions,
) -> Result<RecordMatching, MetricError> {
    check_ids(record, det)?;
    let mut slots: Vec<InstanceMatch> = record
        .instances
        .iter()
        .map(|i| InstanceMatch {
            name: i.name.clone(),
            pred: None,
            iou: 0.0,
        })
        .collect();

    let mut assign = |gt_idx: &[usize], preds: &[(PredRef, BBox)]| {
        let gt: Vec<(&str, BBox)> = gt_idx
            .iter()
            .map(|&k| (record.instances[k].name.as_str(), record.instances[k].bbox))
            .collect();
        let boxes: Vec<BBox> = preds.iter().map(|(_, b)| *b).collect();
        let m = gated_match(&gt, &boxes, options.min_iou);
        for pair in m.pairs {
            let slot = slots.iter_mut().find(|s| s.name == pair.gt).expect("gt from record");
            slot.pred = Some(preds[pair.pred].clone());
            slot.iou = pair.iou;
        }
    };

    match options.scope {
        MatchScope::PerCategory => {
            let mut seen = HashSet::new();
            for inst in &record.instances {
                let cat = inst.category();
                if !seen.insert(cat) {
                    continue;
                }
                let group: Vec<usize> = record
                    .instances
                    .iter()
                    .enumerate()
                    .filter(|(_, i)| i.category() == cat)
                    .map(|(k, _)| k)
                    .collect();
                let preds: Vec<(PredRef, BBox)> = det
                    .boxes(cat)
                    .iter()
                    .enumerate()
                    .map(|(index, b)| {
                        (
                            PredRef {
                                category: cat.to_owned(),
                                index,
                            },
                            *b,
                        )
                    })
                    .collect();
                assign(&group, &preds);
            }
        }
        MatchScope::Global => {
            let all: Vec<usize> = (0..record.instances.len()).collect();
            let preds: Vec<(PredRef, BBox)> = det
                .categories
                .iter()
                .flat_map(|(cat, boxes)| {
                    boxes.iter().enumerate().map(move |(index, b)| {
                        (
                            PredRef {
                                category: cat.clone(),
                                index,
                            },
                            *b,
                        )
                    })
                })
                .collect();
            assign(&all, &preds);
        }
    }
    Ok(RecordMatching { instances: slots })
}

/// Mean matched IoU of a record; unmatched instances contribute zero.
pub fn miou(record: &LayoutRecord, det: &DetectionSet, options: MatchOptions) -> Result<f64, MetricError> {
    Ok(match_record(record, det, options)?.miou())
}

/// Which instance pairs O-mIoU is evaluated over.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PairSource {
    /// Pairs named by the record's relationship annotations.
    #[default]
    Relationships,
    /// Every pair passing the overlap thresholds.
    ValidOverlaps(PairThresholds),
}

/// Unordered, de-duplicated instance pairs for O-mIoU.
pub fn pairs_for(record: &LayoutRecord, source: PairSource) -> Vec<(String, String)> {
    match source {
        PairSource::Relationships => {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for r in &record.relationships {
                let key = if r.subject <= r.object {
                    (r.subject.clone(), r.object.clone())
                } else {
                    (r.object.clone(), r.subject.clone())
                };
                if seen.insert(key) {
                    out.push((r.subject.clone(), r.object.clone()));
                }
            }
            out
        }
        PairSource::ValidOverlaps(t) => valid_overlap_pairs(record, t)
            .into_iter()
            .map(|p| (p.i, p.j))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairOverlap {
    pub i: String,
    pub j: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OMiou {
    /// Mean over evaluated pairs; `None` when no pair could be evaluated.
    pub value: Option<f64>,
    pub pairs: Vec<PairOverlap>,
    /// Pairs skipped because their ground-truth boxes do not intersect.
    pub excluded: Vec<(String, String)>,
}

/// O-mIoU from a precomputed matching.
pub fn o_miou_from_matching(
    record: &LayoutRecord,
    matching: &RecordMatching,
    pairs: &[(String, String)],
) -> Result<OMiou, MetricError> {
    let unknown = |name: &str| MetricError::UnknownInstance {
        record: record.id.clone(),
        instance: name.to_owned(),
    };
    let mut evaluated = Vec::new();
    let mut excluded = Vec::new();
    for (i, j) in pairs {
        let bi = record.instance(i).ok_or_else(|| unknown(i))?.bbox;
        let bj = record.instance(j).ok_or_else(|| unknown(j))?.bbox;
        let Some(gt_region) = bi.intersect(&bj) else {
            excluded.push((i.clone(), j.clone()));
            continue;
        };
        let pi = matching.get(i).and_then(|m| m.pred.as_ref());
        let pj = matching.get(j).and_then(|m| m.pred.as_ref());
        let value = match (pi, pj) {
            (Some((_, a)), Some((_, b))) => a.intersect(b).map_or(0.0, |r| gt_region.iou(&r)),
            _ => 0.0,
        };
        evaluated.push(PairOverlap {
            i: i.clone(),
            j: j.clone(),
            value,
        });
    }
    let value = if evaluated.is_empty() {
        None
    } else {
        Some(evaluated.iter().map(|p| p.value).sum::<f64>() / evaluated.len() as f64)
    };
    Ok(OMiou {
        value,
        pairs: evaluated,
        excluded,
    })
}

pub fn o_miou(
    record: &LayoutRecord,
    det: &DetectionSet,
    pairs: &[(String, String)],
    options: MatchOptions,
) -> Result<OMiou, MetricError> {
    let matching = match_record(record, det, options)?;
    o_miou_from_matching(record, &matching, pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictKind {
    Entity,
    Relationship,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordRate {
    pub record_id: String,
    pub yes: usize,
    pub total: usize,
}

impl RecordRate {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.yes as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessRate {
    pub yes: usize,
    pub total: usize,
    pub per_record: Vec<RecordRate>,
}

impl SuccessRate {
    /// Yes-count over all verdicts of the kind, pooled across records.
    pub fn pooled(&self) -> Option<f64> {
        (self.total > 0).then(|| self.yes as f64 / self.total as f64)
    }
}

pub fn record_rate(judgment: &JudgmentFile, kind: VerdictKind) -> RecordRate {
    let verdicts: Vec<Verdict> = match kind {
        VerdictKind::Entity => judgment.entities.values().copied().collect(),
        VerdictKind::Relationship => judgment.relationships.iter().map(|r| r.verdict).collect(),
    };
    RecordRate {
        record_id: judgment.record_id.clone(),
        yes: verdicts.iter().filter(|v| v.is_yes()).count(),
        total: verdicts.len(),
    }
}

/// Entity or relationship success rate over already-validated judgments.
pub fn success_rate(judgments: &[JudgmentFile], kind: VerdictKind) -> SuccessRate {
    let per_record: Vec<RecordRate> = judgments.iter().map(|j| record_rate(j, kind)).collect();
    SuccessRate {
        yes: per_record.iter().map(|r| r.yes).sum(),
        total: per_record.iter().map(|r| r.total).sum(),
        per_record,
    }
}
