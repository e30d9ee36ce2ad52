//! Layout difficulty: the sum over overlapping box pairs of pairwise IoU
//! weighted by the cosine similarity of the two instance captions, plus
//! bucketing into simple/regular/complex and score histograms.

use crate::annotations::{is_provenance_line, Difficulty, LayoutRecord};
use crate::embedding::{cosine, EmbeddingError, EmbeddingLookup};
use crate::par::Execution;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{self, BufRead};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("record '{record}': no embedding for instance '{instance}': {source}")]
    MissingEmbedding {
        record: String,
        instance: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("record '{record}': {source}")]
    Embedding {
        record: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("thresholds must satisfy 0 < simple/regular ({0}) < regular/complex ({1})")]
    InvalidThresholds(f64, f64),
    #[error("bin width must be positive and finite, got {0}")]
    InvalidBinWidth(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Floor negative caption cosines at zero. Off by default.
    pub clamp_negative_cosine: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub i: String,
    pub j: String,
    pub iou: f64,
    pub cos: f64,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLayout {
    pub id: String,
    pub score: f64,
    pub pair_terms: Vec<PairTerm>,
}

/// Scores one layout. Every unordered pair with positive IoU contributes
/// `iou * cos` once; layouts without overlap score zero.
pub fn overlay_score<L: EmbeddingLookup + ?Sized>(
    record: &LayoutRecord,
    embeddings: &L,
    options: ScoreOptions,
) -> Result<ScoredLayout, ScoreError> {
    let vectors = record
        .instances
        .iter()
        .map(|inst| {
            embeddings
                .lookup(&inst.caption)
                .map_err(|source| ScoreError::MissingEmbedding {
                    record: record.id.clone(),
                    instance: inst.name.clone(),
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let inst = &record.instances;
    let mut pair_terms = Vec::new();
    let mut score = 0.0;
    for a in 0..inst.len() {
        for b in (a + 1)..inst.len() {
            let iou = inst[a].bbox.iou(&inst[b].bbox);
            if iou <= 0.0 {
                continue;
            }
            let mut cos = cosine(&vectors[a], &vectors[b]).map_err(|source| ScoreError::Embedding {
                record: record.id.clone(),
                source,
            })?;
            if options.clamp_negative_cosine {
                cos = cos.max(0.0);
            }
            let product = iou * cos;
            score += product;
            pair_terms.push(PairTerm {
                i: inst[a].name.clone(),
                j: inst[b].name.clone(),
                iou,
                cos,
                product,
            });
        }
    }
    Ok(ScoredLayout {
        id: record.id.clone(),
        score,
        pair_terms,
    })
}

/// Scores many layouts, one result per input in input order.
pub fn score_batch<L: EmbeddingLookup + ?Sized>(
    records: &[LayoutRecord],
    embeddings: &L,
    options: ScoreOptions,
    exec: Execution,
) -> Vec<Result<ScoredLayout, ScoreError>> {
    exec.map(records, |r| overlay_score(r, embeddings, options))
}

/// Cut points between difficulty buckets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyThresholds {
    simple_regular: f64,
    regular_complex: f64,
}

impl DifficultyThresholds {
    pub fn new(simple_regular: f64, regular_complex: f64) -> Result<Self, ScoreError> {
        let ok = simple_regular.is_finite()
            && regular_complex.is_finite()
            && 0.0 < simple_regular
            && simple_regular < regular_complex;
        if !ok {
            return Err(ScoreError::InvalidThresholds(simple_regular, regular_complex));
        }
        Ok(Self {
            simple_regular,
            regular_complex,
        })
    }

    pub fn simple_regular(&self) -> f64 {
        self.simple_regular
    }

    pub fn regular_complex(&self) -> f64 {
        self.regular_complex
    }
}

impl Default for DifficultyThresholds {
    fn default() -> Self {
        Self {
            simple_regular: 0.1,
            regular_complex: 0.5,
        }
    }
}

/// Buckets are closed above: a score equal to a cut point falls in the lower
/// bucket.
pub fn bucket(score: f64, thresholds: DifficultyThresholds) -> Difficulty {
    if score <= thresholds.simple_regular {
        Difficulty::Simple
    } else if score <= thresholds.regular_complex {
        Difficulty::Regular
    } else {
        Difficulty::Complex
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreDistribution {
    pub bin_width: f64,
    /// `(bin lower edge, count)` in ascending edge order, empty bins omitted.
    pub bins: Vec<(f64, usize)>,
    pub summary: Option<ScoreSummary>,
}

/// Histogram with bins `[k * width, (k + 1) * width)`.
pub fn score_distribution(scores: &[f64], bin_width: f64) -> Result<ScoreDistribution, ScoreError> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(ScoreError::InvalidBinWidth(bin_width));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &s in scores {
        *counts.entry((s / bin_width).floor() as i64).or_default() += 1;
    }
    let bins = counts
        .into_iter()
        .map(|(k, c)| (k as f64 * bin_width, c))
        .collect();

    let summary = if scores.is_empty() {
        None
    } else {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Some(ScoreSummary {
            count: n,
            mean: scores.iter().sum::<f64>() / n as f64,
            median,
            min: sorted[0],
            max: sorted[n - 1],
        })
    };
    Ok(ScoreDistribution {
        bin_width,
        bins,
        summary,
    })
}

/// One line of a scored output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecordLine {
    pub id: String,
    pub score: f64,
    pub bucket: Difficulty,
    pub pair_terms: Vec<PairTerm>,
}

impl ScoredRecordLine {
    pub fn new(scored: ScoredLayout, thresholds: DifficultyThresholds) -> Self {
        Self {
            bucket: bucket(scored.score, thresholds),
            id: scored.id,
            score: scored.score,
            pair_terms: scored.pair_terms,
        }
    }
}

/// Reads a scored file, skipping blank and provenance lines.
pub fn read_scored<R: BufRead>(reader: R) -> io::Result<Vec<ScoredRecordLine>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || is_provenance_line(&line) {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", idx + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}
