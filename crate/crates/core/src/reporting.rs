//! Seed-level aggregation of per-record metrics into split × metric tables,
//! plus text and CSV renderers.
//!
//! # CSV schema
//!
//! ```text
//! # optional provenance/comment lines
//! split,metric,mean,std,n_seeds,cell
//! simple,miou,0.6054,0.0182,3,60.54±1.82
//! simple,clip_local,,,0,-
//! ```
//!
//! `mean` and `std` are raw (unscaled) values written with the shortest
//! representation that parses back to the same `f64`. `cell` is the rendered
//! text and is ignored on parse. An absent cell has empty `mean`/`std`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Miou,
    OMiou,
    SrE,
    SrR,
    ClipGlobal,
    ClipLocal,
}

impl Metric {
    /// Column order of rendered tables.
    pub const ALL: [Metric; 6] = [
        Metric::Miou,
        Metric::OMiou,
        Metric::SrE,
        Metric::SrR,
        Metric::ClipGlobal,
        Metric::ClipLocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Miou => "miou",
            Metric::OMiou => "o_miou",
            Metric::SrE => "sr_e",
            Metric::SrR => "sr_r",
            Metric::ClipGlobal => "clip_global",
            Metric::ClipLocal => "clip_local",
        }
    }

    pub fn header(self) -> &'static str {
        match self {
            Metric::Miou => "mIoU",
            Metric::OMiou => "O-mIoU",
            Metric::SrE => "SR_E",
            Metric::SrR => "SR_R",
            Metric::ClipGlobal => "CLIP_Global",
            Metric::ClipLocal => "CLIP_Local",
        }
    }

    /// Ratio metrics shown ×100. CLIP scores are already on a 0–100 scale.
    pub fn percent_scaled(self) -> bool {
        !matches!(self, Metric::ClipGlobal | Metric::ClipLocal)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ReportError::UnknownMetric(s.to_owned()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no runs to aggregate")]
    Empty,
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
    #[error("seed '{seed}' appears twice for split '{split}'")]
    DuplicateRun { seed: String, split: String },
    #[error("record '{record}' appears twice in {metric} for seed '{seed}', split '{split}'")]
    DuplicateRecord {
        seed: String,
        split: String,
        metric: Metric,
        record: String,
    },
    #[error("split '{split}': seed '{seed}' reports metrics {found:?}, expected {expected:?}")]
    InconsistentMetrics {
        split: String,
        seed: String,
        expected: Vec<Metric>,
        found: Vec<Metric>,
    },
    #[error("non-finite value or negative weight for record '{record}' in {metric}")]
    InvalidValue { record: String, metric: Metric },
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
}

/// One record's value for one metric. `weight` is the record's unit count
/// (instances, pairs, verdicts) used by micro pooling; a zero weight marks a
/// record for which the metric is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordValue {
    pub record_id: String,
    pub value: f64,
    pub weight: f64,
}

impl RecordValue {
    pub fn new(record_id: impl Into<String>, value: f64, weight: f64) -> Self {
        Self {
            record_id: record_id.into(),
            value,
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunResult {
    pub seed: String,
    pub split: String,
    pub metrics: BTreeMap<Metric, Vec<RecordValue>>,
}

impl RunResult {
    pub fn new(seed: impl Into<String>, split: impl Into<String>) -> Self {
        Self {
            seed: seed.into(),
            split: split.into(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, metric: Metric, value: RecordValue) {
        self.metrics.entry(metric).or_default().push(value);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdKind {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1; zero for a single seed.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Unweighted mean of the records with positive weight.
    #[default]
    Macro,
    /// Weight-pooled mean over all records.
    Micro,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Macro => "macro",
            Pooling::Micro => "micro",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AggregateOptions {
    pub std: StdKind,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateCell {
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub split: String,
    /// Absent metrics have no entry.
    pub cells: BTreeMap<Metric, AggregateCell>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregateTable {
    pub rows: Vec<TableRow>,
}

impl AggregateTable {
    pub fn get(&self, split: &str, metric: Metric) -> Option<&AggregateCell> {
        self.rows
            .iter()
            .find(|r| r.split == split)
            .and_then(|r| r.cells.get(&metric))
    }
}

/// Row order: the three difficulty buckets first, then anything else by name.
fn split_rank(split: &str) -> (usize, &str) {
    match split {
        "simple" => (0, ""),
        "regular" => (1, ""),
        "complex" => (2, ""),
        other => (3, other),
    }
}

/// Sum with a fixed order so the result does not depend on input order.
fn ordered_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.into_iter().sum()
}

fn seed_scalar(values: &[RecordValue], pooling: Pooling) -> Option<f64> {
    let mut sorted: Vec<&RecordValue> = values.iter().collect();
    sorted.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    match pooling {
        Pooling::Macro => {
            let vals: Vec<f64> = sorted
                .iter()
                .filter(|v| v.weight > 0.0)
                .map(|v| v.value)
                .collect();
            let n = vals.len();
            (n > 0).then(|| ordered_sum(vals) / n as f64)
        }
        Pooling::Micro => {
            let total = ordered_sum(sorted.iter().map(|v| v.weight).collect());
            (total > 0.0).then(|| {
                ordered_sum(sorted.iter().map(|v| v.value * v.weight).collect()) / total
            })
        }
    }
}

pub fn mean_std(xs: &[f64], kind: StdKind) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = ordered_sum(xs.to_vec()) / n;
    let ss = ordered_sum(xs.iter().map(|x| (x - mean) * (x - mean)).collect());
    let std = match kind {
        StdKind::Population => (ss / n).sqrt(),
        StdKind::Sample if xs.len() > 1 => (ss / (n - 1.0)).sqrt(),
        StdKind::Sample => 0.0,
    };
    (mean, std)
}

/// Per split and metric: one scalar per seed, then mean and std across seeds.
/// A metric no seed can compute is left absent.
pub fn aggregate(runs: &[RunResult], options: AggregateOptions) -> Result<AggregateTable, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut by_split: BTreeMap<&str, BTreeMap<&str, &RunResult>> = BTreeMap::new();
    for run in runs {
        let seeds = by_split.entry(&run.split).or_default();
        if seeds.insert(&run.seed, run).is_some() {
            return Err(ReportError::DuplicateRun {
                seed: run.seed.clone(),
                split: run.split.clone(),
            });
        }
        for (&metric, values) in &run.metrics {
            let mut ids = BTreeSet::new();
            for v in values {
                if !v.value.is_finite() || !v.weight.is_finite() || v.weight < 0.0 {
                    return Err(ReportError::InvalidValue {
                        record: v.record_id.clone(),
                        metric,
                    });
                }
                if !ids.insert(&v.record_id) {
                    return Err(ReportError::DuplicateRecord {
                        seed: run.seed.clone(),
                        split: run.split.clone(),
                        metric,
                        record: v.record_id.clone(),
                    });
                }
            }
        }
    }

    let mut rows = Vec::new();
    for (split, seeds) in by_split {
        let mut expected: Option<Vec<Metric>> = None;
        for (seed, run) in &seeds {
            let found: Vec<Metric> = run.metrics.keys().copied().collect();
            match &expected {
                None => expected = Some(found),
                Some(e) if *e != found => {
                    return Err(ReportError::InconsistentMetrics {
                        split: split.to_owned(),
                        seed: (*seed).to_owned(),
                        expected: e.clone(),
                        found,
                    })
                }
                Some(_) => {}
            }
        }
        let mut cells = BTreeMap::new();
        for metric in expected.unwrap_or_default() {
            let scalars: Vec<f64> = seeds
                .values()
                .filter_map(|run| seed_scalar(&run.metrics[&metric], options.pooling))
                .collect();
            if scalars.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&scalars, options.std);
            cells.insert(
                metric,
                AggregateCell {
                    metric,
                    mean,
                    std,
                    n_seeds: scalars.len(),
                },
            );
        }
        rows.push(TableRow {
            split: split.to_owned(),
            cells,
        });
    }
    rows.sort_by(|a, b| split_rank(&a.split).cmp(&split_rank(&b.split)));
    Ok(AggregateTable { rows })
}

/// Rounds half away from zero at `decimals` places, operating on the
/// shortest decimal representation of `x` so that e.g. 1.005 becomes 1.01.
pub fn round_half_up(x: f64, decimals: usize) -> String {
    let repr = format!("{x}");
    let (negative, digits) = match repr.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, repr.as_str()),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    let mut kept: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let mut frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    frac.resize(frac.len().max(decimals + 1), 0);
    kept.extend_from_slice(&frac[..decimals]);
    if frac[decimals] >= 5 {
        let mut i = kept.len();
        loop {
            if i == 0 {
                kept.insert(0, 1);
                break;
            }
            i -= 1;
            if kept[i] == 9 {
                kept[i] = 0;
            } else {
                kept[i] += 1;
                break;
            }
        }
    }
    let split_at = kept.len() - decimals;
    let mut out = String::new();
    let is_zero = kept.iter().all(|&d| d == 0);
    if negative && !is_zero {
        out.push('-');
    }
    out.extend(kept[..split_at].iter().map(|d| char::from(b'0' + d)));
    if decimals > 0 {
        out.push('.');
        out.extend(kept[split_at..].iter().map(|d| char::from(b'0' + d)));
    }
    out
}

pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{}±{}", round_half_up(mean, 2), round_half_up(std, 2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Show ratio metrics ×100.
    pub percent: bool,
    /// Append an FID column rendered as "n/a".
    pub include_fid: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            percent: true,
            include_fid: false,
        }
    }
}

fn display_scale(metric: Metric, options: RenderOptions) -> f64 {
    if options.percent && metric.percent_scaled() {
        100.0
    } else {
        1.0
    }
}

fn cell_text(cell: Option<&AggregateCell>, options: RenderOptions) -> String {
    match cell {
        Some(c) => {
            let s = display_scale(c.metric, options);
            format_cell(c.mean * s, c.std * s)
        }
        None => "-".to_owned(),
    }
}

/// Fixed-width text table, one row per split.
pub fn render_text(table: &AggregateTable, options: RenderOptions) -> String {
    let mut header: Vec<String> = vec!["split".into()];
    header.extend(Metric::ALL.iter().map(|m| m.header().to_owned()));
    if options.include_fid {
        header.push("FID".into());
    }
    let mut lines = vec![header];
    for row in &table.rows {
        let mut line = vec![row.split.clone()];
        line.extend(
            Metric::ALL
                .iter()
                .map(|m| cell_text(row.cells.get(m), options)),
        );
        if options.include_fid {
            line.push("n/a".into());
        }
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &lines {
        let padded: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}", w = *w))
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// CSV per the module-level schema. `comments` are emitted first as `# ...`.
pub fn render_csv(table: &AggregateTable, options: RenderOptions, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["split", "metric", "mean", "std", "n_seeds", "cell"])
        .expect("in-memory csv write");
    for row in &table.rows {
        for metric in Metric::ALL {
            let cell = row.cells.get(&metric);
            let (mean, std, n) = match cell {
                Some(c) => (c.mean.to_string(), c.std.to_string(), c.n_seeds.to_string()),
                None => (String::new(), String::new(), "0".to_owned()),
            };
            w.write_record([
                row.split.as_str(),
                metric.name(),
                &mean,
                &std,
                &n,
                &cell_text(cell, options),
            ])
            .expect("in-memory csv write");
        }
    }
    let bytes = w.into_inner().expect("in-memory csv flush");
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    out
}

pub fn parse_csv(text: &str) -> Result<AggregateTable, ReportError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let csv_err = |line: u64, message: String| ReportError::Csv { line, message };
    let mut rows: Vec<TableRow> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            csv_err(e.position().map_or(0, |p| p.line()), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 6 {
            return Err(csv_err(line, format!("expected 6 fields, found {}", rec.len())));
        }
        let split = rec[0].to_owned();
        let metric: Metric = rec[1].parse()?;
        if rows.last().map(|r| r.split != split).unwrap_or(true) {
            if rows.iter().any(|r| r.split == split) {
                return Err(csv_err(line, format!("split '{split}' is not contiguous")));
            }
            rows.push(TableRow {
                split: split.clone(),
                cells: BTreeMap::new(),
            });
        }
        if rec[2].is_empty() && rec[3].is_empty() {
            continue;
        }
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|e| csv_err(line, format!("bad {what} '{s}': {e}")))
        };
        let mean = num(&rec[2], "mean")?;
        let std = num(&rec[3], "std")?;
        let n_seeds = rec[4]
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| csv_err(line, format!("bad n_seeds '{}'", &rec[4])))?;
        let row = rows.last_mut().expect("row pushed above");
        if row
            .cells
            .insert(metric, AggregateCell { metric, mean, std, n_seeds })
            .is_some()
        {
            return Err(csv_err(line, format!("duplicate cell {split}/{metric}")));
        }
    }
    Ok(AggregateTable { rows })
}
