use super::score::text_provider;
use super::{load_annotations, open};
use crate::config::{expand_seed, Config};
use crate::provenance::{write_file, Provenance};
use crate::{CliError, Io};
use l2i_core::embedding::{clip_score, ClipScoreConfig, EmbeddingLookup, EmbeddingProvider, EmbeddingStore};
use l2i_core::matching::{
    match_record, o_miou_from_matching, pairs_for, read_detections, read_judgments, record_rate,
    validate_judgment, DetectionSet, JudgmentFile, VerdictKind,
};
use l2i_core::overlayscore::read_scored;
use l2i_core::reporting::{
    aggregate, render_csv, render_text, Metric, RecordValue, RenderOptions, RunResult,
};
use l2i_core::{Execution, LayoutRecord};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Label of the pooled row added when records span several splits.
pub const ALL_SPLIT: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    /// Units behind the value (instances, pairs, verdicts); zero when the
    /// metric is undefined for the record.
    pub weight: f64,
}

impl MetricValue {
    const UNDEFINED: MetricValue = MetricValue {
        value: 0.0,
        weight: 0.0,
    };
}

/// One record's metrics for one seed, as written to `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub seed: String,
    pub record_id: String,
    pub split: String,
    pub metrics: BTreeMap<String, MetricValue>,
}

struct SeedInputs {
    detections: HashMap<String, DetectionSet>,
    judgments: Option<HashMap<String, JudgmentFile>>,
    images: Option<EmbeddingStore>,
}

fn split_labels(cfg: &Config, records: &[LayoutRecord], prov: &mut Provenance) -> Result<HashMap<String, String>, CliError> {
    let path = cfg.scored_path();
    let mut from_scores = HashMap::new();
    if path.exists() {
        let lines = read_scored(open(&path)?).map_err(|e| CliError::io(&path, e))?;
        prov.add_input(&path)?;
        from_scores = lines
            .into_iter()
            .map(|l| (l.id, l.bucket.as_str().to_owned()))
            .collect();
    }
    Ok(records
        .iter()
        .map(|r| {
            let label = from_scores
                .get(&r.id)
                .cloned()
                .or_else(|| r.split.map(|s| s.as_str().to_owned()))
                .unwrap_or_else(|| ALL_SPLIT.to_owned());
            (r.id.clone(), label)
        })
        .collect())
}

fn load_seed(cfg: &Config, seed: &str, prov: &mut Provenance, io: &mut Io) -> Result<Option<SeedInputs>, CliError> {
    let template = Config::require(&cfg.paths.detections, "paths.detections")?;
    let det_path = expand_seed(template, seed);
    if !det_path.exists() {
        io.warn(format!("seed {seed}: {} not found; seed skipped", det_path.display()));
        return Ok(None);
    }
    let (sets, issues) = read_detections(open(&det_path)?).map_err(|e| CliError::io(&det_path, e))?;
    prov.add_input(&det_path)?;
    for i in issues {
        io.warn(format!("{}: {i}", det_path.display()));
    }
    let detections = sets.into_iter().map(|d| (d.record_id.clone(), d)).collect();

    let judgments = match &cfg.paths.judgments {
        None => None,
        Some(t) => {
            let path = expand_seed(t, seed);
            if !path.exists() {
                io.warn(format!("seed {seed}: {} not found; seed skipped", path.display()));
                return Ok(None);
            }
            let (js, issues) = read_judgments(open(&path)?).map_err(|e| CliError::io(&path, e))?;
            prov.add_input(&path)?;
            for i in issues {
                io.warn(format!("{}: {i}", path.display()));
            }
            Some(js.into_iter().map(|j| (j.record_id.clone(), j)).collect())
        }
    };

    let images = match &cfg.paths.image_embeddings {
        None => None,
        Some(t) => {
            let path = expand_seed(t, seed);
            if !path.exists() {
                io.warn(format!("seed {seed}: {} not found; seed skipped", path.display()));
                return Ok(None);
            }
            let store = EmbeddingStore::load(open(&path)?)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            prov.add_input(&path)?;
            Some(store)
        }
    };
    Ok(Some(SeedInputs {
        detections,
        judgments,
        images,
    }))
}

fn clip_metrics(
    record: &LayoutRecord,
    images: &EmbeddingStore,
    text: &EmbeddingProvider,
    config: ClipScoreConfig,
    warnings: &mut Vec<String>,
) -> (MetricValue, MetricValue) {
    let mut score = |image_key: &str, caption: &str| -> Option<f64> {
        let image = images.lookup(image_key);
        let caption_vec = text.lookup(caption);
        match (image, caption_vec) {
            (Ok(i), Ok(t)) => match clip_score(&i, &t, config) {
                Ok(s) => Some(s),
                Err(e) => {
                    warnings.push(format!("record '{}': {e}", record.id));
                    None
                }
            },
            (Err(e), _) | (_, Err(e)) => {
                warnings.push(format!("record '{}': {e}", record.id));
                None
            }
        }
    };
    let global = score(&record.id, &record.global_caption).map_or(MetricValue::UNDEFINED, |v| MetricValue {
        value: v,
        weight: 1.0,
    });
    let locals: Vec<f64> = record
        .instances
        .iter()
        .filter_map(|inst| score(&format!("{}#{}", record.id, inst.name), &inst.caption))
        .collect();
    let local = if locals.is_empty() {
        MetricValue::UNDEFINED
    } else {
        MetricValue {
            value: locals.iter().sum::<f64>() / locals.len() as f64,
            weight: locals.len() as f64,
        }
    };
    (global, local)
}

fn evaluate_record(
    cfg: &Config,
    seed: &str,
    split: &str,
    record: &LayoutRecord,
    inputs: &SeedInputs,
    text: Option<&EmbeddingProvider>,
) -> (MetricsLine, Vec<String>) {
    let mut warnings = Vec::new();
    let empty;
    let det = match inputs.detections.get(&record.id) {
        Some(d) => d,
        None => {
            empty = DetectionSet::empty(&record.id, seed);
            &empty
        }
    };
    let matching = match_record(record, det, cfg.match_options()).expect("detections keyed by record id");
    let mut metrics = BTreeMap::new();
    metrics.insert(
        Metric::Miou.name().to_owned(),
        MetricValue {
            value: matching.miou(),
            weight: record.instances.len() as f64,
        },
    );
    let pairs = pairs_for(record, cfg.pair_source());
    let o = o_miou_from_matching(record, &matching, &pairs).expect("pairs come from the record");
    metrics.insert(
        Metric::OMiou.name().to_owned(),
        o.value.map_or(MetricValue::UNDEFINED, |v| MetricValue {
            value: v,
            weight: o.pairs.len() as f64,
        }),
    );

    if let Some(judgments) = &inputs.judgments {
        let (entity, relation) = match judgments.get(&record.id) {
            Some(j) => {
                for p in validate_judgment(record, j) {
                    warnings.push(format!("seed {seed}, record '{}': {p}", record.id));
                }
                let rate = |kind| {
                    let r = record_rate(j, kind);
                    r.rate().map_or(MetricValue::UNDEFINED, |v| MetricValue {
                        value: v,
                        weight: r.total as f64,
                    })
                };
                (rate(VerdictKind::Entity), rate(VerdictKind::Relationship))
            }
            None => {
                warnings.push(format!("seed {seed}: no judgment for record '{}'", record.id));
                (MetricValue::UNDEFINED, MetricValue::UNDEFINED)
            }
        };
        metrics.insert(Metric::SrE.name().to_owned(), entity);
        metrics.insert(Metric::SrR.name().to_owned(), relation);
    }

    if let (Some(images), Some(text)) = (&inputs.images, text) {
        let config = ClipScoreConfig {
            scale: cfg.embedding.clip_scale,
            clamp_negative: true,
        };
        let (global, local) = clip_metrics(record, images, text, config, &mut warnings);
        metrics.insert(Metric::ClipGlobal.name().to_owned(), global);
        metrics.insert(Metric::ClipLocal.name().to_owned(), local);
    }

    (
        MetricsLine {
            seed: seed.to_owned(),
            record_id: record.id.clone(),
            split: split.to_owned(),
            metrics,
        },
        warnings,
    )
}

/// Groups metric lines into per-(seed, split) runs, adding an [`ALL_SPLIT`]
/// run per seed when more than one split is present.
pub(crate) fn build_runs(lines: &[MetricsLine]) -> Result<Vec<RunResult>, CliError> {
    let splits: BTreeSet<&str> = lines.iter().map(|l| l.split.as_str()).collect();
    let pooled = splits.len() > 1 && !splits.contains(ALL_SPLIT);
    let mut runs: BTreeMap<(String, String), RunResult> = BTreeMap::new();
    for line in lines {
        let mut targets = vec![line.split.clone()];
        if pooled {
            targets.push(ALL_SPLIT.to_owned());
        }
        for split in targets {
            let run = runs
                .entry((line.seed.clone(), split.clone()))
                .or_insert_with(|| RunResult::new(line.seed.clone(), split));
            for (name, mv) in &line.metrics {
                let metric: Metric = name.parse().map_err(|e: l2i_core::reporting::ReportError| {
                    CliError::Failure(e.to_string())
                })?;
                run.push(metric, RecordValue::new(line.record_id.clone(), mv.value, mv.weight));
            }
        }
    }
    Ok(runs.into_values().collect())
}

pub(crate) fn render_options(cfg: &Config) -> RenderOptions {
    RenderOptions {
        percent: cfg.eval.percent,
        include_fid: cfg.eval.include_fid,
    }
}

pub fn run(cfg: &Config, io: &mut Io) -> Result<i32, CliError> {
    let mut prov = Provenance::new("eval", cfg);
    let ds = load_annotations(cfg, &mut prov, io, false)?;
    let records = ds.records;
    let splits = split_labels(cfg, &records, &mut prov)?;
    let text = if cfg.paths.image_embeddings.is_some() {
        Some(text_provider(cfg, &mut prov)?)
    } else {
        None
    };
    let known: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();

    let mut lines = Vec::new();
    let mut skipped = Vec::new();
    for seed in &cfg.eval.seeds {
        let Some(inputs) = load_seed(cfg, seed, &mut prov, io)? else {
            skipped.push(seed.clone());
            continue;
        };
        let unknown: Vec<&String> = inputs
            .detections
            .keys()
            .filter(|id| !known.contains(id.as_str()))
            .collect();
        if !unknown.is_empty() {
            io.warn(format!("seed {seed}: {} detection lines name unknown records", unknown.len()));
        }
        let absent = records
            .iter()
            .filter(|r| !inputs.detections.contains_key(&r.id))
            .count();
        if absent > 0 {
            io.warn(format!("seed {seed}: {absent} records have no detections and count as empty"));
        }
        let results = Execution::default().map(&records, |r| {
            evaluate_record(cfg, seed, &splits[&r.id], r, &inputs, text.as_ref())
        });
        for (line, warnings) in results {
            for w in warnings {
                io.warn(w);
            }
            lines.push(line);
        }
    }
    if lines.is_empty() {
        return Err(CliError::Failure("no seed could be evaluated".into()));
    }

    let out_dir = &cfg.paths.output_dir;
    let mut metrics_text = prov.json_line();
    metrics_text.push('\n');
    for l in &lines {
        metrics_text.push_str(&serde_json::to_string(l).expect("metrics line serializes"));
        metrics_text.push('\n');
    }
    write_file(&out_dir.join("metrics.jsonl"), &metrics_text)?;

    let runs = build_runs(&lines)?;
    let table = aggregate(&runs, cfg.aggregate_options()).map_err(|e| CliError::Failure(e.to_string()))?;
    let options = render_options(cfg);
    let rendered = render_text(&table, options);
    write_file(
        &out_dir.join("report.txt"),
        &format!("{}\n{rendered}", prov.comment_line()),
    )?;
    write_file(
        &out_dir.join("report.csv"),
        &render_csv(&table, options, &[prov.json_line()]),
    )?;
    let _ = writeln!(
        io.out,
        "evaluated {} records x {} seeds ({} aggregation) -> {}",
        records.len(),
        cfg.eval.seeds.len() - skipped.len(),
        cfg.eval.pooling_label(),
        out_dir.display()
    );
    let _ = write!(io.out, "{rendered}");
    if !skipped.is_empty() {
        let _ = writeln!(io.err, "error: skipped seeds: {}", skipped.join(", "));
        return Ok(1);
    }
    Ok(0)
}
