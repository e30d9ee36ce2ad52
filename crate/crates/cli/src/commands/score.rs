use super::{load_annotations, open};
use crate::config::Config;
use crate::provenance::{write_file, Provenance};
use crate::{CliError, Io};
use l2i_core::annotations::filter_benchmark_eligible;
use l2i_core::embedding::{
    EmbeddingClient, EmbeddingProvider, EmbeddingStore, DEFAULT_DIM, DEFAULT_MODEL,
};
use l2i_core::overlayscore::{
    score_batch, score_distribution, DifficultyThresholds, ScoreDistribution, ScoreError,
    ScoreOptions, ScoredRecordLine,
};
use l2i_core::{Difficulty, Execution};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

/// Text-embedding provider: the configured store, backed by the service when
/// a URL is set.
pub(crate) fn text_provider(cfg: &Config, prov: &mut Provenance) -> Result<EmbeddingProvider, CliError> {
    let store = match &cfg.paths.embeddings {
        Some(path) => {
            let s = EmbeddingStore::load(open(path)?)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            prov.add_input(path)?;
            s
        }
        None if cfg.embedding.service_url.is_some() => EmbeddingStore::new(DEFAULT_MODEL, DEFAULT_DIM),
        None => {
            return Err(CliError::Config(
                "paths.embeddings is not set and no embedding service is configured".into(),
            ))
        }
    };
    Ok(match &cfg.embedding.service_url {
        Some(url) => {
            let client = EmbeddingClient::new(
                url,
                Duration::from_secs_f64(cfg.embedding.timeout_secs),
                cfg.embedding.retries,
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            EmbeddingProvider::with_fallback(store, Box::new(client))
        }
        None => EmbeddingProvider::new(store),
    })
}

pub(crate) fn render_distribution(
    dist: &ScoreDistribution,
    buckets: &BTreeMap<Difficulty, usize>,
    thresholds: DifficultyThresholds,
) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "buckets (simple <= {} < regular <= {} < complex):",
        thresholds.simple_regular(),
        thresholds.regular_complex()
    );
    for d in Difficulty::ALL {
        let _ = writeln!(s, "  {:<8} {}", d.as_str(), buckets.get(&d).copied().unwrap_or(0));
    }
    let Some(summary) = &dist.summary else {
        let _ = writeln!(s, "no scores");
        return s;
    };
    let _ = writeln!(
        s,
        "n={} mean={:.4} median={:.4} min={:.4} max={:.4}",
        summary.count, summary.mean, summary.median, summary.min, summary.max
    );
    let peak = dist.bins.iter().map(|b| b.1).max().unwrap_or(1);
    for &(lo, count) in &dist.bins {
        let bar = "#".repeat((count * 40).div_ceil(peak));
        let _ = writeln!(s, "  [{:>7.3}, {:>7.3})  {:>6}  {bar}", lo, lo + dist.bin_width, count);
    }
    s
}

pub fn run(cfg: &Config, io: &mut Io) -> Result<i32, CliError> {
    let mut prov = Provenance::new("score", cfg);
    let ds = load_annotations(cfg, &mut prov, io, false)?;
    let records = if cfg.score.eligible_only {
        let (kept, rejected) = filter_benchmark_eligible(ds.records, cfg.pair_thresholds());
        if !rejected.is_empty() {
            io.warn(format!("{} records outside the valid-pair range not scored", rejected.len()));
        }
        kept
    } else {
        ds.records
    };
    let provider = text_provider(cfg, &mut prov)?;
    let options = ScoreOptions {
        clamp_negative_cosine: cfg.score.clamp_negative_cosine,
    };
    let results = score_batch(&records, &provider, options, Execution::default());

    let mut missing = 0usize;
    let mut scored = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(s) => scored.push(s),
            Err(e @ ScoreError::MissingEmbedding { .. }) => {
                missing += 1;
                let _ = writeln!(io.err, "error: {e}");
            }
            Err(e) => return Err(CliError::Failure(e.to_string())),
        }
    }
    if missing > 0 {
        return Err(CliError::Failure(format!(
            "{missing} records lack embeddings; no output written"
        )));
    }

    let thresholds = cfg.difficulty_thresholds();
    let lines: Vec<ScoredRecordLine> = scored
        .into_iter()
        .map(|s| ScoredRecordLine::new(s, thresholds))
        .collect();
    let mut text = prov.json_line();
    text.push('\n');
    let mut buckets: BTreeMap<Difficulty, usize> = BTreeMap::new();
    for l in &lines {
        *buckets.entry(l.bucket).or_default() += 1;
        text.push_str(&serde_json::to_string(l).expect("scored line serializes"));
        text.push('\n');
    }
    let dest = cfg.scored_path();
    write_file(&dest, &text)?;

    let scores: Vec<f64> = lines.iter().map(|l| l.score).collect();
    let dist = score_distribution(&scores, cfg.score.bin_width)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let _ = writeln!(io.out, "scored {} records -> {}", lines.len(), dest.display());
    let _ = write!(io.out, "{}", render_distribution(&dist, &buckets, thresholds));
    Ok(0)
}
