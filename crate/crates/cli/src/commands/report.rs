use super::eval::{build_runs, render_options, MetricsLine};
use super::open;
use super::score::render_distribution;
use crate::config::Config;
use crate::provenance::{write_file, Provenance};
use crate::{CliError, Format, Io};
use l2i_core::overlayscore::{read_scored, score_distribution};
use l2i_core::reporting::{aggregate, render_csv, render_text};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

/// Reads a metrics file, skipping its provenance line.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsLine>, CliError> {
    let mut out = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with("{\"provenance\"") {
            continue;
        }
        let parsed: MetricsLine = serde_json::from_str(t).map_err(|e| {
            CliError::Config(format!("{}:{}: {e}", path.display(), idx + 1))
        })?;
        out.push(parsed);
    }
    Ok(out)
}

pub fn run(
    cfg: &Config,
    metrics: &[std::path::PathBuf],
    format: Format,
    out: Option<&Path>,
    scores: Option<&Path>,
    io: &mut Io,
) -> Result<i32, CliError> {
    let mut prov = Provenance::new("report", cfg);
    let mut lines = Vec::new();
    for path in metrics {
        lines.extend(read_metrics(path)?);
        prov.add_input(path)?;
    }
    let runs = build_runs(&lines)?;
    let table = aggregate(&runs, cfg.aggregate_options()).map_err(|e| CliError::Failure(e.to_string()))?;
    let options = render_options(cfg);
    let mut text = match format {
        Format::Text => format!("{}\n{}", prov.comment_line(), render_text(&table, options)),
        Format::Csv => render_csv(&table, options, &[prov.json_line()]),
    };
    if let Some(path) = scores {
        let scored = read_scored(open(path)?).map_err(|e| CliError::io(path, e))?;
        let values: Vec<f64> = scored.iter().map(|s| s.score).collect();
        let mut buckets = BTreeMap::new();
        for s in &scored {
            *buckets.entry(s.bucket).or_insert(0) += 1;
        }
        let dist = score_distribution(&values, cfg.score.bin_width).map_err(|e| CliError::Config(e.to_string()))?;
        let rendered = render_distribution(&dist, &buckets, cfg.difficulty_thresholds());
        if format == Format::Csv {
            // Keep the CSV parseable: the distribution goes out as comments.
            for l in rendered.lines() {
                text.push_str(&format!("# {l}\n"));
            }
        } else {
            text.push('\n');
            text.push_str(&rendered);
        }
    }
    match out {
        Some(path) => write_file(path, &text)?,
        None => {
            let _ = write!(io.out, "{text}");
        }
    }
    Ok(0)
}
