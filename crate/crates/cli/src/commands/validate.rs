use super::load_annotations;
use crate::config::Config;
use crate::provenance::Provenance;
use crate::{CliError, Io};
use l2i_core::annotations::{filter_benchmark_eligible, MAX_VALID_PAIRS, MIN_VALID_PAIRS};

pub fn run(cfg: &Config, eligible: bool, io: &mut Io) -> Result<i32, CliError> {
    let mut prov = Provenance::new("validate", cfg);
    let ds = load_annotations(cfg, &mut prov, io, true)?;
    let mut rejected = ds.diagnostics.len();
    for d in &ds.diagnostics {
        let _ = writeln!(io.out, "{d}");
    }
    let total = ds.records.len() + ds.diagnostics.len();
    let mut valid = ds.records.len();
    if eligible {
        let (kept, ineligible) = filter_benchmark_eligible(ds.records, cfg.pair_thresholds());
        for r in &ineligible {
            let _ = writeln!(
                io.out,
                "record '{}': {} valid overlap pairs (expected {MIN_VALID_PAIRS}..={MAX_VALID_PAIRS})",
                r.record.id, r.valid_pairs
            );
        }
        rejected += ineligible.len();
        valid = kept.len();
    }
    let _ = writeln!(io.out, "{total} records read, {valid} accepted, {rejected} rejected");
    Ok(if rejected == 0 { 0 } else { 1 })
}
