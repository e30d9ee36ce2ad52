pub mod eval;
pub mod losses;
pub mod report;
pub mod score;
pub mod serve;
pub mod validate;

use crate::config::Config;
use crate::provenance::Provenance;
use crate::{CliError, Io};
use l2i_core::annotations::{parse_dataset, ParsedDataset};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

pub(crate) fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

/// Reads the configured annotation file; diagnostics go to stderr as
/// warnings unless `quiet`.
pub(crate) fn load_annotations(
    cfg: &Config,
    prov: &mut Provenance,
    io: &mut Io,
    quiet: bool,
) -> Result<ParsedDataset, CliError> {
    let path = Config::require(&cfg.paths.annotations, "paths.annotations")?;
    let ds = parse_dataset(open(path)?).map_err(|e| CliError::io(path, e))?;
    prov.add_input(path)?;
    if !quiet {
        for d in &ds.diagnostics {
            io.warn(format!("{}: skipped {d}", path.display()));
        }
    }
    Ok(ds)
}
