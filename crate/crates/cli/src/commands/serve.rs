use super::{load_annotations, open};
use crate::config::Config;
use crate::provenance::Provenance;
use crate::{CliError, Io};
use l2i_audit::{AuditConfig, AuditService};
use l2i_core::overlayscore::read_scored;
use std::net::SocketAddr;
use std::sync::Arc;

pub fn run(cfg: &Config, io: &mut Io) -> Result<i32, CliError> {
    let addr: SocketAddr = cfg
        .audit
        .bind
        .parse()
        .map_err(|e| CliError::Config(format!("audit.bind '{}': {e}", cfg.audit.bind)))?;
    let mut prov = Provenance::new("audit-serve", cfg);
    let ds = load_annotations(cfg, &mut prov, io, false)?;
    let scored_path = cfg.scored_path();
    let scored = read_scored(open(&scored_path)?).map_err(|e| CliError::io(&scored_path, e))?;

    let out = &cfg.paths.output_dir;
    let mut audit = AuditConfig::new(
        cfg.audit.log.clone().unwrap_or_else(|| out.join("audit-events.jsonl")),
        cfg.audit.export_dir.clone().unwrap_or_else(|| out.join("exports")),
    );
    audit.checks = cfg.audit.checks.clone();
    let log_path = audit.log_path.clone();
    let (svc, unscored) =
        AuditService::open(ds.records, &scored, audit).map_err(|e| CliError::Config(e.to_string()))?;
    if !unscored.is_empty() {
        io.warn(format!("{} records have no score and are not served", unscored.len()));
    }
    let _ = writeln!(
        io.out,
        "serving {} tasks on http://{addr} (log {})",
        svc.statuses().len(),
        log_path.display()
    );
    let _ = io.out.flush();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failure(format!("cannot start runtime: {e}")))?;
    runtime
        .block_on(l2i_audit::http::serve(Arc::new(svc), addr, cfg.audit.ui_dir.clone()))
        .map_err(|e| CliError::Config(format!("cannot serve on {addr}: {e}")))?;
    Ok(0)
}
