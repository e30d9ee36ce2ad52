//! `l2i` command-line front end.
//!
//! [`run`] parses arguments and executes one subcommand, writing to the given
//! streams and returning the process exit code:
//!
//! - `0`: success
//! - `1`: validation or metric failure (rejected records, missing embeddings,
//!   skipped seeds, failed gradient checks)
//! - `2`: I/O or configuration error

mod commands;
pub mod config;
pub mod provenance;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{Config, MappingArg, PairsArg, PoolingArg, ScopeArg, StdArg, EMBED_URL_ENV};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub use commands::eval::MetricsLine;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Config(_) | CliError::Io { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "l2i", version, about = "Layout-to-image evaluation toolkit")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Option<Command>,
}

/// Flags that override configuration values.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// Template with `{seed}`.
    #[arg(long, global = true)]
    pub image_embeddings: Option<String>,
    /// Template with `{seed}`.
    #[arg(long, global = true)]
    pub detections: Option<String>,
    /// Template with `{seed}`.
    #[arg(long, global = true)]
    pub judgments: Option<String>,
    #[arg(long, global = true)]
    pub scored: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub iou_min: Option<f64>,
    #[arg(long, global = true)]
    pub area_min: Option<f64>,
    /// Simple/regular cut point.
    #[arg(long, global = true)]
    pub t_sr: Option<f64>,
    /// Regular/complex cut point.
    #[arg(long, global = true)]
    pub t_rc: Option<f64>,
    /// Embedding service root URL (also read from L2I_EMBED_URL).
    #[arg(long, global = true)]
    pub embed_url: Option<String>,
    #[arg(long, global = true)]
    pub embed_timeout: Option<f64>,
    #[arg(long, global = true)]
    pub clip_scale: Option<f64>,
    /// Comma-separated seed labels.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an annotation file and report every rejected record.
    Validate {
        /// Also reject records outside 1..=10 valid overlap pairs.
        #[arg(long)]
        eligible: bool,
    },
    /// Score layouts, assign difficulty buckets and summarize the distribution.
    Score {
        #[arg(long)]
        clamp_negative: bool,
        #[arg(long)]
        bin_width: Option<f64>,
        /// Score only benchmark-eligible records.
        #[arg(long)]
        eligible: bool,
    },
    /// Evaluate detections and judgments for every seed and aggregate.
    Eval {
        #[arg(long, value_enum)]
        scope: Option<ScopeArg>,
        #[arg(long)]
        min_iou: Option<f64>,
        #[arg(long, value_enum)]
        pairs: Option<PairsArg>,
        #[arg(long, value_enum)]
        pooling: Option<PoolingArg>,
        #[arg(long, value_enum)]
        std: Option<StdArg>,
        /// Add an FID column (always n/a).
        #[arg(long)]
        fid: bool,
        /// Show ratio metrics as fractions instead of percentages.
        #[arg(long)]
        no_percent: bool,
    },
    /// Compare analytic loss gradients with central differences.
    LossesCheck {
        /// Map/mask fixtures to evaluate and check.
        #[arg(long)]
        fixture: Vec<PathBuf>,
        /// Random instances per loss.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 20251202)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        min_size: usize,
        #[arg(long, default_value_t = 16)]
        max_size: usize,
        #[arg(long, value_enum)]
        mapping: Option<MappingArg>,
        /// Use the EliGen weights (lambda = 1, beta = 1).
        #[arg(long)]
        eligen: bool,
    },
    /// Aggregate per-record metric files into a table.
    Report {
        /// Metric files written by `eval`.
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also summarize a scored file's distribution.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, value_enum)]
        pooling: Option<PoolingArg>,
        #[arg(long, value_enum)]
        std: Option<StdArg>,
        #[arg(long)]
        fid: bool,
        #[arg(long)]
        no_percent: bool,
    },
    /// Serve audit tasks over HTTP.
    AuditServe {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        export_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

/// Output streams for a command.
pub struct Io<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

impl Io<'_> {
    fn warn(&mut self, msg: impl std::fmt::Display) {
        let _ = writeln!(self.err, "warning: {msg}");
    }
}

fn apply_overrides(cfg: &mut Config, o: &Overrides, env_url: Option<String>) {
    let p = &mut cfg.paths;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v.into();
            }
        };
    }
    if o.annotations.is_some() {
        p.annotations = o.annotations.clone();
    }
    if o.embeddings.is_some() {
        p.embeddings = o.embeddings.clone();
    }
    if o.image_embeddings.is_some() {
        p.image_embeddings = o.image_embeddings.clone();
    }
    if o.detections.is_some() {
        p.detections = o.detections.clone();
    }
    if o.judgments.is_some() {
        p.judgments = o.judgments.clone();
    }
    if o.scored.is_some() {
        p.scored = o.scored.clone();
    }
    set!(p.output_dir, o.output_dir);
    let t = &mut cfg.thresholds;
    set!(t.iou_min, o.iou_min);
    set!(t.area_min, o.area_min);
    set!(t.simple_regular, o.t_sr);
    set!(t.regular_complex, o.t_rc);
    if let Some(url) = o.embed_url.clone().or(env_url) {
        cfg.embedding.service_url = Some(url);
    }
    set!(cfg.embedding.timeout_secs, o.embed_timeout);
    set!(cfg.embedding.clip_scale, o.clip_scale);
    set!(cfg.eval.seeds, o.seeds);
}

fn apply_command_overrides(cfg: &mut Config, cmd: &Command) {
    match cmd {
        Command::Score {
            clamp_negative,
            bin_width,
            eligible,
        } => {
            cfg.score.clamp_negative_cosine |= clamp_negative;
            cfg.score.eligible_only |= eligible;
            if let Some(w) = bin_width {
                cfg.score.bin_width = *w;
            }
        }
        Command::Eval {
            scope,
            min_iou,
            pairs,
            pooling,
            std,
            fid,
            no_percent,
        } => {
            if let Some(s) = scope {
                cfg.eval.match_scope = *s;
            }
            if min_iou.is_some() {
                cfg.eval.min_iou = *min_iou;
            }
            if let Some(p) = pairs {
                cfg.eval.pairs = *p;
            }
            if let Some(p) = pooling {
                cfg.eval.pooling = *p;
            }
            if let Some(s) = std {
                cfg.eval.std = *s;
            }
            cfg.eval.include_fid |= fid;
            if *no_percent {
                cfg.eval.percent = false;
            }
        }
        Command::Report {
            pooling,
            std,
            fid,
            no_percent,
            ..
        } => {
            if let Some(p) = pooling {
                cfg.eval.pooling = *p;
            }
            if let Some(s) = std {
                cfg.eval.std = *s;
            }
            cfg.eval.include_fid |= fid;
            if *no_percent {
                cfg.eval.percent = false;
            }
        }
        Command::LossesCheck { mapping, eligen, .. } => {
            if let Some(m) = mapping {
                cfg.losses.mapping = *m;
            }
            if *eligen {
                let w = l2i_core::losses::LossWeights::ELIGEN;
                cfg.losses.lambda = w.lambda;
                cfg.losses.beta = w.beta;
            }
        }
        Command::AuditServe {
            bind,
            ui_dir,
            log,
            export_dir,
        } => {
            if let Some(b) = bind {
                cfg.audit.bind = b.clone();
            }
            if ui_dir.is_some() {
                cfg.audit.ui_dir = ui_dir.clone();
            }
            if log.is_some() {
                cfg.audit.log = log.clone();
            }
            if export_dir.is_some() {
                cfg.audit.export_dir = export_dir.clone();
            }
        }
        Command::Validate { .. } => {}
    }
}

/// Config file, then `L2I_EMBED_URL`, then flags.
pub fn resolve_config(cli: &Cli, env_url: Option<String>) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    apply_overrides(&mut cfg, &cli.overrides, env_url);
    if let Some(cmd) = &cli.command {
        apply_command_overrides(&mut cfg, cmd);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let env_url = std::env::var(EMBED_URL_ENV).ok().filter(|s| !s.is_empty());
    let mut io = Io { out, err };
    match execute(&cli, env_url, &mut io) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, env_url: Option<String>, io: &mut Io) -> Result<i32, CliError> {
    let cfg = resolve_config(cli, env_url)?;
    if cli.print_config {
        let _ = writeln!(io.out, "# config_hash = \"{}\"", cfg.hash());
        let _ = write!(io.out, "{}", cfg.to_toml());
        return Ok(0);
    }
    let Some(cmd) = &cli.command else {
        return Err(CliError::Config(
            "no subcommand given (see --help)".into(),
        ));
    };
    match cmd {
        Command::Validate { eligible } => commands::validate::run(&cfg, *eligible, io),
        Command::Score { .. } => commands::score::run(&cfg, io),
        Command::Eval { .. } => commands::eval::run(&cfg, io),
        Command::LossesCheck {
            fixture,
            trials,
            seed,
            min_size,
            max_size,
            ..
        } => commands::losses::run(
            &cfg,
            &commands::losses::CheckPlan {
                fixtures: fixture.clone(),
                trials: *trials,
                seed: *seed,
                min_size: *min_size,
                max_size: *max_size,
            },
            io,
        ),
        Command::Report {
            metrics,
            format,
            out,
            scores,
            ..
        } => commands::report::run(&cfg, metrics, *format, out.as_deref(), scores.as_deref(), io),
        Command::AuditServe { .. } => commands::serve::run(&cfg, io),
    }
}
