//! Resolved configuration: TOML file, then environment, then flags.
//!
//! Relative paths in a config file are taken relative to the file's
//! directory; paths given as flags are relative to the working directory.
//! Path templates may contain `{seed}`.

use crate::CliError;
use l2i_core::annotations::PairThresholds;
use l2i_core::losses::{LossWeights, ProbabilityMapping, DEFAULT_EPSILON};
use l2i_core::matching::{MatchOptions, MatchScope, PairSource};
use l2i_core::overlayscore::DifficultyThresholds;
use l2i_core::reporting::{AggregateOptions, Pooling, StdKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const EMBED_URL_ENV: &str = "L2I_EMBED_URL";
pub const DEFAULT_SEEDS: [&str; 3] = ["20251202", "20251203", "20251204"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub thresholds: Thresholds,
    pub embedding: Embedding,
    pub score: Score,
    pub eval: Eval,
    pub losses: Losses,
    pub audit: Audit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub annotations: Option<PathBuf>,
    /// Text embeddings (captions).
    pub embeddings: Option<PathBuf>,
    /// Per-seed image embeddings; keys are `record_id` and `record_id#instance`.
    pub image_embeddings: Option<String>,
    pub detections: Option<String>,
    pub judgments: Option<String>,
    /// Scored file read by `eval` and `audit-serve`; defaults to
    /// `output_dir/scored.jsonl`.
    pub scored: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub iou_min: f64,
    pub area_min: f64,
    pub simple_regular: f64,
    pub regular_complex: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let p = PairThresholds::default();
        let d = DifficultyThresholds::default();
        Self {
            iou_min: p.iou_min,
            area_min: p.area_min,
            simple_regular: d.simple_regular(),
            regular_complex: d.regular_complex(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Embedding {
    pub service_url: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub clip_scale: f64,
}

impl Default for Embedding {
    fn default() -> Self {
        Self {
            service_url: None,
            timeout_secs: 10.0,
            retries: 2,
            clip_scale: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Score {
    pub clamp_negative_cosine: bool,
    pub bin_width: f64,
    /// Score only records with 1..=10 valid overlap pairs.
    pub eligible_only: bool,
}

impl Default for Score {
    fn default() -> Self {
        Self {
            clamp_negative_cosine: false,
            bin_width: 0.1,
            eligible_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeArg {
    PerCategory,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PairsArg {
    Relationships,
    ValidOverlaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingArg {
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StdArg {
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Eval {
    pub seeds: Vec<String>,
    pub match_scope: ScopeArg,
    pub min_iou: Option<f64>,
    pub pairs: PairsArg,
    pub pooling: PoolingArg,
    pub std: StdArg,
    pub percent: bool,
    pub include_fid: bool,
}

impl Eval {
    pub fn pooling_label(&self) -> &'static str {
        match self.pooling {
            PoolingArg::Macro => "macro",
            PoolingArg::Micro => "micro",
        }
    }
}

impl Default for Eval {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS.map(String::from).to_vec(),
            match_scope: ScopeArg::PerCategory,
            min_iou: None,
            pairs: PairsArg::Relationships,
            pooling: PoolingArg::Macro,
            std: StdArg::Population,
            percent: true,
            include_fid: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MappingArg {
    MaxScale,
    Softmax,
    AsGiven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Losses {
    pub lambda: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub mapping: MappingArg,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for Losses {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda: w.lambda,
            beta: w.beta,
            epsilon: DEFAULT_EPSILON,
            mapping: MappingArg::MaxScale,
            step: 1e-4,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Audit {
    pub bind: String,
    pub log: Option<PathBuf>,
    pub export_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub checks: Vec<String>,
}

impl Default for Audit {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            log: None,
            export_dir: None,
            ui_dir: None,
            checks: l2i_audit::DEFAULT_CHECKS.map(String::from).to_vec(),
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            paths: Paths {
                output_dir: PathBuf::from("out"),
                ..Default::default()
            },
            thresholds: Thresholds::default(),
            embedding: Embedding::default(),
            score: Score::default(),
            eval: Eval::default(),
            losses: Losses::default(),
            audit: Audit::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_template(base: &Path, t: &mut String) {
    if Path::new(t.as_str()).is_relative() {
        *t = base.join(t.as_str()).to_string_lossy().into_owned();
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: Config = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for x in [&mut p.annotations, &mut p.embeddings, &mut p.scored].into_iter().flatten() {
            rebase(base, x);
        }
        for x in [&mut p.image_embeddings, &mut p.detections, &mut p.judgments].into_iter().flatten() {
            rebase_template(base, x);
        }
        rebase(base, &mut p.output_dir);
        let a = &mut cfg.audit;
        for x in [&mut a.log, &mut a.export_dir, &mut a.ui_dir].into_iter().flatten() {
            rebase(base, x);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let t = &self.thresholds;
        if !(t.iou_min.is_finite() && (0.0..1.0).contains(&t.iou_min)) {
            return bad(format!("thresholds.iou_min must lie in [0, 1), got {}", t.iou_min));
        }
        if !(t.area_min.is_finite() && (0.0..1.0).contains(&t.area_min)) {
            return bad(format!("thresholds.area_min must lie in [0, 1), got {}", t.area_min));
        }
        DifficultyThresholds::new(t.simple_regular, t.regular_complex)
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.embedding.timeout_secs > 0.0 && self.embedding.timeout_secs.is_finite()) {
            return bad("embedding.timeout_secs must be positive".into());
        }
        if !(self.embedding.clip_scale > 0.0 && self.embedding.clip_scale.is_finite()) {
            return bad("embedding.clip_scale must be positive".into());
        }
        if !(self.score.bin_width > 0.0 && self.score.bin_width.is_finite()) {
            return bad("score.bin_width must be positive".into());
        }
        if self.eval.seeds.is_empty() || self.eval.seeds.iter().any(|s| s.trim().is_empty()) {
            return bad("eval.seeds must list at least one non-empty label".into());
        }
        if let Some(g) = self.eval.min_iou {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("eval.min_iou must lie in [0, 1], got {g}"));
            }
        }
        let l = &self.losses;
        if !(l.lambda >= 0.0 && l.lambda.is_finite() && l.beta >= 0.0 && l.beta.is_finite()) {
            return bad("losses.lambda and losses.beta must be finite and nonnegative".into());
        }
        if !(l.epsilon > 0.0 && l.epsilon < 0.5) {
            return bad("losses.epsilon must lie in (0, 0.5)".into());
        }
        if !(l.step > 0.0 && l.tolerance > 0.0) {
            return bad("losses.step and losses.tolerance must be positive".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn pair_thresholds(&self) -> PairThresholds {
        PairThresholds {
            iou_min: self.thresholds.iou_min,
            area_min: self.thresholds.area_min,
        }
    }

    pub fn difficulty_thresholds(&self) -> DifficultyThresholds {
        DifficultyThresholds::new(self.thresholds.simple_regular, self.thresholds.regular_complex)
            .expect("validated")
    }

    pub fn match_options(&self) -> MatchOptions {
        MatchOptions {
            scope: match self.eval.match_scope {
                ScopeArg::PerCategory => MatchScope::PerCategory,
                ScopeArg::Global => MatchScope::Global,
            },
            min_iou: self.eval.min_iou,
        }
    }

    pub fn pair_source(&self) -> PairSource {
        match self.eval.pairs {
            PairsArg::Relationships => PairSource::Relationships,
            PairsArg::ValidOverlaps => PairSource::ValidOverlaps(self.pair_thresholds()),
        }
    }

    pub fn aggregate_options(&self) -> AggregateOptions {
        AggregateOptions {
            std: match self.eval.std {
                StdArg::Population => StdKind::Population,
                StdArg::Sample => StdKind::Sample,
            },
            pooling: match self.eval.pooling {
                PoolingArg::Macro => Pooling::Macro,
                PoolingArg::Micro => Pooling::Micro,
            },
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.losses.lambda,
            beta: self.losses.beta,
        }
    }

    pub fn probability_mapping(&self) -> ProbabilityMapping {
        match self.losses.mapping {
            MappingArg::MaxScale => ProbabilityMapping::MaxScale,
            MappingArg::Softmax => ProbabilityMapping::Softmax,
            MappingArg::AsGiven => ProbabilityMapping::AsGiven,
        }
    }

    pub fn scored_path(&self) -> PathBuf {
        self.paths
            .scored
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("scored.jsonl"))
    }

    pub fn require<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{name} is not set (config file or flag)")))
    }
}

pub fn expand_seed(template: &str, seed: &str) -> PathBuf {
    PathBuf::from(template.replace("{seed}", seed))
}
