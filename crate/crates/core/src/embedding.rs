//! Caption and crop embeddings: a precomputed store, an optional HTTP
//! embedding service used as fallback, cosine similarity and CLIP scores.
//!
//! # Store file
//!
//! ```text
//! #embeddings<TAB>model=ViT-B/32<TAB>dim=512<TAB>encoding=base64
//! <little-endian f32 payload, base64 or hex><TAB><key>
//! ...
//! ```
//!
//! Keys are everything after the first tab on a line, NFC-normalized. Text
//! keys are caption strings; crop keys are `record_id#instance_name` and
//! whole-image keys are the bare record id.

use base64::Engine;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::sync::{Arc, RwLock};
use std::time::Duration;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_DIM: usize = 512;
pub const DEFAULT_MODEL: &str = "ViT-B/32";

/// Vectors whose norm is already this close to one are stored as given, so
/// that a written store reloads bit for bit.
const UNIT_NORM_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("zero-norm embedding for key '{0}'")]
    ZeroNorm(String),
    #[error("non-finite value in embedding for key '{0}'")]
    NonFinite(String),
    #[error("dimension mismatch for key '{key}': expected {expected}, found {found}")]
    DimensionMismatch {
        key: String,
        expected: usize,
        found: usize,
    },
    #[error("cannot compare embeddings of dimension {0} and {1}")]
    IncompatibleDims(usize, usize),
    #[error("duplicate embedding key '{0}'")]
    DuplicateKey(String),
    #[error("invalid embedding key {0:?}")]
    InvalidKey(String),
    #[error("embedding unavailable: {0}")]
    Unavailable(String),
    #[error("embedding service failed for '{key}': {message}")]
    Service { key: String, message: String },
    #[error("store format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Unit-norm dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Arc<[f32]>,
    raw_norm: f64,
}

fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

impl EmbeddingVector {
    /// Normalizes `values` to unit length. `key` only labels errors.
    pub fn normalized(key: &str, values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(key.to_owned()));
        }
        let raw_norm = l2_norm(&values);
        if raw_norm == 0.0 {
            return Err(EmbeddingError::ZeroNorm(key.to_owned()));
        }
        let values: Arc<[f32]> = if (raw_norm - 1.0).abs() <= UNIT_NORM_SLACK {
            values.into()
        } else {
            values
                .iter()
                .map(|&v| (f64::from(v) / raw_norm) as f32)
                .collect()
        };
        Ok(Self { values, raw_norm })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Norm of the vector as it was supplied, before normalization.
    pub fn raw_norm(&self) -> f64 {
        self.raw_norm
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::IncompatibleDims(a.dim(), b.dim()));
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipScoreConfig {
    pub scale: f64,
    /// Floor negative cosines at zero.
    pub clamp_negative: bool,
}

impl Default for ClipScoreConfig {
    fn default() -> Self {
        Self {
            scale: 100.0,
            clamp_negative: true,
        }
    }
}

/// `scale * max(cos, 0)` under the default configuration.
pub fn clip_score(
    image: &EmbeddingVector,
    text: &EmbeddingVector,
    config: ClipScoreConfig,
) -> Result<f64, EmbeddingError> {
    let c = cosine(image, text)?;
    let c = if config.clamp_negative { c.max(0.0) } else { c };
    Ok(config.scale * c)
}

/// Canonical form of a store key: Unicode NFC.
pub fn canonical_key(key: &str) -> String {
    key.nfc().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PayloadEncoding {
    #[default]
    Base64,
    Hex,
}

impl PayloadEncoding {
    fn as_str(&self) -> &'static str {
        match self {
            PayloadEncoding::Base64 => "base64",
            PayloadEncoding::Hex => "hex",
        }
    }

    fn encode(&self, values: &[f32]) -> String {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        match self {
            PayloadEncoding::Base64 => base64::engine::general_purpose::STANDARD.encode(bytes),
            PayloadEncoding::Hex => hex::encode(bytes),
        }
    }

    fn decode(&self, text: &str) -> Result<Vec<f32>, String> {
        let bytes = match self {
            PayloadEncoding::Base64 => base64::engine::general_purpose::STANDARD
                .decode(text)
                .map_err(|e| e.to_string())?,
            PayloadEncoding::Hex => hex::decode(text).map_err(|e| e.to_string())?,
        };
        if bytes.len() % 4 != 0 {
            return Err(format!("payload of {} bytes is not a multiple of 4", bytes.len()));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Keyed collection of unit-norm vectors sharing one dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    model: String,
    dim: usize,
    entries: HashMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(model: impl Into<String>, dim: usize) -> Self {
        Self {
            model: model.into(),
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.entries.get(&canonical_key(key))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn check_key(key: &str) -> Result<String, EmbeddingError> {
        if key.is_empty() || key.contains(['\n', '\r']) {
            return Err(EmbeddingError::InvalidKey(key.to_owned()));
        }
        Ok(canonical_key(key))
    }

    /// Inserts a raw vector, normalizing it. Duplicate keys are rejected.
    pub fn insert(&mut self, key: &str, values: Vec<f32>) -> Result<(), EmbeddingError> {
        let key = Self::check_key(key)?;
        if self.entries.contains_key(&key) {
            return Err(EmbeddingError::DuplicateKey(key));
        }
        let v = self.checked_vector(&key, values)?;
        self.entries.insert(key, v);
        Ok(())
    }

    /// Inserts or replaces; used for cache fills.
    fn upsert(&mut self, key: String, v: EmbeddingVector) {
        self.entries.insert(key, v);
    }

    fn checked_vector(&self, key: &str, values: Vec<f32>) -> Result<EmbeddingVector, EmbeddingError> {
        if values.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                key: key.to_owned(),
                expected: self.dim,
                found: values.len(),
            });
        }
        EmbeddingVector::normalized(key, values)
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self, EmbeddingError> {
        let mut lines = reader.lines().enumerate();
        let (model, dim, encoding) = loop {
            match lines.next() {
                None => {
                    return Err(EmbeddingError::Format {
                        line: 1,
                        message: "missing header".into(),
                    })
                }
                Some((_, line)) if line.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
                Some((idx, line)) => break parse_header(idx + 1, &line?)?,
            }
        };
        let mut store = EmbeddingStore::new(model, dim);
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (payload, key) = line.split_once('\t').ok_or_else(|| EmbeddingError::Format {
                line: idx + 1,
                message: "expected '<payload>\\t<key>'".into(),
            })?;
            let values = encoding
                .decode(payload.trim())
                .map_err(|message| EmbeddingError::Format {
                    line: idx + 1,
                    message: format!("key '{key}': {message}"),
                })?;
            store.insert(key, values)?;
        }
        Ok(store)
    }

    /// Writes the store with keys in sorted order.
    pub fn write<W: Write>(&self, mut writer: W, encoding: PayloadEncoding) -> io::Result<()> {
        writeln!(
            writer,
            "#embeddings\tmodel={}\tdim={}\tencoding={}",
            self.model,
            self.dim,
            encoding.as_str()
        )?;
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        for key in keys {
            writeln!(writer, "{}\t{}", encoding.encode(self.entries[key].values()), key)?;
        }
        Ok(())
    }
}

fn parse_header(line_no: usize, line: &str) -> Result<(String, usize, PayloadEncoding), EmbeddingError> {
    let err = |message: String| EmbeddingError::Format {
        line: line_no,
        message,
    };
    let mut fields = line.split('\t');
    if fields.next() != Some("#embeddings") {
        return Err(err("header must start with '#embeddings'".into()));
    }
    let (mut model, mut dim, mut encoding) = (None, None, PayloadEncoding::Base64);
    for field in fields {
        match field.split_once('=') {
            Some(("model", v)) => model = Some(v.to_owned()),
            Some(("dim", v)) => {
                dim = Some(v.parse::<usize>().map_err(|e| err(format!("bad dim '{v}': {e}")))?)
            }
            Some(("encoding", "base64")) => encoding = PayloadEncoding::Base64,
            Some(("encoding", "hex")) => encoding = PayloadEncoding::Hex,
            _ => return Err(err(format!("unrecognized header field '{field}'"))),
        }
    }
    let dim = dim.ok_or_else(|| err("header lacks dim".into()))?;
    if dim == 0 {
        return Err(err("dim must be positive".into()));
    }
    Ok((model.unwrap_or_else(|| DEFAULT_MODEL.to_owned()), dim, encoding))
}

/// Keyed access to embeddings, as used by the scorers.
pub trait EmbeddingLookup: Sync {
    fn lookup(&self, key: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

impl EmbeddingLookup for EmbeddingStore {
    fn lookup(&self, key: &str) -> Result<EmbeddingVector, EmbeddingError> {
        self.get(key)
            .cloned()
            .ok_or_else(|| EmbeddingError::Unavailable(key.to_owned()))
    }
}

impl EmbeddingLookup for EmbeddingProvider {
    fn lookup(&self, key: &str) -> Result<EmbeddingVector, EmbeddingError> {
        self.get_embedding(key)
    }
}

/// Something that can embed text on demand.
pub trait EmbeddingSource: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError>;
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    #[allow(dead_code)]
    model: String,
    dim: usize,
    embeddings: Vec<Vec<f32>>,
}

/// Blocking client for an `/embed` HTTP endpoint.
#[derive(Debug, Clone)]
pub struct EmbeddingClient {
    endpoint: String,
    retries: u32,
    http: reqwest::blocking::Client,
}

impl EmbeddingClient {
    /// `base_url` is the service root; requests go to `{base_url}/embed`.
    pub fn new(base_url: &str, timeout: Duration, retries: u32) -> Result<Self, EmbeddingError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbeddingError::Service {
                key: base_url.to_owned(),
                message: e.to_string(),
            })?;
        Ok(Self {
            endpoint: format!("{}/embed", base_url.trim_end_matches('/')),
            retries,
            http,
        })
    }

    fn attempt(&self, texts: &[String]) -> Result<EmbedResponse, (bool, String)> {
        let resp = self
            .http
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err((
                status.is_server_error(),
                format!("HTTP {}: {}", status.as_u16(), body.trim()),
            ));
        }
        resp.json::<EmbedResponse>()
            .map_err(|e| (false, format!("bad response body: {e}")))
    }
}

impl EmbeddingSource for EmbeddingClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let key = texts.first().cloned().unwrap_or_default();
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.attempt(texts) {
                Ok(resp) => {
                    if resp.embeddings.len() != texts.len() {
                        return Err(EmbeddingError::Service {
                            key,
                            message: format!(
                                "asked for {} embeddings, got {}",
                                texts.len(),
                                resp.embeddings.len()
                            ),
                        });
                    }
                    if let Some((text, v)) = texts
                        .iter()
                        .zip(&resp.embeddings)
                        .find(|(_, v)| v.len() != resp.dim)
                    {
                        return Err(EmbeddingError::DimensionMismatch {
                            key: text.clone(),
                            expected: resp.dim,
                            found: v.len(),
                        });
                    }
                    return Ok(resp.embeddings);
                }
                Err((retryable, message)) => {
                    last = message;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(EmbeddingError::Service { key, message: last })
    }
}

/// Store lookups with an optional fetch-and-cache fallback.
pub struct EmbeddingProvider {
    store: RwLock<EmbeddingStore>,
    fallback: Option<Box<dyn EmbeddingSource>>,
}

impl EmbeddingProvider {
    pub fn new(store: EmbeddingStore) -> Self {
        Self {
            store: RwLock::new(store),
            fallback: None,
        }
    }

    pub fn with_fallback(store: EmbeddingStore, fallback: Box<dyn EmbeddingSource>) -> Self {
        Self {
            store: RwLock::new(store),
            fallback: Some(fallback),
        }
    }

    pub fn has_fallback(&self) -> bool {
        self.fallback.is_some()
    }

    pub fn dim(&self) -> usize {
        self.store.read().unwrap().dim()
    }

    /// Returns the stored vector; on a miss, queries the fallback (if any) and
    /// caches the result.
    pub fn get_embedding(&self, key: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if key.is_empty() {
            return Err(EmbeddingError::InvalidKey(key.to_owned()));
        }
        let canonical = canonical_key(key);
        if let Some(v) = self.store.read().unwrap().entries.get(&canonical) {
            return Ok(v.clone());
        }
        let Some(fallback) = &self.fallback else {
            return Err(EmbeddingError::Unavailable(key.to_owned()));
        };
        let fetched = fallback
            .embed(std::slice::from_ref(&canonical))
            .map_err(|e| match e {
                EmbeddingError::Service { message, .. } => EmbeddingError::Service {
                    key: key.to_owned(),
                    message,
                },
                other => other,
            })?
            .pop()
            .ok_or_else(|| EmbeddingError::Unavailable(key.to_owned()))?;
        let mut store = self.store.write().unwrap();
        let v = store.checked_vector(&canonical, fetched)?;
        store.upsert(canonical, v.clone());
        Ok(v)
    }

    /// Snapshot of the current store, including cached fetches.
    pub fn snapshot(&self) -> EmbeddingStore {
        self.store.read().unwrap().clone()
    }
}
