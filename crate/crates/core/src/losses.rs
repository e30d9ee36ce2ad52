//! Attention/amodal-mask alignment losses.
//!
//! The token loss penalizes attention mass falling outside each instance's
//! amodal mask; the pixel loss is a per-pixel binary cross-entropy between
//! the (probability-mapped) attention and the mask. Both come with analytic
//! gradients and a central-difference checker.
//!
//! # Fixture format
//!
//! ```text
//! # comment lines start with '#'
//! H W COUNT
//! <H rows of W attention values>   instance 1
//! <H rows of W mask bits (0/1)>
//! ...                              repeated COUNT times
//! ```

use std::fmt;
use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("attention map is {h}x{w} but carries {len} values")]
    Shape { h: usize, w: usize, len: usize },
    #[error("attention value {value} at index {index} is negative or non-finite")]
    InvalidAttention { index: usize, value: f64 },
    #[error("attention map sums to zero; the token loss ratio is undefined")]
    ZeroAttention,
    #[error("mask value {value} at index {index} is not 0 or 1")]
    NonBinaryMask { index: usize, value: f64 },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{maps} attention maps but {masks} masks")]
    CountMismatch { maps: usize, masks: usize },
    #[error("no instances given")]
    Empty,
    #[error("epsilon must lie in (0, 0.5), got {0}")]
    InvalidEpsilon(f64),
    #[error("fixture line {line}: {message}")]
    Fixture { line: usize, message: String },
}

/// Nonnegative `H x W` attention map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl AttentionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, LossError> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(LossError::Shape {
                h: height,
                w: width,
                len: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(LossError::InvalidAttention { index, value });
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(LossError::ZeroAttention);
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Multiplies every value by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self, LossError> {
        Self::new(
            self.height,
            self.width,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Binary `H x W` mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AmodalMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl AmodalMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self, LossError> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(LossError::Shape {
                h: height,
                w: width,
                len: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Accepts only exact 0.0 / 1.0 entries; soft masks are rejected.
    pub fn from_f64(height: usize, width: usize, values: &[f64]) -> Result<Self, LossError> {
        let bits = values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(LossError::NonBinaryMask { index, value: v })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub beta: f64,
}

impl LossWeights {
    /// Weights used for the EliGen-based variant.
    pub const ELIGEN: LossWeights = LossWeights {
        lambda: 1.0,
        beta: 1.0,
    };
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            beta: 1.0,
        }
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// How raw attention becomes per-pixel probabilities for the pixel loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbabilityMapping {
    /// Divide by the map maximum.
    #[default]
    MaxScale,
    /// Softmax over all pixels.
    Softmax,
    /// Values are already probabilities.
    AsGiven,
}

impl fmt::Display for ProbabilityMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbabilityMapping::MaxScale => "max-scale",
            ProbabilityMapping::Softmax => "softmax",
            ProbabilityMapping::AsGiven => "as-given",
        })
    }
}

pub fn to_probabilities(map: &AttentionMap, mapping: ProbabilityMapping) -> Vec<f64> {
    match mapping {
        ProbabilityMapping::MaxScale => {
            let max = map.values.iter().copied().fold(0.0, f64::max);
            map.values.iter().map(|v| v / max).collect()
        }
        ProbabilityMapping::Softmax => {
            let max = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = map.values.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        }
        ProbabilityMapping::AsGiven => map.values.clone(),
    }
}

fn check_pairs(maps: &[AttentionMap], masks: &[AmodalMask]) -> Result<(), LossError> {
    if maps.is_empty() {
        return Err(LossError::Empty);
    }
    if maps.len() != masks.len() {
        return Err(LossError::CountMismatch {
            maps: maps.len(),
            masks: masks.len(),
        });
    }
    for (a, m) in maps.iter().zip(masks) {
        check_dims(a, m)?;
    }
    Ok(())
}

fn check_dims(a: &AttentionMap, m: &AmodalMask) -> Result<(), LossError> {
    if a.height != m.height || a.width != m.width {
        return Err(LossError::DimensionMismatch(a.height, a.width, m.height, m.width));
    }
    Ok(())
}

/// `(mass inside mask, total mass)`, summed in index order.
fn masses(values: &[f64], mask: &[bool]) -> (f64, f64) {
    let mut inside = 0.0;
    let mut total = 0.0;
    for (&v, &m) in values.iter().zip(mask) {
        if m {
            inside += v;
        }
        total += v;
    }
    (inside, total)
}

fn token_term(values: &[f64], mask: &[bool]) -> f64 {
    let (inside, total) = masses(values, mask);
    1.0 - inside / total
}

/// Mean over instances of the fraction of attention mass outside the mask.
pub fn token_loss(maps: &[AttentionMap], masks: &[AmodalMask]) -> Result<f64, LossError> {
    check_pairs(maps, masks)?;
    let sum: f64 = maps
        .iter()
        .zip(masks)
        .map(|(a, m)| token_term(&a.values, &m.values))
        .sum();
    Ok(sum / maps.len() as f64)
}

/// Gradient of [`token_loss`] with respect to every attention value.
pub fn token_loss_grad(maps: &[AttentionMap], masks: &[AmodalMask]) -> Result<Vec<Vec<f64>>, LossError> {
    check_pairs(maps, masks)?;
    let n = maps.len() as f64;
    Ok(maps
        .iter()
        .zip(masks)
        .map(|(a, m)| {
            let (inside, total) = masses(&a.values, &m.values);
            let t2 = total * total;
            m.values
                .iter()
                .map(|&bit| {
                    let own = if bit { total } else { 0.0 };
                    (inside - own) / t2 / n
                })
                .collect()
        })
        .collect())
}

fn check_epsilon(epsilon: f64) -> Result<(), LossError> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    Ok(())
}

fn pixel_term(probs: &[f64], mask: &[bool], epsilon: f64) -> f64 {
    let sum: f64 = probs
        .iter()
        .zip(mask)
        .map(|(&p, &m)| {
            let a = p.clamp(epsilon, 1.0 - epsilon);
            if m {
                -a.ln()
            } else {
                -(1.0 - a).ln()
            }
        })
        .sum();
    sum / probs.len() as f64
}

/// Mean per-pixel binary cross-entropy. `probs` should already be
/// probabilities; values are clamped to `[epsilon, 1 - epsilon]`.
pub fn pixel_loss(probs: &AttentionMap, mask: &AmodalMask, epsilon: f64) -> Result<f64, LossError> {
    check_dims(probs, mask)?;
    check_epsilon(epsilon)?;
    Ok(pixel_term(&probs.values, &mask.values, epsilon))
}

/// Gradient of the instance-averaged pixel loss with respect to the
/// probabilities. Zero where the clamp is active.
pub fn pixel_loss_grad(
    probs: &[AttentionMap],
    masks: &[AmodalMask],
    epsilon: f64,
) -> Result<Vec<Vec<f64>>, LossError> {
    check_pairs(probs, masks)?;
    check_epsilon(epsilon)?;
    let n = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(masks)
        .map(|(a, m)| {
            let pixels = a.values.len() as f64;
            a.values
                .iter()
                .zip(&m.values)
                .map(|(&p, &bit)| {
                    if p < epsilon || p > 1.0 - epsilon {
                        return 0.0;
                    }
                    let g = if bit { -1.0 / p } else { 1.0 / (1.0 - p) };
                    g / pixels / n
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelOptions {
    pub epsilon: f64,
    pub mapping: ProbabilityMapping,
}

impl Default for PixelOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            mapping: ProbabilityMapping::MaxScale,
        }
    }
}

/// The weighted objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ldm: f64,
    pub token: f64,
    pub pixel: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(ldm: f64, token: f64, pixel: f64, weights: LossWeights) -> Self {
        Self {
            ldm,
            token,
            pixel,
            total: ldm + weights.lambda * token + weights.beta * pixel,
        }
    }
}

/// `ldm + lambda * token + beta * pixel`, with the pixel loss averaged over
/// instances after mapping raw attention to probabilities.
pub fn total_loss(
    ldm: f64,
    maps: &[AttentionMap],
    masks: &[AmodalMask],
    weights: LossWeights,
    pixel: PixelOptions,
) -> Result<LossBreakdown, LossError> {
    let token = token_loss(maps, masks)?;
    check_epsilon(pixel.epsilon)?;
    let pixel_mean = maps
        .iter()
        .zip(masks)
        .map(|(a, m)| pixel_term(&to_probabilities(a, pixel.mapping), &m.values, pixel.epsilon))
        .sum::<f64>()
        / maps.len() as f64;
    Ok(LossBreakdown::compose(ldm, token, pixel_mean, weights))
}

/// Elementwise mean of the per-token maps of one instance.
pub fn eligen_average_attention(token_maps: &[AttentionMap]) -> Result<AttentionMap, LossError> {
    let first = token_maps.first().ok_or(LossError::Empty)?;
    let mut acc = vec![0.0; first.values.len()];
    for map in token_maps {
        if map.height != first.height || map.width != first.width {
            return Err(LossError::DimensionMismatch(
                first.height,
                first.width,
                map.height,
                map.width,
            ));
        }
        for (a, v) in acc.iter_mut().zip(&map.values) {
            *a += v;
        }
    }
    let count = token_maps.len() as f64;
    AttentionMap::new(
        first.height,
        first.width,
        acc.into_iter().map(|v| v / count).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Token,
    Pixel,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Token => "token",
            LossKind::Pixel => "pixel",
        })
    }
}

/// Largest relative disagreement between the analytic gradient and a central
/// difference with step `step`, over every attention coordinate:
/// `|analytic - numeric| / (|numeric| + 1e-8)`.
///
/// For [`LossKind::Pixel`] the maps are taken as probabilities directly.
pub fn finite_diff_check(
    kind: LossKind,
    maps: &[AttentionMap],
    masks: &[AmodalMask],
    step: f64,
) -> Result<f64, LossError> {
    check_pairs(maps, masks)?;
    let epsilon = DEFAULT_EPSILON;
    let analytic = match kind {
        LossKind::Token => token_loss_grad(maps, masks)?,
        LossKind::Pixel => pixel_loss_grad(maps, masks, epsilon)?,
    };
    let n = maps.len() as f64;
    let instance_loss = |values: &[f64], mask: &[bool]| match kind {
        LossKind::Token => token_term(values, mask) / n,
        LossKind::Pixel => pixel_term(values, mask, epsilon) / n,
    };

    let mut worst = 0.0f64;
    for (k, (map, mask)) in maps.iter().zip(masks).enumerate() {
        let mut values = map.values.clone();
        for u in 0..values.len() {
            let orig = values[u];
            values[u] = orig + step;
            let plus = instance_loss(&values, &mask.values);
            values[u] = orig - step;
            let minus = instance_loss(&values, &mask.values);
            values[u] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[k][u] - numeric).abs() / (numeric.abs() + 1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Maps and masks read from a fixture file.
#[derive(Debug, Clone, PartialEq)]
pub struct LossFixture {
    pub maps: Vec<AttentionMap>,
    pub masks: Vec<AmodalMask>,
}

pub fn parse_fixture<R: BufRead>(reader: R) -> Result<LossFixture, LossError> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| LossError::Fixture {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let nums = t
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| LossError::Fixture {
                line: idx + 1,
                message: e.to_string(),
            })?;
        rows.push((idx + 1, nums));
    }
    let mut it = rows.into_iter();
    let (hline, header) = it.next().ok_or(LossError::Fixture {
        line: 1,
        message: "missing 'H W COUNT' header".into(),
    })?;
    let dims: Vec<usize> = header
        .iter()
        .filter(|v| v.fract() == 0.0 && **v >= 0.0)
        .map(|&v| v as usize)
        .collect();
    if header.len() != 3 || dims.len() != 3 {
        return Err(LossError::Fixture {
            line: hline,
            message: "header must be three nonnegative integers 'H W COUNT'".into(),
        });
    }
    let (h, w, count) = (dims[0], dims[1], dims[2]);
    let mut take_block = |what: &str| -> Result<Vec<f64>, LossError> {
        let mut block = Vec::with_capacity(h * w);
        for _ in 0..h {
            let (line, row) = it.next().ok_or_else(|| LossError::Fixture {
                line: hline,
                message: format!("fixture ends inside a {what} block"),
            })?;
            if row.len() != w {
                return Err(LossError::Fixture {
                    line,
                    message: format!("expected {w} values, found {}", row.len()),
                });
            }
            block.extend(row);
        }
        Ok(block)
    };
    let mut fixture = LossFixture {
        maps: Vec::with_capacity(count),
        masks: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let map = take_block("map")?;
        let mask = take_block("mask")?;
        fixture.maps.push(AttentionMap::new(h, w, map)?);
        fixture.masks.push(AmodalMask::from_f64(h, w, &mask)?);
    }
    if let Some((line, _)) = it.next() {
        return Err(LossError::Fixture {
            line,
            message: "trailing data after the last instance".into(),
        });
    }
    Ok(fixture)
}
