//! Caption F1 aggregation and length-hint conditioning.
//!
//! Statement extraction and consistency judging happen behind
//! [`StatementJudge`]; this module only aggregates the per-image counts.
//! Precision and recall are averaged over images first and F1 is the
//! harmonic mean of those averages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Characters per hint unit.
pub const HINT_DIVISOR: f64 = 15.0;
pub const DEFAULT_NOISE_SIGMA: f64 = 25.0;
pub const DEFAULT_INCLUDE_PROB: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaptionError {
    #[error("no judgments to aggregate")]
    Empty,
    #[error("no image has ground-truth statements, recall is undefined")]
    NoRecallImages,
    #[error("image {image_id}: {detail}")]
    InvalidJudgment { image_id: String, detail: String },
    #[error("character count must be non-negative, got {0}")]
    NegativeLength(i64),
    #[error("invalid hint parameter: {0}")]
    Parameter(String),
}

pub type Result<T> = std::result::Result<T, CaptionError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageJudgment {
    pub image_id: String,
    /// Atomic statements extracted from the generated caption.
    pub n_generated: u32,
    /// Generated statements judged consistent with the ground truth.
    pub n_consistent: u32,
    /// Statements in the ground-truth descriptions.
    pub n_gt: u32,
    /// Ground-truth statements covered by the generated caption.
    pub n_matched: u32,
    /// Length hint used when generating, for sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<u32>,
}

impl ImageJudgment {
    pub fn new(image_id: impl Into<String>, n_generated: u32, n_consistent: u32, n_gt: u32, n_matched: u32) -> Self {
        Self {
            image_id: image_id.into(),
            n_generated,
            n_consistent,
            n_gt,
            n_matched,
            hint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| {
            Err(CaptionError::InvalidJudgment {
                image_id: self.image_id.clone(),
                detail,
            })
        };
        if self.n_consistent > self.n_generated {
            return bad(format!("{} consistent of {} generated", self.n_consistent, self.n_generated));
        }
        if self.n_matched > self.n_gt {
            return bad(format!("{} matched of {} ground-truth", self.n_matched, self.n_gt));
        }
        Ok(())
    }

    /// Zero when nothing was generated.
    pub fn precision(&self) -> f64 {
        if self.n_generated == 0 {
            0.0
        } else {
            self.n_consistent as f64 / self.n_generated as f64
        }
    }

    pub fn recall(&self) -> Option<f64> {
        (self.n_gt > 0).then(|| self.n_matched as f64 / self.n_gt as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub images: usize,
    /// Images left out of the recall mean for having no ground-truth statements.
    pub recall_excluded: usize,
}

pub fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn cap_f1(judgments: &[ImageJudgment]) -> Result<CapF1> {
    if judgments.is_empty() {
        return Err(CaptionError::Empty);
    }
    // Fixed summation order regardless of input order.
    let mut ordered: Vec<&ImageJudgment> = judgments.iter().collect();
    ordered.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut recall_n = 0usize;
    for j in &ordered {
        j.validate()?;
        precision_sum += j.precision();
        match j.recall() {
            Some(r) => {
                recall_sum += r;
                recall_n += 1;
            }
            None => warn!("image {} has no ground-truth statements; excluded from recall", j.image_id),
        }
    }
    if recall_n == 0 {
        return Err(CaptionError::NoRecallImages);
    }
    let precision = precision_sum / ordered.len() as f64;
    let recall = recall_sum / recall_n as f64;
    Ok(CapF1 {
        precision,
        recall,
        f1: f1_of(precision, recall),
        images: ordered.len(),
        recall_excluded: ordered.len() - recall_n,
    })
}

/// Produces statement counts for one image.
pub trait StatementJudge {
    fn judge(&self, image_id: &str, generated: &str, references: &[String]) -> ImageJudgment;
}

/// Deterministic judge: statements are sentences, compared after
/// lower-casing and whitespace normalization. Statements from several
/// references are pooled as a set.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchJudge;

impl ExactMatchJudge {
    pub fn statements(text: &str) -> BTreeSet<String> {
        text.split(['.', '!', '?', '\n'])
            .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
            .filter(|s| !s.is_empty())
            .collect()
    }
}

impl StatementJudge for ExactMatchJudge {
    fn judge(&self, image_id: &str, generated: &str, references: &[String]) -> ImageJudgment {
        let generated = Self::statements(generated);
        let reference: BTreeSet<String> = references.iter().flat_map(|r| Self::statements(r)).collect();
        let overlap = generated.intersection(&reference).count() as u32;
        ImageJudgment::new(image_id, generated.len() as u32, overlap, reference.len() as u32, overlap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthHint {
    pub value: u32,
    pub present: bool,
}

impl LengthHint {
    pub fn absent() -> Self {
        Self { value: 0, present: false }
    }

    pub fn of(value: u32) -> Self {
        Self { value, present: true }
    }

    pub fn get(&self) -> Option<u32> {
        self.present.then_some(self.value)
    }
}

/// `floor(max(0, length) / 15)`.
pub fn hint_bucket(noisy_length: f64) -> u32 {
    (noisy_length.max(0.0) / HINT_DIVISOR).floor() as u32
}

/// Draws a noisy length hint. The inclusion draw happens first, then the
/// noise draw, so a fixed RNG state always yields the same hint.
pub fn make_length_hint<R: Rng + ?Sized>(
    char_count: i64,
    noise_sigma: f64,
    include_prob: f64,
    rng: &mut R,
) -> Result<LengthHint> {
    if char_count < 0 {
        return Err(CaptionError::NegativeLength(char_count));
    }
    if !(0.0..=1.0).contains(&include_prob) {
        return Err(CaptionError::Parameter(format!("include_prob {include_prob} not in [0, 1]")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(CaptionError::Parameter(format!("noise_sigma {noise_sigma} must be finite and >= 0")));
    }
    let present = rng.random::<f64>() < include_prob;
    let noise = if noise_sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, noise_sigma)
            .map_err(|e| CaptionError::Parameter(e.to_string()))?
            .sample(rng)
    };
    Ok(LengthHint {
        value: hint_bucket(char_count as f64 + noise),
        present,
    })
}

pub fn make_length_hint_seeded(char_count: i64, noise_sigma: f64, include_prob: f64, seed: u64) -> Result<LengthHint> {
    make_length_hint(char_count, noise_sigma, include_prob, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionStyle {
    LongCaption,
    Transcript,
}

impl CaptionStyle {
    pub fn tag(self) -> &'static str {
        match self {
            CaptionStyle::LongCaption => "long_caption",
            CaptionStyle::Transcript => "transcript",
        }
    }
}

impl std::str::FromStr for CaptionStyle {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "long_caption" => Ok(Self::LongCaption),
            "transcript" => Ok(Self::Transcript),
            other => Err(format!("unknown caption style {other:?}")),
        }
    }
}

impl fmt::Display for CaptionStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// `long_caption:` or, with a hint, `long_caption_83:`.
pub fn format_caption_prompt(style: CaptionStyle, hint: LengthHint) -> String {
    match hint.get() {
        Some(v) => format!("{}_{v}:", style.tag()),
        None => format!("{}:", style.tag()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hint: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub images: usize,
}

/// One averaged precision/recall row per hint value, ascending. Groups that
/// cannot be aggregated are skipped with a warning.
pub fn pr_sweep(groups: &BTreeMap<u32, Vec<ImageJudgment>>) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (&hint, judgments) in groups {
        match cap_f1(judgments) {
            Ok(m) => rows.push(SweepRow {
                hint,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                images: m.images,
            }),
            Err(e @ (CaptionError::Empty | CaptionError::NoRecallImages)) => {
                warn!("skipping hint {hint}: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

/// Buckets judgments by their `hint` field; judgments without one are dropped.
pub fn group_by_hint(judgments: &[ImageJudgment]) -> BTreeMap<u32, Vec<ImageJudgment>> {
    let mut groups: BTreeMap<u32, Vec<ImageJudgment>> = BTreeMap::new();
    for j in judgments {
        if let Some(h) = j.hint {
            groups.entry(h).or_default().push(j.clone());
        }
    }
    groups
}
