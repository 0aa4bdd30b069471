//! Fine-tuning data mixture construction.
//!
//! Covers square-root sampling rates, style tags, packing every annotation
//! of an image into one sequence behind a block attention mask, and the
//! cross-device loss normalization.
//!
//! In a packed sequence the image tokens come first. A token of segment `s`
//! sees every image token plus the earlier tokens of `s` (causal), and
//! nothing from other segments. Image tokens see earlier image tokens only.
//! That is exactly what each token would see if its annotation had been
//! paired with the image alone.

use std::collections::BTreeMap;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_SEQUENCE_LENGTH: usize = 2304;
pub const MAX_POINT_COUNT: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("mixture has no datasets")]
    EmptySpec,
    #[error("dataset {name}: {detail}")]
    InvalidDataset { name: String, detail: String },
    #[error("image needs {image_tokens} tokens but the sequence limit is {max_len}")]
    Unpackable { image_tokens: usize, max_len: usize },
    #[error("no packed examples")]
    EmptyDataset,
    #[error("no devices")]
    NoDevices,
    #[error("every device has zero loss tokens")]
    NoLossTokens,
}

pub type Result<T> = std::result::Result<T, MixtureError>;

fn default_multiplier() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub size: u64,
    #[serde(default = "default_multiplier")]
    pub weight_multiplier: f64,
    /// Datasets sharing a group label get equal shares of the group's total weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance_group: Option<String>,
}

impl DatasetEntry {
    pub fn new(name: impl Into<String>, size: u64) -> Self {
        Self {
            name: name.into(),
            size,
            weight_multiplier: 1.0,
            balance_group: None,
        }
    }

    pub fn with_multiplier(mut self, m: f64) -> Self {
        self.weight_multiplier = m;
        self
    }

    pub fn in_group(mut self, group: impl Into<String>) -> Self {
        self.balance_group = Some(group.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub datasets: Vec<DatasetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRate {
    pub name: String,
    /// `multiplier * sqrt(size)` after group balancing, before normalization.
    pub weight: f64,
    pub rate: f64,
}

pub fn mixture_rates(spec: &MixtureSpec) -> Result<Vec<MixtureRate>> {
    if spec.datasets.is_empty() {
        return Err(MixtureError::EmptySpec);
    }
    let mut weights = Vec::with_capacity(spec.datasets.len());
    for d in &spec.datasets {
        let bad = |detail: &str| {
            Err(MixtureError::InvalidDataset {
                name: d.name.clone(),
                detail: detail.to_string(),
            })
        };
        if d.size == 0 {
            return bad("size must be at least 1");
        }
        if !(d.weight_multiplier > 0.0 && d.weight_multiplier.is_finite()) {
            return bad("weight_multiplier must be positive and finite");
        }
        weights.push(d.weight_multiplier * (d.size as f64).sqrt());
    }

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in spec.datasets.iter().enumerate() {
        if let Some(g) = &d.balance_group {
            groups.entry(g).or_default().push(i);
        }
    }
    for members in groups.values() {
        let total: f64 = members.iter().map(|&i| weights[i]).sum();
        let share = total / members.len() as f64;
        for &i in members {
            weights[i] = share;
        }
    }

    let total: f64 = weights.iter().sum();
    Ok(spec
        .datasets
        .iter()
        .zip(weights)
        .map(|(d, w)| MixtureRate {
            name: d.name.clone(),
            weight: w,
            rate: w / total,
        })
        .collect())
}

/// Draws `n` dataset indices according to `rates`.
pub fn sample_datasets(rates: &[MixtureRate], n: usize, seed: u64) -> Vec<usize> {
    let dist = WeightedIndex::new(rates.iter().map(|r| r.rate)).expect("rates are positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// Prefixes a question with a dataset style tag such as `vqa2:`.
pub fn apply_style_tag(question: &str, tag: Option<&str>) -> String {
    match tag {
        Some(t) => format!("{t} {question}"),
        None => question.to_string(),
    }
}

/// The most frequent answer; ties are broken uniformly at random.
pub fn most_common_answer<'a, R: Rng + ?Sized>(answers: &'a [String], rng: &mut R) -> Option<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(a).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    let tied: Vec<&str> = counts.into_iter().filter(|&(_, c)| c == best).map(|(a, _)| a).collect();
    tied.choose(rng).copied()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedSegment {
    /// Position of the annotation in the input list.
    pub annotation_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_id: Option<String>,
    /// First token of the segment within the packed sequence.
    pub offset: usize,
    pub prompt_len: usize,
    pub response_len: usize,
    pub truncated: bool,
    pub original_prompt_len: usize,
    pub original_response_len: usize,
}

impl PackedSegment {
    pub fn len(&self) -> usize {
        self.prompt_len + self.response_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> usize {
        self.offset + self.len()
    }
}

/// Token ranges visible to a segment's tokens: the image block plus the
/// segment's own prefix (causal within it).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityBlock {
    pub segment: usize,
    pub image: [usize; 2],
    pub own: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedExample {
    pub image_id: String,
    pub image_token_count: usize,
    pub segments: Vec<PackedSegment>,
}

impl PackedExample {
    pub fn len(&self) -> usize {
        self.image_token_count + self.segments.iter().map(PackedSegment::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn any_truncated(&self) -> bool {
        self.segments.iter().any(|s| s.truncated)
    }

    pub fn visibility(&self) -> Vec<VisibilityBlock> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| VisibilityBlock {
                segment: i,
                image: [0, self.image_token_count],
                own: [s.offset, s.end()],
            })
            .collect()
    }

    /// Segment index owning position `pos`, `None` for image tokens.
    pub fn segment_at(&self, pos: usize) -> Option<usize> {
        if pos < self.image_token_count {
            return None;
        }
        self.segments.iter().position(|s| pos >= s.offset && pos < s.end())
    }

    /// Whether the token at `query` may attend to the token at `key`.
    pub fn can_attend(&self, query: usize, key: usize) -> bool {
        if key > query {
            return false;
        }
        if key < self.image_token_count {
            return true;
        }
        self.segment_at(query).is_some() && self.segment_at(query) == self.segment_at(key)
    }

    /// Dense `len x len` mask, `mask[q][k]` true when `q` attends to `k`.
    pub fn dense_mask(&self) -> Vec<Vec<bool>> {
        let n = self.len();
        (0..n).map(|q| (0..n).map(|k| self.can_attend(q, k)).collect()).collect()
    }

    /// True at response tokens, which carry the loss.
    pub fn loss_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for s in &self.segments {
            let start = s.offset + s.prompt_len;
            mask[start..s.end()].fill(true);
        }
        mask
    }

    pub fn loss_token_count(&self) -> usize {
        self.segments.iter().map(|s| s.response_len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLengths {
    pub prompt_len: usize,
    pub response_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_id: Option<String>,
}

impl AnnotationLengths {
    pub fn new(prompt_len: usize, response_len: usize) -> Self {
        Self {
            prompt_len,
            response_len,
            annotation_id: None,
        }
    }
}

/// First-fit packing of one image's annotations into sequences of at most
/// `max_len` tokens. Each sequence repeats the image tokens. An annotation
/// that cannot fit even alone is cut to the budget, response tail first,
/// and flagged.
pub fn pack_annotations(
    image_id: &str,
    image_token_count: usize,
    annotations: &[AnnotationLengths],
    max_len: usize,
) -> Result<Vec<PackedExample>> {
    if image_token_count >= max_len {
        return Err(MixtureError::Unpackable {
            image_tokens: image_token_count,
            max_len,
        });
    }
    let budget = max_len - image_token_count;
    let mut bins: Vec<PackedExample> = Vec::new();
    let mut used: Vec<usize> = Vec::new();

    for (index, ann) in annotations.iter().enumerate() {
        let mut prompt_len = ann.prompt_len;
        let mut response_len = ann.response_len;
        let truncated = prompt_len + response_len > budget;
        if truncated {
            let overflow = prompt_len + response_len - budget;
            let from_response = overflow.min(response_len);
            response_len -= from_response;
            prompt_len -= overflow - from_response;
            warn!(
                "image {image_id}: annotation {index} truncated from {} to {budget} tokens",
                ann.prompt_len + ann.response_len
            );
        }
        let len = prompt_len + response_len;
        let slot = match used.iter().position(|&u| u + len <= budget) {
            Some(b) => b,
            None => {
                bins.push(PackedExample {
                    image_id: image_id.to_string(),
                    image_token_count,
                    segments: Vec::new(),
                });
                used.push(0);
                bins.len() - 1
            }
        };
        bins[slot].segments.push(PackedSegment {
            annotation_index: index,
            annotation_id: ann.annotation_id.clone(),
            offset: image_token_count + used[slot],
            prompt_len,
            response_len,
            truncated,
            original_prompt_len: ann.prompt_len,
            original_response_len: ann.response_len,
        });
        used[slot] += len;
    }
    if bins.len() > 1 {
        warn!("image {image_id}: annotations split across {} sequences", bins.len());
    }
    Ok(bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackingStats {
    pub packed_sequences: usize,
    pub unpacked_sequences: usize,
    pub packed_tokens: usize,
    pub unpacked_tokens: usize,
    /// `1 - packed / unpacked` image encodings.
    pub image_reduction: f64,
    /// Relative growth of the mean sequence length.
    pub seq_len_increase: f64,
}

/// Compares packed sequences against pairing every annotation with its
/// image separately (the segments themselves define that baseline).
pub fn packing_stats(packed: &[PackedExample]) -> Result<PackingStats> {
    if packed.is_empty() {
        return Err(MixtureError::EmptyDataset);
    }
    let packed_sequences = packed.len();
    let packed_tokens: usize = packed.iter().map(PackedExample::len).sum();
    let unpacked_sequences: usize = packed.iter().map(|p| p.segments.len()).sum();
    let unpacked_tokens: usize = packed
        .iter()
        .flat_map(|p| p.segments.iter().map(move |s| p.image_token_count + s.len()))
        .sum();
    if unpacked_sequences == 0 {
        return Err(MixtureError::EmptyDataset);
    }
    let packed_mean = packed_tokens as f64 / packed_sequences as f64;
    let unpacked_mean = unpacked_tokens as f64 / unpacked_sequences as f64;
    Ok(PackingStats {
        packed_sequences,
        unpacked_sequences,
        packed_tokens,
        unpacked_tokens,
        image_reduction: 1.0 - packed_sequences as f64 / unpacked_sequences as f64,
        seq_len_increase: packed_mean / unpacked_mean - 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceLoss {
    pub loss_sum: f64,
    pub loss_token_count: u64,
}

/// Divisor for each device's summed loss: the mean loss-token count across
/// devices, identical for all of them.
pub fn loss_token_weights(devices: &[DeviceLoss]) -> Result<Vec<f64>> {
    if devices.is_empty() {
        return Err(MixtureError::NoDevices);
    }
    let total: u64 = devices.iter().map(|d| d.loss_token_count).sum();
    if total == 0 {
        return Err(MixtureError::NoLossTokens);
    }
    let mean = total as f64 / devices.len() as f64;
    Ok(vec![mean; devices.len()])
}

/// Device-local divisors (each device's own count), which over-weight
/// devices holding few loss tokens.
pub fn local_loss_weights(devices: &[DeviceLoss]) -> Result<Vec<f64>> {
    if devices.is_empty() {
        return Err(MixtureError::NoDevices);
    }
    if devices.iter().any(|d| d.loss_token_count == 0) {
        return Err(MixtureError::NoLossTokens);
    }
    Ok(devices.iter().map(|d| d.loss_token_count as f64).collect())
}

/// Average across devices of `loss_sum / divisor`, as gradient averaging does.
pub fn averaged_loss(devices: &[DeviceLoss], divisors: &[f64]) -> f64 {
    devices
        .iter()
        .zip(divisors)
        .map(|(d, w)| d.loss_sum / w)
        .sum::<f64>()
        / devices.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointingAnnotation {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_id: Option<String>,
    pub n_points: usize,
}

/// Drops annotations with more than [`MAX_POINT_COUNT`] points.
/// Returns the kept annotations and the number dropped.
pub fn filter_max_count<T, F>(annotations: Vec<T>, point_count: F) -> (Vec<T>, usize)
where
    F: Fn(&T) -> usize,
{
    let before = annotations.len();
    let kept: Vec<T> = annotations.into_iter().filter(|a| point_count(a) <= MAX_POINT_COUNT).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// One line of an annotation JSONL file. Token counts default to the
/// whitespace-separated word count of the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_id: Option<String>,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_tag: Option<String>,
}

impl AnnotationRecord {
    pub fn tagged_prompt(&self) -> String {
        apply_style_tag(&self.prompt, self.style_tag.as_deref())
    }

    pub fn lengths(&self) -> AnnotationLengths {
        let words = |t: &str| t.split_whitespace().count();
        AnnotationLengths {
            prompt_len: self.prompt_tokens.unwrap_or_else(|| words(&self.tagged_prompt())),
            response_len: self.response_tokens.unwrap_or_else(|| words(&self.response)),
            annotation_id: self.annotation_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedRecord {
    pub image_id: String,
    pub image_token_count: usize,
    pub length: usize,
    pub truncated: bool,
    pub loss_tokens: usize,
    pub segments: Vec<PackedSegment>,
    pub visibility: Vec<VisibilityBlock>,
}

impl From<&PackedExample> for PackedRecord {
    fn from(p: &PackedExample) -> Self {
        Self {
            image_id: p.image_id.clone(),
            image_token_count: p.image_token_count,
            length: p.len(),
            truncated: p.any_truncated(),
            loss_tokens: p.loss_token_count(),
            segments: p.segments.clone(),
            visibility: p.visibility(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackingRun {
    /// Ordered by image id, then first-fit order.
    pub packed: Vec<PackedExample>,
    pub dropped_over_count: usize,
}

/// Filters over-long pointing annotations, groups the rest by image id
/// (annotation order preserved) and packs each group.
pub fn pack_records(records: &[AnnotationRecord], image_token_count: usize, max_len: usize) -> Result<PackingRun> {
    let (kept, dropped_over_count) = filter_max_count(records.iter().collect(), |r| r.n_points.unwrap_or(0));
    if dropped_over_count > 0 {
        warn!("dropped {dropped_over_count} annotations with more than {MAX_POINT_COUNT} points");
    }
    let mut by_image: BTreeMap<&str, Vec<AnnotationLengths>> = BTreeMap::new();
    for r in kept {
        by_image.entry(&r.image_id).or_default().push(r.lengths());
    }
    let mut packed = Vec::new();
    for (image_id, anns) in by_image {
        packed.extend(pack_annotations(image_id, image_token_count, &anns, max_len)?);
    }
    Ok(PackingRun { packed, dropped_over_count })
}
