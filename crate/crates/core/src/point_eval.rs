//! Pointing and counting evaluation.
//!
//! Predictions are matched to ground-truth points by minimum total Euclidean
//! distance (0-100 coordinate space). Precision counts assigned predictions
//! that land in their assigned ground-truth mask; recall counts masks hit by
//! their assigned prediction. Surplus predictions are false positives and
//! surplus masks are misses. Queries without a target score 1 when the
//! response contains no points and 0 otherwise.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;
use thiserror::Error;

use crate::assignment::{solve_assignment, AssignmentError};
use crate::mask::Mask;
use crate::points::{parse, parse_point_sets, Fragment, ParseMode, Point};

pub use crate::assignment::AssignmentResult;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{points} ground-truth points but {masks} masks")]
    PointMaskMismatch { points: usize, masks: usize },
    #[error("mask {index} is {mask_w}x{mask_h}, image is {image_w}x{image_h}")]
    MaskSize {
        index: usize,
        mask_w: u32,
        mask_h: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("example has no ground-truth targets; score it with score_no_target")]
    NoTargets,
    #[error("no items to score")]
    Empty,
    #[error("prediction ids do not match ground truth: {0}")]
    IdMismatch(String),
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointingScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PointingScore {
    pub fn new(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
        }
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Percent coordinates to a pixel index, rounded and clamped to the raster.
pub fn to_pixel(point: Point, image_w: u32, image_h: u32) -> (u32, u32) {
    let conv = |v: f64, extent: u32| {
        let max = extent.saturating_sub(1);
        ((v * max as f64 / 100.0).round().max(0.0) as u32).min(max)
    };
    (conv(point.x, image_w), conv(point.y, image_h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointingDetail {
    pub score: PointingScore,
    pub assignment: Option<AssignmentResult>,
    /// Per assigned pair: `(prediction, ground truth, inside mask)`.
    pub hits: Vec<(usize, usize, bool)>,
}

pub fn score_pointing(
    predicted: &[Point],
    gt_points: &[Point],
    gt_masks: &[Mask],
    image_w: u32,
    image_h: u32,
) -> Result<PointingScore> {
    score_pointing_detailed(predicted, gt_points, gt_masks, image_w, image_h).map(|d| d.score)
}

pub fn score_pointing_detailed(
    predicted: &[Point],
    gt_points: &[Point],
    gt_masks: &[Mask],
    image_w: u32,
    image_h: u32,
) -> Result<PointingDetail> {
    if gt_points.len() != gt_masks.len() {
        return Err(EvalError::PointMaskMismatch {
            points: gt_points.len(),
            masks: gt_masks.len(),
        });
    }
    if gt_points.is_empty() {
        return Err(EvalError::NoTargets);
    }
    for (index, m) in gt_masks.iter().enumerate() {
        if (m.width(), m.height()) != (image_w, image_h) {
            return Err(EvalError::MaskSize {
                index,
                mask_w: m.width(),
                mask_h: m.height(),
                image_w,
                image_h,
            });
        }
    }
    if predicted.is_empty() {
        return Ok(PointingDetail {
            score: PointingScore::new(0.0, 0.0),
            assignment: None,
            hits: Vec::new(),
        });
    }

    let cost: Vec<Vec<f64>> = predicted
        .iter()
        .map(|p| gt_points.iter().map(|g| (p.x - g.x).hypot(p.y - g.y)).collect())
        .collect();
    let assignment = solve_assignment(&cost)?;
    let hits: Vec<(usize, usize, bool)> = assignment
        .pairs
        .iter()
        .map(|&(pi, gi)| {
            let (px, py) = to_pixel(predicted[pi], image_w, image_h);
            (pi, gi, gt_masks[gi].contains(px, py))
        })
        .collect();
    let true_positives = hits.iter().filter(|h| h.2).count() as f64;
    Ok(PointingDetail {
        score: PointingScore::new(
            true_positives / predicted.len() as f64,
            true_positives / gt_points.len() as f64,
        ),
        assignment: Some(assignment),
        hits,
    })
}

/// Score for a query whose target is absent: perfect iff no points are given.
pub fn score_no_target(response: &str) -> PointingScore {
    let points = parse_point_sets(response, ParseMode::Lenient)
        .map(|sets| sets.iter().map(|s| s.points.len()).sum::<usize>())
        .unwrap_or(0);
    if points == 0 {
        PointingScore::new(1.0, 1.0)
    } else {
        PointingScore::new(0.0, 0.0)
    }
}

/// Points predicted in a free-form response, in order of appearance.
pub fn response_points(response: &str) -> Vec<Point> {
    parse_point_sets(response, ParseMode::Lenient)
        .unwrap_or_default()
        .into_iter()
        .flat_map(|s| s.points)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountStrategy {
    /// Last integer in the response.
    Count,
    /// Integer stated after the last point tag, falling back to the point count.
    PointThenCount,
    /// Integer stated before the first point tag.
    CountThenPoint,
    /// Number of coordinate pairs in point tags.
    PointRegex,
}

impl std::str::FromStr for CountStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "count" => Ok(Self::Count),
            "point_then_count" => Ok(Self::PointThenCount),
            "count_then_point" => Ok(Self::CountThenPoint),
            "point_regex" => Ok(Self::PointRegex),
            other => Err(format!("unknown counting strategy {other:?}")),
        }
    }
}

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d+\b").expect("valid regex"));

/// Integer literals in `text`, excluding digit runs that belong to a decimal number.
fn integers(text: &str) -> Vec<u64> {
    let bytes = text.as_bytes();
    INTEGER
        .find_iter(text)
        .filter(|m| {
            let before_dot = m.start() >= 2 && bytes[m.start() - 1] == b'.' && bytes[m.start() - 2].is_ascii_digit();
            let after_dot = bytes.get(m.end()) == Some(&b'.')
                && bytes.get(m.end() + 1).is_some_and(u8::is_ascii_digit);
            !before_dot && !after_dot
        })
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

pub fn extract_count(response: &str, strategy: CountStrategy) -> Option<u64> {
    let fragments = parse(response, ParseMode::Lenient).unwrap_or_default();
    let tags: Vec<(usize, usize, usize)> = fragments
        .iter()
        .filter_map(|f| match f {
            Fragment::Points { set, start, end } => Some((*start, *end, set.points.len())),
            Fragment::Text(_) => None,
        })
        .collect();
    let point_total = tags.iter().map(|t| t.2 as u64).sum::<u64>();

    match strategy {
        CountStrategy::Count => integers(response).last().copied(),
        CountStrategy::PointRegex => Some(point_total),
        CountStrategy::PointThenCount => match tags.last() {
            Some(&(_, end, _)) => integers(&response[end..]).first().copied().or(Some(point_total)),
            None => integers(response).last().copied(),
        },
        CountStrategy::CountThenPoint => match tags.first() {
            Some(&(start, _, _)) => integers(&response[..start]).last().copied(),
            None => integers(response).last().copied(),
        },
    }
}

/// Fraction of responses whose extracted count equals the ground truth.
pub fn counting_accuracy<S: AsRef<str>>(items: &[(S, u64)], strategy: CountStrategy) -> Result<f64> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = items
        .iter()
        .filter(|(resp, gt)| extract_count(resp.as_ref(), strategy) == Some(*gt))
        .count();
    Ok(correct as f64 / items.len() as f64)
}

/// One line of the ground-truth JSONL file. An empty `points` list marks a
/// no-target query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub id: String,
    pub image_w: u32,
    pub image_h: u32,
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub masks: Vec<Mask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub response_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| EvalError::Record { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn score_example(gt: &GroundTruthRecord, response: &str) -> Result<PointingScore> {
    if gt.points.is_empty() && gt.masks.is_empty() {
        return Ok(score_no_target(response));
    }
    let gt_points: Vec<Point> = gt.points.iter().map(|&[x, y]| Point::new(x, y)).collect();
    score_pointing(&response_points(response), &gt_points, &gt.masks, gt.image_w, gt.image_h)
}

/// Scores every example, ordered by id. Ids must match one-to-one.
pub fn evaluate_dataset(gt: &[GroundTruthRecord], preds: &[PredictionRecord]) -> Result<Vec<ExampleScore>> {
    let mut by_id: BTreeMap<&str, &GroundTruthRecord> = BTreeMap::new();
    for g in gt {
        if by_id.insert(&g.id, g).is_some() {
            return Err(EvalError::IdMismatch(format!("duplicate ground-truth id {}", g.id)));
        }
    }
    let mut responses: BTreeMap<&str, &str> = BTreeMap::new();
    for p in preds {
        if !by_id.contains_key(p.id.as_str()) {
            return Err(EvalError::IdMismatch(format!("prediction {} has no ground truth", p.id)));
        }
        if responses.insert(&p.id, &p.response_text).is_some() {
            return Err(EvalError::IdMismatch(format!("duplicate prediction id {}", p.id)));
        }
    }
    if let Some(missing) = by_id.keys().find(|id| !responses.contains_key(*id)) {
        return Err(EvalError::IdMismatch(format!("no prediction for {missing}")));
    }
    if by_id.is_empty() {
        return Err(EvalError::Empty);
    }
    by_id
        .iter()
        .map(|(id, g)| {
            let s = score_example(g, responses[id])?;
            Ok(ExampleScore {
                id: id.to_string(),
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
            })
        })
        .collect()
}

/// Means of the per-example scores.
pub fn aggregate(scores: &[ExampleScore]) -> Result<PointingScore> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = scores.len() as f64;
    Ok(PointingScore {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    })
}

/// CSV with header `id,precision,recall,f1` and a final `mean` row.
pub fn write_scores_csv<W: Write>(scores: &[ExampleScore], out: W) -> Result<PointingScore> {
    let mean = aggregate(scores)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "precision", "recall", "f1"])?;
    for s in scores {
        w.write_record([s.id.clone(), fmt6(s.precision), fmt6(s.recall), fmt6(s.f1)])?;
    }
    w.write_record(["mean".to_string(), fmt6(mean.precision), fmt6(mean.recall), fmt6(mean.f1)])?;
    w.flush()?;
    Ok(mean)
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}
