//! Dice and IoU against labeled frames, aggregated over a dataset.

use serde::{Deserialize, Serialize};

use crate::data_model::{BinaryMask, BinaryMaskSequence, CorruptionReason, DatasetManifest};
use crate::error::Result;

fn counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    a.check_same_shape(b)?;
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        inter += (*x && *y) as usize;
        na += *x as usize;
        nb += *y as usize;
    }
    Ok((inter, na, nb))
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = counts(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// `|A∩B| / |A∪B|`; two empty masks score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = counts(a, b)?;
    let union = na + nb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExclusionPolicy {
    Full,
    ExcludeCorrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScores {
    pub clip_id: String,
    pub dice_ed: f64,
    pub dice_es: f64,
    pub iou_ed: f64,
    pub iou_es: f64,
    /// Predictions were missing; scored as zero.
    pub missing: bool,
    /// At least one labeled frame compared two empty masks.
    pub empty_pair: bool,
    pub corrupted: Option<CorruptionReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub clips: usize,
    /// Uniform mean over labeled frames.
    pub mean_dice: f64,
    pub mean_iou: f64,
    /// Mean of per-clip averages.
    pub clip_mean_dice: f64,
    pub clip_mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegScoreReport {
    pub policy: ExclusionPolicy,
    pub clips: Vec<ClipScores>,
    pub aggregate: Aggregate,
    /// Aggregate after dropping corrupted clips, reported alongside `FULL`.
    pub excluding_corrupted: Option<Aggregate>,
    pub excluded: Vec<(String, CorruptionReason)>,
}

fn aggregate<'a>(scores: impl Iterator<Item = &'a ClipScores>) -> Aggregate {
    let (mut n, mut d, mut i) = (0usize, 0.0, 0.0);
    for s in scores {
        n += 1;
        d += s.dice_ed + s.dice_es;
        i += s.iou_ed + s.iou_es;
    }
    if n == 0 {
        return Aggregate {
            clips: 0,
            mean_dice: f64::NAN,
            mean_iou: f64::NAN,
            clip_mean_dice: f64::NAN,
            clip_mean_iou: f64::NAN,
        };
    }
    // every clip contributes exactly two labeled frames, so the per-frame and
    // per-clip means coincide; both are kept for report compatibility
    let frames = 2.0 * n as f64;
    Aggregate {
        clips: n,
        mean_dice: d / frames,
        mean_iou: i / frames,
        clip_mean_dice: d / 2.0 / n as f64,
        clip_mean_iou: i / 2.0 / n as f64,
    }
}

/// Scores predicted masks on each clip's labeled ED and ES frames.
///
/// `predictions` and `labels` look up a clip's mask sequence; a missing
/// prediction scores 0 rather than being dropped. Clips without labels are skipped.
pub fn evaluate_segmentation(
    manifest: &DatasetManifest,
    policy: ExclusionPolicy,
    mut predictions: impl FnMut(&str) -> Option<BinaryMaskSequence>,
    mut labels: impl FnMut(&str) -> Result<BinaryMaskSequence>,
) -> Result<SegScoreReport> {
    let mut clips = Vec::new();
    let mut excluded = Vec::new();
    for record in &manifest.records {
        let Some(clip_labels) = &record.labels else {
            continue;
        };
        let corrupted = manifest.corrupted.get(&record.clip_id).copied();
        if let (ExclusionPolicy::ExcludeCorrupted, Some(reason)) = (policy, corrupted) {
            excluded.push((record.clip_id.clone(), reason));
            continue;
        }
        let truth = labels(&record.clip_id)?;
        let mut scores = ClipScores {
            clip_id: record.clip_id.clone(),
            dice_ed: 0.0,
            dice_es: 0.0,
            iou_ed: 0.0,
            iou_es: 0.0,
            missing: true,
            empty_pair: false,
            corrupted,
        };
        if let Some(pred) = predictions(&record.clip_id) {
            let mut frame_scores = [(0.0, 0.0); 2];
            for (slot, frame) in [clip_labels.ed_frame, clip_labels.es_frame]
                .iter()
                .enumerate()
            {
                let (p, t) = (pred.frame(*frame), truth.frame(*frame));
                if !p.as_slice().iter().any(|v| *v) && !t.as_slice().iter().any(|v| *v) {
                    scores.empty_pair = true;
                }
                frame_scores[slot] = (dice(&p, &t)?, iou(&p, &t)?);
            }
            scores.missing = false;
            (scores.dice_ed, scores.iou_ed) = frame_scores[0];
            (scores.dice_es, scores.iou_es) = frame_scores[1];
        }
        clips.push(scores);
    }
    let aggregate_all = aggregate(clips.iter());
    let excluding_corrupted = match policy {
        ExclusionPolicy::Full => Some(aggregate(clips.iter().filter(|c| c.corrupted.is_none()))),
        ExclusionPolicy::ExcludeCorrupted => None,
    };
    Ok(SegScoreReport {
        policy,
        clips,
        aggregate: aggregate_all,
        excluding_corrupted,
        excluded,
    })
}
