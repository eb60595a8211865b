//! Annotation-free mask evaluation through an image–text similarity scorer.
//!
//! Two protocols judge mask quality by blackening the masked region and
//! asking the scorer what is still visible. A third one turns mitral-valve
//! prompts into a per-frame phase signal.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data_model::{dilate, BinaryMask, BinaryMaskSequence, ClipLabels, VideoClip};
use crate::error::{Error, Result};
use crate::phantom::{cavity_masks, wall_masks, PhantomParams};
use crate::phase_detect::{detect_phase_events, AreaSeries, PhaseEvents};

pub const PROMPT_WALL: &str = "WALL";
pub const PROMPT_LV: &str = "LEFT VENTRICLE";
pub const PROMPT_NOTHING: &str = "NOTHING";
pub const PROMPT_MITRAL_CLOSED: &str = "THE MITRAL VALVE IS CLOSED";
pub const PROMPT_MITRAL_OPEN: &str = "THE MITRAL VALVE IS OPEN";

pub const DEFAULT_DILATION_PX: usize = 5;
/// Stride used when a clip has no labeled frames.
pub const UNLABELED_STRIDE: usize = 8;

/// One grayscale image handed to a scorer, plus where it came from.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef<'a> {
    pub clip_id: &'a str,
    pub frame: usize,
    pub height: usize,
    pub width: usize,
    pub image: &'a [f32],
}

pub trait PromptScorer {
    fn name(&self) -> &str;

    /// Similarity between the image and the prompt. Must be deterministic.
    fn score(&self, frame: &FrameRef<'_>, prompt: &str) -> Result<f64>;
}

fn score_at(scorer: &dyn PromptScorer, frame: &FrameRef<'_>, prompt: &str) -> Result<f64> {
    scorer.score(frame, prompt).map_err(|e| match e {
        Error::Key(_) | Error::Scorer { .. } => e,
        other => Error::Scorer {
            frame: frame.frame,
            message: other.to_string(),
        },
    })
}

/// Frames scored by the mask-quality protocols.
pub fn evaluated_frames(num_frames: usize, labels: Option<&ClipLabels>) -> Vec<usize> {
    match labels {
        Some(l) => {
            let mut v = vec![l.ed_frame, l.es_frame];
            v.sort_unstable();
            v.dedup();
            v.retain(|t| *t < num_frames);
            v
        }
        None => (0..num_frames).step_by(UNLABELED_STRIDE).collect(),
    }
}

fn blackened(clip: &VideoClip, t: usize, mask: &BinaryMask) -> Vec<f32> {
    clip.frame(t)
        .iter()
        .zip(mask.as_slice())
        .map(|(v, m)| if *m { 0.0 } else { *v })
        .collect()
}

fn check_frames(clip: &VideoClip, masks: &BinaryMaskSequence, frames: &[usize]) -> Result<()> {
    masks.check_matches(clip)?;
    if frames.is_empty() {
        return Err(Error::Input(format!(
            "clip {}: no frames to evaluate",
            clip.id()
        )));
    }
    if let Some(bad) = frames.iter().find(|t| **t >= clip.num_frames()) {
        return Err(Error::Input(format!(
            "frame {bad} outside clip {}",
            clip.id()
        )));
    }
    Ok(())
}

/// Mean `WALL` similarity after blackening each mask. A mask that spills
/// over the wall hides it and scores lower.
pub fn overflow_score(
    clip: &VideoClip,
    masks: &BinaryMaskSequence,
    scorer: &dyn PromptScorer,
    frames: &[usize],
) -> Result<f64> {
    check_frames(clip, masks, frames)?;
    let mut total = 0.0;
    for &t in frames {
        let image = blackened(clip, t, &masks.frame(t));
        let frame = frame_ref(clip, t, &image);
        total += score_at(scorer, &frame, PROMPT_WALL)?;
    }
    Ok(total / frames.len() as f64)
}

/// Mean of `sim(LEFT VENTRICLE) − sim(NOTHING)` after blackening each mask
/// dilated by `dilation_px`. Lower means the mask covered more of the cavity.
pub fn coverage_score(
    clip: &VideoClip,
    masks: &BinaryMaskSequence,
    scorer: &dyn PromptScorer,
    dilation_px: usize,
    frames: &[usize],
) -> Result<f64> {
    check_frames(clip, masks, frames)?;
    let mut total = 0.0;
    for &t in frames {
        let grown = dilate(&masks.frame(t), dilation_px);
        let image = blackened(clip, t, &grown);
        let frame = frame_ref(clip, t, &image);
        total += score_at(scorer, &frame, PROMPT_LV)? - score_at(scorer, &frame, PROMPT_NOTHING)?;
    }
    Ok(total / frames.len() as f64)
}

fn frame_ref<'a>(clip: &'a VideoClip, t: usize, image: &'a [f32]) -> FrameRef<'a> {
    FrameRef {
        clip_id: clip.id(),
        frame: t,
        height: clip.height(),
        width: clip.width(),
        image,
    }
}

/// Subtracts the least-squares line through `(t, values[t])`.
pub fn detrend(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mt = (n - 1.0) / 2.0;
    let my = values.iter().sum::<f64>() / n;
    let (mut stt, mut sty) = (0.0, 0.0);
    for (t, y) in values.iter().enumerate() {
        let dt = t as f64 - mt;
        stt += dt * dt;
        sty += dt * (y - my);
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    values
        .iter()
        .enumerate()
        .map(|(t, y)| y - my - slope * (t as f64 - mt))
        .collect()
}

/// Detrended cumulative sum of `sim(CLOSED) − sim(OPEN)` over all frames.
pub fn mitral_phase_signal(clip: &VideoClip, scorer: &dyn PromptScorer) -> Result<Vec<f64>> {
    if clip.num_frames() < 3 {
        return Err(Error::Input(format!(
            "clip {} has {} frames, need at least 3",
            clip.id(),
            clip.num_frames()
        )));
    }
    let mut acc = 0.0;
    let mut cumulative = Vec::with_capacity(clip.num_frames());
    for t in 0..clip.num_frames() {
        let frame = frame_ref(clip, t, clip.frame(t));
        acc += score_at(scorer, &frame, PROMPT_MITRAL_CLOSED)?
            - score_at(scorer, &frame, PROMPT_MITRAL_OPEN)?;
        cumulative.push(acc);
    }
    Ok(detrend(&cumulative))
}

/// Reads ED/ES off a mitral signal. The signal peaks while the valve has
/// been closed longest (end-systole) and bottoms out at end-diastole, so it
/// is flipped into an area surrogate before running the phase detector.
pub fn mitral_phase_events(
    clip_id: &str,
    fps: f64,
    signal: &[f64],
    ed_reference: usize,
    es_reference: usize,
) -> Result<PhaseEvents> {
    let peak = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let surrogate = AreaSeries::new(clip_id, fps, signal.iter().map(|s| peak - s).collect())?;
    detect_phase_events(&surrogate, ed_reference, es_reference)
}

/// A scorer that always answers the same value.
#[derive(Debug, Clone)]
pub struct ConstantScorer(pub f64);

impl PromptScorer for ConstantScorer {
    fn name(&self) -> &str {
        "constant"
    }

    fn score(&self, _frame: &FrameRef<'_>, _prompt: &str) -> Result<f64> {
        Ok(self.0)
    }
}

/// Ground truth the mock scorer consults for one clip.
#[derive(Debug, Clone)]
struct MockClip {
    cavity: BinaryMaskSequence,
    wall: BinaryMaskSequence,
    /// Cavity pixels that were nonzero in the unmodified clip, per frame.
    visible_cavity: Vec<usize>,
    /// Frame-to-frame cavity area change over the mean area.
    area_rate: Vec<f64>,
}

/// Hand-checkable stand-in for a vision-language model, keyed to phantom ground truth.
#[derive(Debug, Clone, Default)]
pub struct MockScorer {
    clips: HashMap<String, MockClip>,
}

impl MockScorer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a phantom clip; `clip` must be the rendering of `params`.
    pub fn add_phantom(&mut self, params: &PhantomParams, clip: &VideoClip) -> Result<()> {
        let cavity = cavity_masks(params);
        cavity.check_matches(clip)?;
        let wall = wall_masks(params);
        let visible_cavity = (0..clip.num_frames())
            .map(|t| {
                clip.frame(t)
                    .iter()
                    .zip(cavity.frame_slice(t))
                    .filter(|(v, m)| **m && **v > 0.0)
                    .count()
            })
            .collect();
        let areas: Vec<f64> = cavity.areas().iter().map(|a| *a as f64).collect();
        let mean = areas.iter().sum::<f64>() / areas.len() as f64;
        let area_rate = (0..areas.len())
            .map(|t| {
                if t == 0 || mean == 0.0 {
                    0.0
                } else {
                    (areas[t] - areas[t - 1]) / mean
                }
            })
            .collect();
        self.clips.insert(
            clip.id().to_string(),
            MockClip {
                cavity,
                wall,
                visible_cavity,
                area_rate,
            },
        );
        Ok(())
    }

    fn lookup(&self, frame: &FrameRef<'_>) -> Result<&MockClip> {
        let clip = self
            .clips
            .get(frame.clip_id)
            .ok_or_else(|| Error::Key(format!("mock scorer has no clip {:?}", frame.clip_id)))?;
        let (t, h, w) = clip.cavity.dims();
        if frame.frame >= t || frame.height != h || frame.width != w || frame.image.len() != h * w {
            return Err(Error::Scorer {
                frame: frame.frame,
                message: format!("image does not match clip {}", frame.clip_id),
            });
        }
        Ok(clip)
    }
}

fn visible_fraction(image: &[f32], region: &[bool]) -> (usize, usize) {
    let mut total = 0;
    let mut visible = 0;
    for (v, m) in image.iter().zip(region) {
        if *m {
            total += 1;
            visible += (*v > 0.0) as usize;
        }
    }
    (visible, total)
}

impl PromptScorer for MockScorer {
    fn name(&self) -> &str {
        "mock"
    }

    fn score(&self, frame: &FrameRef<'_>, prompt: &str) -> Result<f64> {
        let clip = self.lookup(frame)?;
        let t = frame.frame;
        Ok(match prompt {
            PROMPT_WALL => {
                let (visible, total) = visible_fraction(frame.image, clip.wall.frame_slice(t));
                if total == 0 {
                    0.0
                } else {
                    visible as f64 / total as f64
                }
            }
            PROMPT_LV => {
                let (visible, _) = visible_fraction(frame.image, clip.cavity.frame_slice(t));
                let baseline = clip.visible_cavity[t];
                if baseline == 0 {
                    0.0
                } else {
                    visible as f64 / baseline as f64
                }
            }
            PROMPT_NOTHING => {
                let mean =
                    frame.image.iter().map(|v| *v as f64).sum::<f64>() / frame.image.len() as f64;
                1.0 - mean
            }
            PROMPT_MITRAL_CLOSED => -clip.area_rate[t],
            PROMPT_MITRAL_OPEN => clip.area_rate[t],
            _ => 0.0,
        })
    }
}

/// Offline scorer backed by precomputed `(clip_id, frame, prompt) → similarity` rows.
#[derive(Debug, Clone, Default)]
pub struct ScoresFileScorer {
    scores: BTreeMap<(String, usize, String), f64>,
}

impl ScoresFileScorer {
    pub fn parse(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            clip_id: String,
            frame: usize,
            prompt: String,
            similarity: f64,
        }
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let mut scores = BTreeMap::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Manifest {
                row: i + 2,
                message: e.to_string(),
            })?;
            if !row.similarity.is_finite() {
                return Err(Error::Manifest {
                    row: i + 2,
                    message: format!("non-finite similarity {}", row.similarity),
                });
            }
            let key = (row.clip_id, row.frame, row.prompt);
            if scores.insert(key, row.similarity).is_some() {
                return Err(Error::Manifest {
                    row: i + 2,
                    message: "duplicate (clip_id, frame, prompt)".into(),
                });
            }
        }
        Ok(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl PromptScorer for ScoresFileScorer {
    fn name(&self) -> &str {
        "scores-file"
    }

    fn score(&self, frame: &FrameRef<'_>, prompt: &str) -> Result<f64> {
        self.scores
            .get(&(frame.clip_id.to_string(), frame.frame, prompt.to_string()))
            .copied()
            .ok_or_else(|| {
                Error::Key(format!(
                    "no score for clip {:?} frame {} prompt {prompt:?}",
                    frame.clip_id, frame.frame
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipQuality {
    pub clip_id: String,
    pub overflow_score: f64,
    pub coverage_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskQualityReport {
    pub scorer: String,
    pub dilation_px: usize,
    pub clips: Vec<ClipQuality>,
    pub mean_overflow: f64,
    /// Mean `LEFT VENTRICLE − NOTHING`; lower is better coverage.
    pub mean_coverage: f64,
    /// The same statistic negated, so that higher is better.
    pub mean_coverage_negated: f64,
}

impl MaskQualityReport {
    pub fn from_clips(scorer: &str, dilation_px: usize, clips: Vec<ClipQuality>) -> Self {
        let n = clips.len() as f64;
        let mean_overflow = clips.iter().map(|c| c.overflow_score).sum::<f64>() / n;
        let mean_coverage = clips.iter().map(|c| c.coverage_score).sum::<f64>() / n;
        Self {
            scorer: scorer.to_string(),
            dilation_px,
            clips,
            mean_overflow,
            mean_coverage,
            mean_coverage_negated: -mean_coverage,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::generate_phantom;

    fn phantom(
        seed: u64,
    ) -> (
        PhantomParams,
        VideoClip,
        BinaryMaskSequence,
        ClipLabels,
        MockScorer,
    ) {
        let params = PhantomParams::sample(format!("p{seed}"), seed, 64, 64, 64);
        let (clip, truth, labels) = generate_phantom(&params).unwrap();
        let mut mock = MockScorer::new();
        mock.add_phantom(&params, &clip).unwrap();
        (params, clip, truth, labels, mock)
    }

    #[test]
    fn mock_rules_on_trivial_images() {
        let (_, clip, _, _, mock) = phantom(1);
        let black = vec![0.0; 64 * 64];
        let frame = FrameRef {
            clip_id: clip.id(),
            frame: 3,
            height: 64,
            width: 64,
            image: &black,
        };
        assert_eq!(mock.score(&frame, PROMPT_WALL).unwrap(), 0.0);
        assert_eq!(mock.score(&frame, PROMPT_NOTHING).unwrap(), 1.0);
        assert_eq!(mock.score(&frame, "A CAT").unwrap(), 0.0);
        let untouched = frame_ref(&clip, 3, clip.frame(3));
        assert_eq!(mock.score(&untouched, PROMPT_LV).unwrap(), 1.0);
        let stranger = FrameRef {
            clip_id: "nope",
            ..frame
        };
        assert!(matches!(
            mock.score(&stranger, PROMPT_WALL),
            Err(Error::Key(_))
        ));
    }

    #[test]
    fn overflow_extremes() {
        let (_, clip, truth, labels, mock) = phantom(2);
        let frames = evaluated_frames(clip.num_frames(), Some(&labels));
        let full = truth.map_frames(|m| BinaryMask::full(m.height(), m.width()));
        assert_eq!(overflow_score(&clip, &full, &mock, &frames).unwrap(), 0.0);
        let empty = truth.map_frames(|m| BinaryMask::empty(m.height(), m.width()));
        let untouched: f64 = frames
            .iter()
            .map(|t| {
                mock.score(&frame_ref(&clip, *t, clip.frame(*t)), PROMPT_WALL)
                    .unwrap()
            })
            .sum::<f64>()
            / frames.len() as f64;
        assert_eq!(
            overflow_score(&clip, &empty, &mock, &frames).unwrap(),
            untouched
        );
        let overgrown = truth.map_frames(|m| dilate(m, 10));
        assert!(
            overflow_score(&clip, &truth, &mock, &frames).unwrap()
                > overflow_score(&clip, &overgrown, &mock, &frames).unwrap()
        );
    }

    #[test]
    fn coverage_orders_nested_masks() {
        let (_, clip, truth, labels, mock) = phantom(3);
        let frames = evaluated_frames(clip.num_frames(), Some(&labels));
        let empty = truth.map_frames(|m| BinaryMask::empty(m.height(), m.width()));
        let half = truth.map_frames(|m| {
            let cols: Vec<usize> = (0..m.width())
                .filter(|c| (0..m.height()).any(|r| m.get(r, *c)))
                .collect();
            let split = cols[cols.len() / 2];
            BinaryMask::from_fn(m.height(), m.width(), |r, c| m.get(r, c) && c < split)
        });
        let score = |m| coverage_score(&clip, m, &mock, DEFAULT_DILATION_PX, &frames).unwrap();
        let (e, h, x) = (score(&empty), score(&half), score(&truth));
        assert!(e > h && h > x, "{e} {h} {x}");
    }

    #[test]
    fn constant_scorer_ties() {
        let (_, clip, truth, labels, _) = phantom(4);
        let frames = evaluated_frames(clip.num_frames(), Some(&labels));
        let s = ConstantScorer(0.3);
        let empty = truth.map_frames(|m| BinaryMask::empty(m.height(), m.width()));
        assert_eq!(
            coverage_score(&clip, &truth, &s, 5, &frames).unwrap(),
            coverage_score(&clip, &empty, &s, 5, &frames).unwrap()
        );
        assert_eq!(
            mitral_phase_signal(&clip, &s)
                .unwrap()
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max),
            0.0
        );
    }

    #[test]
    fn detrend_is_exact() {
        let constant: Vec<f64> = (0..40).map(|t| 0.7 * t as f64 + 3.0).collect();
        assert!(detrend(&constant).iter().all(|v| v.abs() < 1e-12));
        let wave: Vec<f64> = (0..50)
            .map(|t| (t as f64 * 0.4).sin() + 0.01 * t as f64 * t as f64)
            .collect();
        let d = detrend(&wave);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let slope: f64 = d
            .iter()
            .enumerate()
            .map(|(t, v)| (t as f64 - 24.5) * v)
            .sum();
        assert!(mean.abs() < 1e-10 && slope.abs() < 1e-10);
    }

    #[test]
    fn cosine_increments_give_sine_extrema() {
        // d_t = cos(2πt/P) sums to a sine peaking near P/4 and bottoming near 3P/4
        let p = 20.0;
        let d: Vec<f64> = (0..80)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / p).cos())
            .collect();
        let mut acc = 0.0;
        let cum: Vec<f64> = d
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        let s = detrend(&cum);
        let peak = (20..40).max_by(|a, b| s[*a].total_cmp(&s[*b])).unwrap();
        let trough = (20..40).min_by(|a, b| s[*a].total_cmp(&s[*b])).unwrap();
        assert!(peak.abs_diff(25) <= 1, "{peak}");
        assert!(trough.abs_diff(35) <= 1, "{trough}");
    }

    #[test]
    fn mitral_signal_finds_end_systole() {
        for seed in 10..15 {
            let (_, clip, _, labels, mock) = phantom(seed);
            let signal = mitral_phase_signal(&clip, &mock).unwrap();
            let events = mitral_phase_events(
                clip.id(),
                clip.fps(),
                &signal,
                labels.ed_frame,
                labels.es_frame,
            )
            .unwrap();
            assert!(
                events.es_frame.abs_diff(labels.es_frame) <= 2,
                "seed {seed}: {events:?} vs {labels:?}"
            );
        }
    }

    #[test]
    fn scores_file_round_trip() {
        let text = "clip_id,frame,prompt,similarity\na,0,WALL,0.5\na,1,WALL,0.25\n";
        let s = ScoresFileScorer::parse(text).unwrap();
        assert_eq!(s.len(), 2);
        let img = vec![0.0; 64];
        let f = FrameRef {
            clip_id: "a",
            frame: 1,
            height: 8,
            width: 8,
            image: &img,
        };
        assert_eq!(s.score(&f, PROMPT_WALL).unwrap(), 0.25);
        assert!(matches!(s.score(&f, PROMPT_LV), Err(Error::Key(_))));
        assert!(ScoresFileScorer::parse(
            "clip_id,frame,prompt,similarity\na,0,WALL,0.5\na,0,WALL,0.1\n"
        )
        .is_err());
        assert!(
            ScoresFileScorer::parse("clip_id,frame,prompt,similarity\na,x,WALL,0.5\n").is_err()
        );
    }

    #[test]
    fn unlabeled_frames_use_stride() {
        assert_eq!(evaluated_frames(20, None), vec![0, 8, 16]);
    }
}
