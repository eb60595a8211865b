//! End-diastole / end-systole frame detection from a per-frame area series,
//! and the frame-distance statistics built on it.
//!
//! Detection uses the whole clip: take the median of the series, split it
//! into maximal runs strictly below (systole) or above (diastole) the median,
//! keep the run closest to a reference frame so the answer lands on the same
//! beat, and return the extreme value's index inside that run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSeries {
    pub clip_id: String,
    pub fps: f64,
    pub values: Vec<f64>,
}

impl AreaSeries {
    pub fn new(clip_id: impl Into<String>, fps: f64, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input(
                "area values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            fps,
            values,
        })
    }

    pub fn from_counts(clip_id: impl Into<String>, fps: f64, counts: &[usize]) -> Self {
        Self {
            clip_id: clip_id.into(),
            fps,
            values: counts.iter().map(|c| *c as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseMode {
    /// End-systole: minimum inside a below-median run.
    Es,
    /// End-diastole: maximum inside an above-median run.
    Ed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEvents {
    pub ed_frame: usize,
    pub es_frame: usize,
    pub ed_degenerate: bool,
    pub es_degenerate: bool,
}

/// Lower median: the element at index `(n - 1) / 2` of the sorted values.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[(sorted.len() - 1) / 2]
}

/// Maximal runs `[first, last]` of indices whose value satisfies `pred`.
fn runs(values: &[f64], pred: impl Fn(f64) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, v) in values.iter().enumerate() {
        match (pred(*v), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, values.len() - 1));
    }
    out
}

fn run_distance((first, last): (usize, usize), reference: usize) -> usize {
    if (first..=last).contains(&reference) {
        0
    } else {
        reference.abs_diff(first).min(reference.abs_diff(last))
    }
}

pub fn detect_extreme_frame(
    series: &AreaSeries,
    reference_frame: usize,
    mode: PhaseMode,
) -> Result<usize> {
    let values = &series.values;
    if values.len() < 3 {
        return Err(Error::Input(format!(
            "series of length {} too short, need at least 3",
            values.len()
        )));
    }
    if reference_frame >= values.len() {
        return Err(Error::Input(format!(
            "reference frame {reference_frame} outside series of length {}",
            values.len()
        )));
    }
    let median = lower_median(values);
    let candidates = match mode {
        PhaseMode::Es => runs(values, |v| v < median),
        PhaseMode::Ed => runs(values, |v| v > median),
    };
    // min_by_key keeps the first of equal keys, i.e. the earlier run on ties
    let (first, last) = candidates
        .into_iter()
        .min_by_key(|r| run_distance(*r, reference_frame))
        .ok_or_else(|| {
            Error::DegenerateSeries(format!(
                "clip {}: no values {} the median",
                series.clip_id,
                match mode {
                    PhaseMode::Es => "below",
                    PhaseMode::Ed => "above",
                }
            ))
        })?;
    let mut best = first;
    for i in first..=last {
        let better = match mode {
            PhaseMode::Es => values[i] < values[best],
            PhaseMode::Ed => values[i] > values[best],
        };
        if better {
            best = i;
        }
    }
    Ok(best)
}

/// Detects both events. A degenerate series falls back to the reference
/// frame and is flagged so the clip still counts in the statistics.
pub fn detect_phase_events(
    series: &AreaSeries,
    ed_reference: usize,
    es_reference: usize,
) -> Result<PhaseEvents> {
    let detect = |reference, mode| match detect_extreme_frame(series, reference, mode) {
        Ok(frame) => Ok((frame, false)),
        Err(Error::DegenerateSeries(_)) => Ok((reference, true)),
        Err(e) => Err(e),
    };
    let (ed_frame, ed_degenerate) = detect(ed_reference, PhaseMode::Ed)?;
    let (es_frame, es_degenerate) = detect(es_reference, PhaseMode::Es)?;
    Ok(PhaseEvents {
        ed_frame,
        es_frame,
        ed_degenerate,
        es_degenerate,
    })
}

/// Average frame distance: mean absolute difference between index lists.
pub fn afd(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Input("aFD needs at least one example".into()));
    }
    let total: usize = predicted
        .iter()
        .zip(labels)
        .map(|(p, l)| p.abs_diff(*l))
        .sum();
    Ok(total as f64 / predicted.len() as f64)
}

/// Mean signed difference `a − b`; negative means `a` comes earlier.
pub fn systematic_offset(frames_a: &[usize], frames_b: &[usize]) -> Result<f64> {
    if frames_a.len() != frames_b.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} vs {}",
            frames_a.len(),
            frames_b.len()
        )));
    }
    if frames_a.is_empty() {
        return Err(Error::Input("offset needs at least one pair".into()));
    }
    let total: f64 = frames_a
        .iter()
        .zip(frames_b)
        .map(|(a, b)| *a as f64 - *b as f64)
        .sum();
    Ok(total / frames_a.len() as f64)
}

pub const FPS_BIN_WIDTH: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsBin {
    pub fps_low: f64,
    pub fps_high: f64,
    pub count: usize,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRateAnalysis {
    pub bins: Vec<FpsBin>,
    /// Least-squares slope of error against fps through the origin.
    pub slope: f64,
}

/// Mean absolute frame error per 10-fps bin plus a proportionality fit.
pub fn afd_by_sampling_rate(per_clip: &[(f64, f64)]) -> Result<SamplingRateAnalysis> {
    if per_clip.is_empty() {
        return Err(Error::Input("no clips to bin".into()));
    }
    let mut bins: std::collections::BTreeMap<i64, (usize, f64)> = Default::default();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (fps, err) in per_clip {
        if !(fps.is_finite() && *fps > 0.0 && err.is_finite()) {
            return Err(Error::Input(format!("bad entry fps={fps} error={err}")));
        }
        let key = (fps / FPS_BIN_WIDTH).floor() as i64;
        let slot = bins.entry(key).or_default();
        slot.0 += 1;
        slot.1 += err.abs();
        sxy += fps * err.abs();
        sxx += fps * fps;
    }
    Ok(SamplingRateAnalysis {
        bins: bins
            .into_iter()
            .map(|(k, (count, sum))| FpsBin {
                fps_low: k as f64 * FPS_BIN_WIDTH,
                fps_high: (k + 1) as f64 * FPS_BIN_WIDTH,
                count,
                mean_abs_error: sum / count as f64,
            })
            .collect(),
        slope: sxy / sxx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(values: &[f64]) -> AreaSeries {
        AreaSeries::new("t", 50.0, values.to_vec()).unwrap()
    }

    /// Independent reference: enumerate every index pair, keep the maximal
    /// qualifying intervals, compare distances pairwise.
    pub(crate) fn brute_force(values: &[f64], reference: usize, mode: PhaseMode) -> Option<usize> {
        let n = values.len();
        let median = {
            let mut below_or_equal = None;
            // smallest value with at least ceil(n/2) values <= it
            for v in values {
                let count = values.iter().filter(|w| *w <= v).count();
                if count >= n.div_ceil(2) && below_or_equal.is_none_or(|b: f64| *v < b) {
                    below_or_equal = Some(*v);
                }
            }
            below_or_equal.unwrap()
        };
        let qualifies = |v: f64| match mode {
            PhaseMode::Es => v < median,
            PhaseMode::Ed => v > median,
        };
        let mut blocks = Vec::new();
        for i in 0..n {
            for j in i..n {
                let all = (i..=j).all(|k| qualifies(values[k]));
                let left_max = i == 0 || !qualifies(values[i - 1]);
                let right_max = j == n - 1 || !qualifies(values[j + 1]);
                if all && left_max && right_max {
                    blocks.push((i, j));
                }
            }
        }
        let dist = |(i, j): (usize, usize)| {
            if i <= reference && reference <= j {
                0
            } else if reference < i {
                i - reference
            } else {
                reference - j
            }
        };
        let mut chosen: Option<(usize, usize)> = None;
        for b in blocks {
            match chosen {
                None => chosen = Some(b),
                Some(c) if dist(b) < dist(c) || (dist(b) == dist(c) && b.0 < c.0) => {
                    chosen = Some(b)
                }
                _ => {}
            }
        }
        let (i, j) = chosen?;
        let mut best = i;
        for k in i..=j {
            let better = match mode {
                PhaseMode::Es => values[k] < values[best],
                PhaseMode::Ed => values[k] > values[best],
            };
            if better {
                best = k;
            }
        }
        Some(best)
    }

    #[test]
    fn worked_examples() {
        let s = series(&[5.0, 3.0, 1.0, 3.0, 5.0, 7.0, 9.0, 7.0, 5.0]);
        assert_eq!(lower_median(&s.values), 5.0);
        assert_eq!(detect_extreme_frame(&s, 2, PhaseMode::Es).unwrap(), 2);
        assert_eq!(detect_extreme_frame(&s, 6, PhaseMode::Ed).unwrap(), 6);
    }

    #[test]
    fn nearest_block_wins() {
        let mut v = vec![10.0; 16];
        for (i, x) in [
            (1, 4.0),
            (2, 2.0),
            (3, 4.0),
            (11, 5.0),
            (12, 3.0),
            (13, 5.0),
        ] {
            v[i] = x;
        }
        let s = series(&v);
        assert_eq!(detect_extreme_frame(&s, 12, PhaseMode::Es).unwrap(), 12);
        assert_eq!(detect_extreme_frame(&s, 5, PhaseMode::Es).unwrap(), 2);
        assert_eq!(brute_force(&v, 12, PhaseMode::Es), Some(12));
    }

    #[test]
    fn equidistant_blocks_prefer_earlier() {
        let v = [1.0, 9.0, 9.0, 9.0, 1.0, 9.0, 9.0];
        // blocks {0} and {4}, reference 2 is 2 away from both
        assert_eq!(
            detect_extreme_frame(&series(&v), 2, PhaseMode::Es).unwrap(),
            0
        );
    }

    #[test]
    fn constant_series_is_degenerate() {
        let s = series(&[4.0; 10]);
        assert!(matches!(
            detect_extreme_frame(&s, 3, PhaseMode::Es),
            Err(Error::DegenerateSeries(_))
        ));
        let events = detect_phase_events(&s, 2, 7).unwrap();
        assert_eq!((events.ed_frame, events.es_frame), (2, 7));
        assert!(events.ed_degenerate && events.es_degenerate);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(
            detect_extreme_frame(&series(&[1.0, 2.0]), 0, PhaseMode::Es),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            detect_extreme_frame(&series(&[1.0, 2.0, 3.0]), 3, PhaseMode::Es),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn afd_and_offset_examples() {
        assert_eq!(afd(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(afd(&[3, 10], &[5, 10]).unwrap(), 1.0);
        assert!(afd(&[1], &[1, 2]).is_err());
        assert_eq!(systematic_offset(&[4, 5], &[4, 5]).unwrap(), 0.0);
        assert_eq!(systematic_offset(&[3, 8, 10], &[5, 10, 12]).unwrap(), -2.0);
        assert!(systematic_offset(&[1], &[]).is_err());
    }

    #[test]
    fn sampling_rate_bins() {
        let zero = afd_by_sampling_rate(&[(30.0, 0.0), (55.0, 0.0)]).unwrap();
        assert!(zero.bins.iter().all(|b| b.mean_abs_error == 0.0));
        assert_eq!(zero.slope, 0.0);

        let k = 0.037;
        let data: Vec<_> = (0..40)
            .map(|i| (20.0 + i as f64 * 1.7, k * (20.0 + i as f64 * 1.7)))
            .collect();
        let fit = afd_by_sampling_rate(&data).unwrap();
        assert!((fit.slope - k).abs() < 1e-9);

        let single = afd_by_sampling_rate(&[(42.0, 2.0)]).unwrap();
        assert_eq!(single.bins.len(), 1);
        assert_eq!(single.bins[0].fps_low, 40.0);
        assert!(single.slope.is_finite());
    }

    #[test]
    fn periodic_series_es_is_beat_minimum() {
        let period = 16.0;
        let v: Vec<f64> = (0..64)
            .map(|t| 100.0 + 20.0 * (2.0 * std::f64::consts::PI * t as f64 / period).sin())
            .collect();
        // minima at t = 12, 28, 44, 60
        for (reference, expected) in [(10, 12), (30, 28), (45, 44)] {
            assert_eq!(
                detect_extreme_frame(&series(&v), reference, PhaseMode::Es).unwrap(),
                expected
            );
        }
    }

    #[test]
    fn matches_brute_force_on_random_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(16..=64);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64).collect();
            let r = rng.random_range(0..n);
            for mode in [PhaseMode::Es, PhaseMode::Ed] {
                let fast = detect_extreme_frame(&series(&v), r, mode).ok();
                assert_eq!(fast, brute_force(&v, r, mode));
            }
        }
    }

    proptest! {
        #[test]
        fn afd_zero_iff_equal(a in proptest::collection::vec(0usize..100, 1..20), shift in 0usize..3) {
            let b: Vec<usize> = a.iter().map(|x| x + shift).collect();
            let d = afd(&a, &b).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d == 0.0, shift == 0);
            prop_assert_eq!(d, afd(&b, &a).unwrap());
        }

        #[test]
        fn repeated_calls_agree(v in proptest::collection::vec(0u8..4, 3..40), r in 0usize..40) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let r = r % v.len();
            let s = series(&v);
            let first = detect_extreme_frame(&s, r, PhaseMode::Ed).ok();
            prop_assert_eq!(first, detect_extreme_frame(&s, r, PhaseMode::Ed).ok());
        }
    }
}
