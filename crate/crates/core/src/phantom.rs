//! Synthetic beating-ventricle clips with exact ground truth.
//!
//! Each frame shows a dark elliptical cavity whose semiaxes pulse
//! sinusoidally, ringed by a bright wall, on a mid-gray background with
//! additive Gaussian speckle.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::{
    dilate, erode, BinaryMask, BinaryMaskSequence, ClipLabels, ClipSource, SoftMaskSequence,
    VideoClip,
};
use crate::error::{Error, Result};

pub const CAVITY_INTENSITY: f32 = 0.1;
pub const WALL_INTENSITY: f32 = 0.85;
pub const BACKGROUND_INTENSITY: f32 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub clip_id: String,
    pub period_frames: f64,
    pub amplitude: f64,
    /// Radians.
    pub phase: f64,
    /// Horizontal and vertical base semiaxes, pixels.
    pub semiaxes: (f64, f64),
    /// Cavity center in continuous pixel coordinates `(x, y)`.
    pub center: (f64, f64),
    pub wall_thickness: f64,
    pub noise_std: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    pub seed: u64,
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::PhantomConfig(msg));
        let (a0, b0) = self.semiaxes;
        if !(self.period_frames.is_finite() && self.period_frames > 2.0) {
            return fail(format!(
                "period {} must exceed 2 frames",
                self.period_frames
            ));
        }
        if self.period_frames >= self.frames as f64 {
            return fail(format!(
                "period {} leaves no full beat in {} frames",
                self.period_frames, self.frames
            ));
        }
        if !(0.0..1.0).contains(&self.amplitude) {
            return fail(format!("amplitude {} outside [0, 1)", self.amplitude));
        }
        if !(a0 > 0.0 && b0 > 0.0) {
            return fail("semiaxes must be positive".into());
        }
        if !(self.wall_thickness >= 1.0) {
            return fail(format!("wall thickness {} below 1 px", self.wall_thickness));
        }
        if !(self.noise_std >= 0.0) {
            return fail(format!("noise_std {} negative", self.noise_std));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return fail(format!("fps {} must be positive", self.fps));
        }
        if self.height < 8 || self.width < 8 {
            return fail(format!("frame {}x{} too small", self.height, self.width));
        }
        let half = self.height.min(self.width) as f64 / 2.0;
        let reach_x = a0 * (1.0 + self.amplitude) + self.wall_thickness;
        let reach_y = b0 * (1.0 + self.amplitude) + self.wall_thickness;
        if reach_x.max(reach_y) >= half {
            return fail(format!(
                "outer wall reaches {:.2} px, frame half-size is {half}",
                reach_x.max(reach_y)
            ));
        }
        let (cx, cy) = self.center;
        if cx - reach_x < 0.0
            || cx + reach_x > self.width as f64
            || cy - reach_y < 0.0
            || cy + reach_y > self.height as f64
        {
            return fail("wall leaves the frame at this center".into());
        }
        Ok(())
    }

    /// Cavity semiaxes at frame `t`.
    pub fn semiaxes_at(&self, t: usize) -> (f64, f64) {
        let s = 1.0 + self.amplitude * self.oscillation(t);
        (self.semiaxes.0 * s, self.semiaxes.1 * s)
    }

    fn oscillation(&self, t: usize) -> f64 {
        (2.0 * PI * t as f64 / self.period_frames + self.phase).sin()
    }

    /// Continuous cavity area `π·a(t)·b(t)` for every frame.
    pub fn analytic_areas(&self) -> Vec<f64> {
        (0..self.frames)
            .map(|t| {
                let (a, b) = self.semiaxes_at(t);
                PI * a * b
            })
            .collect()
    }

    /// The half-open frame window `[start, end)` one period long, centered on `T/2`.
    pub fn reference_beat(&self) -> (usize, usize) {
        let mid = (self.frames / 2) as f64;
        let half = self.period_frames / 2.0;
        let start = (mid - half).ceil().max(0.0) as usize;
        let end = ((mid + half).ceil() as usize).min(self.frames);
        (start, end)
    }

    /// Draws a plausible parameter set for a `frames×size×size`-style clip.
    pub fn sample(
        clip_id: impl Into<String>,
        seed: u64,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = height.min(width) as f64;
        let period = rng.random_range(0.25..0.45) * frames as f64;
        let amplitude = rng.random_range(0.12..0.25);
        let a0 = side * rng.random_range(0.19..0.23);
        let b0 = a0 * rng.random_range(0.65..0.85);
        let wall = rng.random_range(3..=4) as f64;
        let reach = a0.max(b0) * (1.0 + amplitude) + wall;
        let slack = (side / 2.0 - reach - 1.0).clamp(0.0, 4.0);
        let jitter = |rng: &mut ChaCha8Rng| {
            if slack > 0.0 {
                rng.random_range(-slack..slack)
            } else {
                0.0
            }
        };
        let cx = width as f64 / 2.0 + jitter(&mut rng);
        let cy = height as f64 / 2.0 + jitter(&mut rng);
        Self {
            clip_id: clip_id.into(),
            period_frames: period.max(3.0),
            amplitude,
            phase: rng.random_range(0.0..2.0 * PI),
            semiaxes: (a0, b0),
            center: (cx, cy),
            wall_thickness: wall,
            noise_std: 0.08,
            frames,
            height,
            width,
            fps: rng.random_range(25.0..75.0),
            seed: rng.random(),
        }
    }
}

/// Pixel membership of frame `t`: cavity and wall ring, sampled at pixel centers.
fn frame_regions(params: &PhantomParams, t: usize) -> (BinaryMask, BinaryMask) {
    let (a, b) = params.semiaxes_at(t);
    let (wa, wb) = (a + params.wall_thickness, b + params.wall_thickness);
    let (cx, cy) = params.center;
    let inside = |x: f64, y: f64, sa: f64, sb: f64| {
        let (u, v) = ((x - cx) / sa, (y - cy) / sb);
        u * u + v * v <= 1.0
    };
    let cavity = BinaryMask::from_fn(params.height, params.width, |r, c| {
        inside(c as f64 + 0.5, r as f64 + 0.5, a, b)
    });
    let wall = BinaryMask::from_fn(params.height, params.width, |r, c| {
        let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
        inside(x, y, wa, wb) && !inside(x, y, a, b)
    });
    (cavity, wall)
}

/// Ground-truth cavity masks for every frame.
pub fn cavity_masks(params: &PhantomParams) -> BinaryMaskSequence {
    let frames: Vec<_> = (0..params.frames)
        .map(|t| frame_regions(params, t).0)
        .collect();
    BinaryMaskSequence::from_frames(&params.clip_id, &frames).expect("consistent frame shapes")
}

/// Wall-ring masks for every frame.
pub fn wall_masks(params: &PhantomParams) -> BinaryMaskSequence {
    let frames: Vec<_> = (0..params.frames)
        .map(|t| frame_regions(params, t).1)
        .collect();
    BinaryMaskSequence::from_frames(&params.clip_id, &frames).expect("consistent frame shapes")
}

fn argmax_by(values: &[f64], range: (usize, usize), better: impl Fn(f64, f64) -> bool) -> usize {
    let (start, end) = range;
    let mut best = start;
    for t in start..end {
        if better(values[t], values[best]) {
            best = t;
        }
    }
    best
}

/// Renders the clip and its exact labels.
pub fn generate_phantom(
    params: &PhantomParams,
) -> Result<(VideoClip, BinaryMaskSequence, ClipLabels)> {
    params.validate()?;
    if params.amplitude == 0.0 {
        return Err(Error::DegeneratePhantom(
            "zero amplitude: constant area, no ED/ES frames exist".into(),
        ));
    }
    let normal = Normal::new(0.0f64, params.noise_std.max(0.0))
        .map_err(|e| Error::PhantomConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (h, w) = (params.height, params.width);
    let mut data = Vec::with_capacity(params.frames * h * w);
    let mut cavities = Vec::with_capacity(params.frames);
    for t in 0..params.frames {
        let (cavity, wall) = frame_regions(params, t);
        for (is_cavity, is_wall) in cavity.as_slice().iter().zip(wall.as_slice()) {
            let base = if *is_cavity {
                CAVITY_INTENSITY
            } else if *is_wall {
                WALL_INTENSITY
            } else {
                BACKGROUND_INTENSITY
            };
            let noise = if params.noise_std > 0.0 {
                normal.sample(&mut rng) as f32
            } else {
                0.0
            };
            data.push((base + noise).clamp(0.0, 1.0));
        }
        cavities.push(cavity);
    }
    let clip = VideoClip::new(
        &params.clip_id,
        params.fps,
        ClipSource::Phantom,
        (params.frames, h, w),
        data,
    )?;
    let masks = BinaryMaskSequence::from_frames(&params.clip_id, &cavities)?;

    let areas = params.analytic_areas();
    let beat = params.reference_beat();
    let ed_frame = argmax_by(&areas, beat, |a, b| a > b);
    let es_frame = argmax_by(&areas, beat, |a, b| a < b);
    // area-length volume scaling: V ∝ A^{3/2}
    let ef = 100.0 * (1.0 - (areas[es_frame] / areas[ed_frame]).powf(1.5));
    let labels = ClipLabels {
        ed_frame,
        es_frame,
        ef,
        tracings: Vec::new(),
    };
    Ok((clip, masks, labels))
}

/// Stand-in teacher: each frame's true mask is randomly eroded, kept or
/// dilated by one pixel, then softened by a 3×3 box filter.
pub fn analytic_teacher(truth: &BinaryMaskSequence, seed: u64) -> SoftMaskSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t_len, h, w) = truth.dims();
    let mut data = Vec::with_capacity(t_len * h * w);
    for t in 0..t_len {
        let frame = truth.frame(t);
        let corrupted = match rng.random_range(0..3) {
            0 => erode(&frame, 1),
            1 => frame,
            _ => dilate(&frame, 1),
        };
        data.extend(box_blur3(&corrupted));
    }
    SoftMaskSequence::new(truth.clip_id(), (t_len, h, w), data).expect("blur stays in [0, 1]")
}

fn box_blur3(mask: &BinaryMask) -> Vec<f32> {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let mut out = Vec::with_capacity((h * w) as usize);
    for r in 0..h {
        for c in 0..w {
            let mut hits = 0u32;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (y, x) = (r + dr, c + dc);
                    if y >= 0 && y < h && x >= 0 && x < w && mask.get(y as usize, x as usize) {
                        hits += 1;
                    }
                }
            }
            out.push(hits as f32 / 9.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{count_components, mask_area};

    fn params(period: f64, phase: f64, frames: usize) -> PhantomParams {
        PhantomParams {
            clip_id: "p".into(),
            period_frames: period,
            amplitude: 0.25,
            phase,
            semiaxes: (14.0, 10.0),
            center: (32.0, 32.0),
            wall_thickness: 3.0,
            noise_std: 0.08,
            frames,
            height: 64,
            width: 64,
            fps: 50.0,
            seed: 11,
        }
    }

    #[test]
    fn zero_amplitude_is_degenerate() {
        let mut p = params(20.0, 0.0, 40);
        p.amplitude = 0.0;
        assert!(matches!(
            generate_phantom(&p),
            Err(Error::DegeneratePhantom(_))
        ));
        let areas = cavity_masks(&p).areas();
        assert!(areas.iter().all(|a| *a == areas[0]));
    }

    #[test]
    fn es_frame_matches_brute_force_minimum() {
        let p = params(20.0, 0.0, 40);
        let (_, masks, labels) = generate_phantom(&p).unwrap();
        assert!(labels.es_frame == 15 || labels.es_frame == 35);
        assert_eq!(labels.es_frame, 15);
        assert_eq!(labels.ed_frame, 25);
        // brute force over the exact area series inside the reference beat
        let areas = p.analytic_areas();
        let (s, e) = p.reference_beat();
        let oracle = (s..e)
            .min_by(|x, y| areas[*x].total_cmp(&areas[*y]))
            .unwrap();
        assert_eq!(labels.es_frame, oracle);
        // pixel areas agree with the analytic extremum within a frame
        let px = masks.areas();
        let px_min = (s..e).min_by_key(|t| px[*t]).unwrap();
        assert!(px_min.abs_diff(labels.es_frame) <= 1);
    }

    #[test]
    fn noiseless_cavity_darker_than_wall() {
        let mut p = params(20.0, 0.3, 40);
        p.noise_std = 0.0;
        let (clip, masks, _) = generate_phantom(&p).unwrap();
        let walls = wall_masks(&p);
        for t in 0..clip.num_frames() {
            let frame = clip.frame(t);
            let darkest_wall = frame
                .iter()
                .zip(walls.frame_slice(t))
                .filter(|(_, w)| **w)
                .map(|(v, _)| *v)
                .fold(f32::INFINITY, f32::min);
            let brightest_cavity = frame
                .iter()
                .zip(masks.frame_slice(t))
                .filter(|(_, m)| **m)
                .map(|(v, _)| *v)
                .fold(f32::NEG_INFINITY, f32::max);
            assert!(brightest_cavity < darkest_wall);
        }
    }

    #[test]
    fn same_seed_same_clip() {
        let p = PhantomParams::sample("x", 99, 64, 64, 64);
        let a = generate_phantom(&p).unwrap();
        let b = generate_phantom(&p).unwrap();
        assert_eq!(a.0.data(), b.0.data());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn masks_connected_and_contain_center() {
        for seed in 0..10 {
            let p = PhantomParams::sample(format!("s{seed}"), seed, 48, 64, 64);
            p.validate().unwrap();
            let masks = cavity_masks(&p);
            let (cx, cy) = p.center;
            for t in 0..p.frames {
                let m = masks.frame(t);
                assert_eq!(count_components(&m), 1);
                assert!(m.get(cy as usize, cx as usize));
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params(20.0, 0.0, 40);
        p.semiaxes = (30.0, 10.0);
        assert!(matches!(p.validate(), Err(Error::PhantomConfig(_))));
        let mut p = params(50.0, 0.0, 40);
        p.period_frames = 50.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn teacher_close_to_truth() {
        let p = params(20.0, 0.0, 40);
        let (_, truth, _) = generate_phantom(&p).unwrap();
        let teacher = analytic_teacher(&truth, 5).threshold(0.5);
        for t in 0..truth.num_frames() {
            let (a, b) = (truth.frame(t), teacher.frame(t));
            let inter = mask_area(&a.intersection(&b).unwrap()) as f64;
            let dice = 2.0 * inter / (mask_area(&a) + mask_area(&b)) as f64;
            assert!(dice > 0.8, "frame {t}: {dice}");
        }
    }
}
