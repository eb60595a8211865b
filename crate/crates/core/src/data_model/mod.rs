//! Clip, mask and label types shared by every stage of the pipeline.

mod manifest;
mod morphology;
mod raster;
mod tensor_io;

pub use manifest::{
    load_manifest, parse_corrupted_csv, parse_records_csv, parse_tracings_csv, save_manifest,
    write_corrupted_csv, write_records_csv, CorruptionReason, DatasetManifest, ManifestRecord,
    Split, CORRUPTED_FILE, RECORDS_FILE, TRACINGS_FILE,
};
pub use morphology::{count_components, dilate, erode, largest_component, mask_area};
pub use raster::{rasterize_tracing, Chord, PolygonalTracing, COMPLETE_CHORDS};
pub use tensor_io::{
    decode_png_gray, decode_tensor, encode_tensor, load_binary_masks, load_soft_masks,
    load_soft_masks_as, load_video, mask_path, save_binary_masks, save_soft_masks,
    save_soft_masks_as, save_video, save_video_png, Dtype, TensorData, TensorHeader,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted frame side length.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClipSource {
    Real,
    Synthetic,
    Phantom,
}

/// A `T×H×W` grayscale frame sequence with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    id: String,
    fps: f64,
    source: ClipSource,
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl VideoClip {
    pub fn new(
        id: impl Into<String>,
        fps: f64,
        source: ClipSource,
        (frames, height, width): (usize, usize, usize),
        data: Vec<f32>,
    ) -> Result<Self> {
        if frames < 1 {
            return Err(Error::Input("a clip needs at least one frame".into()));
        }
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::Input(format!(
                "frame size {height}x{width} below minimum {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Input(format!("fps must be positive, got {fps}")));
        }
        let expected = frames * height * width;
        if data.len() != expected {
            return Err(Error::shape("clip data length", expected, data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self {
            id: id.into(),
            fps,
            source,
            frames,
            height,
            width,
            data,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn source(&self) -> ClipSource {
        self.source
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Returns a copy whose frames `[start, start + len)` are kept.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(Error::Input(format!(
                "window [{start}, {}) outside clip of {} frames",
                start + len,
                self.frames
            )));
        }
        let n = self.height * self.width;
        Ok(Self {
            id: self.id.clone(),
            fps: self.fps,
            source: self.source,
            frames: len,
            height: self.height,
            width: self.width,
            data: self.data[start * n..(start + len) * n].to_vec(),
        })
    }

    /// Replaces frame `t`; values are clamped to `[0, 1]`.
    pub fn set_frame(&mut self, t: usize, pixels: &[f32]) -> Result<()> {
        let n = self.height * self.width;
        if pixels.len() != n {
            return Err(Error::shape("frame pixels", n, pixels.len()));
        }
        if t >= self.frames {
            return Err(Error::shape("frame index", self.frames, t));
        }
        for (dst, src) in self.data[t * n..(t + 1) * n].iter_mut().zip(pixels) {
            *dst = src.clamp(0.0, 1.0);
        }
        Ok(())
    }
}

/// A single-frame boolean mask in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("mask data length", height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a || *b)
            .collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.height != other.height {
            return Err(Error::shape("mask height", self.height, other.height));
        }
        if self.width != other.width {
            return Err(Error::shape("mask width", self.width, other.width));
        }
        Ok(())
    }
}

/// Per-frame boolean masks for one clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMaskSequence {
    clip_id: String,
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMaskSequence {
    pub fn new(
        clip_id: impl Into<String>,
        (frames, height, width): (usize, usize, usize),
        data: Vec<bool>,
    ) -> Result<Self> {
        let expected = frames * height * width;
        if data.len() != expected {
            return Err(Error::shape("mask sequence length", expected, data.len()));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            frames,
            height,
            width,
            data,
        })
    }

    pub fn from_frames(clip_id: impl Into<String>, masks: &[BinaryMask]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::Input("mask sequence needs at least one frame".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            first.check_same_shape(m)?;
            data.extend_from_slice(&m.data);
        }
        Self::new(clip_id, (masks.len(), h, w), data)
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn frame(&self, t: usize) -> BinaryMask {
        let n = self.height * self.width;
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data[t * n..(t + 1) * n].to_vec(),
        }
    }

    pub fn frame_slice(&self, t: usize) -> &[bool] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn areas(&self) -> Vec<usize> {
        (0..self.frames)
            .map(|t| self.frame_slice(t).iter().filter(|v| **v).count())
            .collect()
    }

    /// Checks that the sequence is the right shape for `clip`.
    pub fn check_matches(&self, clip: &VideoClip) -> Result<()> {
        let (t, h, w) = clip.dims();
        if self.frames != t {
            return Err(Error::shape("frames", t, self.frames));
        }
        if self.height != h {
            return Err(Error::shape("height", h, self.height));
        }
        if self.width != w {
            return Err(Error::shape("width", w, self.width));
        }
        Ok(())
    }

    pub fn map_frames(&self, mut f: impl FnMut(&BinaryMask) -> BinaryMask) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for t in 0..self.frames {
            data.extend_from_slice(&f(&self.frame(t)).data);
        }
        Self {
            clip_id: self.clip_id.clone(),
            frames: self.frames,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Per-frame probability masks for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMaskSequence {
    clip_id: String,
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl SoftMaskSequence {
    pub fn new(
        clip_id: impl Into<String>,
        (frames, height, width): (usize, usize, usize),
        data: Vec<f32>,
    ) -> Result<Self> {
        let expected = frames * height * width;
        if data.len() != expected {
            return Err(Error::shape("soft mask length", expected, data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("probability {bad} outside [0, 1]")));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            frames,
            height,
            width,
            data,
        })
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn threshold(&self, threshold: f32) -> BinaryMaskSequence {
        BinaryMaskSequence {
            clip_id: self.clip_id.clone(),
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|p| *p > threshold).collect(),
        }
    }

    pub fn check_matches(&self, clip: &VideoClip) -> Result<()> {
        let (t, h, w) = clip.dims();
        if self.frames != t {
            return Err(Error::shape("frames", t, self.frames));
        }
        if self.height != h {
            return Err(Error::shape("height", h, self.height));
        }
        if self.width != w {
            return Err(Error::shape("width", w, self.width));
        }
        Ok(())
    }
}

/// Human (or phantom) labels attached to one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipLabels {
    pub ed_frame: usize,
    pub es_frame: usize,
    /// Ejection fraction in percent.
    pub ef: f64,
    #[serde(default)]
    pub tracings: Vec<PolygonalTracing>,
}

impl ClipLabels {
    pub fn validate(&self, num_frames: usize) -> Result<()> {
        if self.ed_frame >= num_frames || self.es_frame >= num_frames {
            return Err(Error::Input(format!(
                "ED/ES frames ({}, {}) outside clip of {num_frames} frames",
                self.ed_frame, self.es_frame
            )));
        }
        if self.ed_frame == self.es_frame {
            return Err(Error::Input("ED and ES frames coincide".into()));
        }
        if !(0.0..=100.0).contains(&self.ef) {
            return Err(Error::Input(format!("EF {} outside [0, 100]", self.ef)));
        }
        Ok(())
    }
}
