//! On-disk tensors: a raw little-endian blob `<stem>.bin` described by a JSON
//! sidecar `<stem>.json` (`{"shape":[T,H,W],"dtype":"u8"}`), or a directory of
//! 8-bit PNG frames for videos.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BinaryMaskSequence, ClipSource, SoftMaskSequence, VideoClip};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Upper bound on decoded element count, rejects absurd sidecars before allocating.
pub const MAX_ELEMENTS: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub shape: [usize; 3],
    pub dtype: Dtype,
}

impl TensorHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let header: Self = serde_json::from_slice(bytes)
            .map_err(|e| Error::Format(format!("tensor sidecar: {e}")))?;
        header.element_count()?;
        Ok(header)
    }

    pub fn element_count(&self) -> Result<usize> {
        let n = self
            .shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .filter(|n| *n <= MAX_ELEMENTS)
            .ok_or_else(|| Error::Format(format!("tensor shape {:?} too large", self.shape)))?;
        Ok(n)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

/// Decodes a raw blob against its header; the byte length must match exactly.
pub fn decode_tensor(header: &TensorHeader, bytes: &[u8]) -> Result<TensorData> {
    let n = header.element_count()?;
    let expected = n
        .checked_mul(header.dtype.size())
        .ok_or_else(|| Error::Format("tensor byte size overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "tensor blob has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    Ok(match header.dtype {
        Dtype::U8 => TensorData::U8(bytes.to_vec()),
        Dtype::F32 => TensorData::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    })
}

pub fn encode_tensor(data: &TensorData) -> Vec<u8> {
    match data {
        TensorData::U8(v) => v.clone(),
        TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

fn sidecar_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}.bin")),
        dir.join(format!("{stem}.json")),
    )
}

/// Path of the blob for `stem` inside a tensor store directory.
pub fn mask_path(dir: impl AsRef<Path>, stem: &str) -> PathBuf {
    sidecar_paths(dir.as_ref(), stem).0
}

fn write_tensor(dir: &Path, stem: &str, header: &TensorHeader, data: &TensorData) -> Result<()> {
    let (bin, json) = sidecar_paths(dir, stem);
    write_atomic(&bin, &encode_tensor(data))?;
    let header_json = serde_json::to_vec(header).expect("header serializes");
    write_atomic(&json, &header_json)
}

fn read_tensor(dir: &Path, stem: &str) -> Result<(TensorHeader, TensorData)> {
    let (bin, json) = sidecar_paths(dir, stem);
    let header_bytes = std::fs::read(&json).map_err(|e| Error::io(&json, e))?;
    let header = TensorHeader::parse(&header_bytes)?;
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let data = decode_tensor(&header, &bytes)?;
    Ok((header, data))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a clip as raw `u8` intensities (values scaled by 255).
pub fn save_video(dir: impl AsRef<Path>, clip: &VideoClip) -> Result<()> {
    let (t, h, w) = clip.dims();
    let header = TensorHeader {
        shape: [t, h, w],
        dtype: Dtype::U8,
    };
    let data = TensorData::U8(clip.data().iter().map(|v| quantize(*v)).collect());
    write_tensor(dir.as_ref(), clip.id(), &header, &data)
}

/// Writes a clip as `<dir>/<id>/frame_00000.png`, one 8-bit grayscale PNG per frame.
pub fn save_video_png(dir: impl AsRef<Path>, clip: &VideoClip) -> Result<()> {
    let frame_dir = dir.as_ref().join(clip.id());
    std::fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
    for t in 0..clip.num_frames() {
        let path = frame_dir.join(format!("frame_{t:05}.png"));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut encoder = png::Encoder::new(
            BufWriter::new(file),
            clip.width() as u32,
            clip.height() as u32,
        );
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let pixels: Vec<u8> = clip.frame(t).iter().map(|v| quantize(*v)).collect();
        encoder
            .write_header()
            .and_then(|mut w| w.write_image_data(&pixels))
            .map_err(|e| Error::Format(format!("png encode {}: {e}", path.display())))?;
    }
    Ok(())
}

/// Decodes one PNG into 8-bit grayscale; color images are averaged over channels.
pub fn decode_png_gray(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png header: {e}")))?;
    let (width, height) = {
        let info = reader.info();
        (info.width as usize, info.height as usize)
    };
    if width.checked_mul(height).is_none_or(|n| n > MAX_ELEMENTS) {
        return Err(Error::Format("png too large".into()));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png data: {e}")))?;
    let channels = frame.color_type.samples();
    let stride = frame.line_size;
    let mut gray = Vec::with_capacity(width * height);
    for row in buf[..frame.buffer_size()].chunks(stride).take(height) {
        for px in row.chunks(channels).take(width) {
            let color = match frame.color_type {
                png::ColorType::GrayscaleAlpha => &px[..1],
                png::ColorType::Rgba => &px[..3],
                _ => px,
            };
            let sum: u32 = color.iter().map(|v| *v as u32).sum();
            gray.push(((sum + color.len() as u32 / 2) / color.len() as u32) as u8);
        }
    }
    if gray.len() != width * height {
        return Err(Error::Format("png pixel data truncated".into()));
    }
    Ok((height, width, gray))
}

fn load_png_dir(frame_dir: &Path) -> Result<((usize, usize, usize), Vec<f32>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(frame_dir)
        .map_err(|e| Error::io(frame_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!(
            "no PNG frames in {}",
            frame_dir.display()
        )));
    }
    let mut dims = None;
    let mut data = Vec::new();
    for path in &files {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (h, w, gray) = decode_png_gray(&bytes)?;
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::Format(format!(
                    "{} is {h}x{w}, earlier frames are {}x{}",
                    path.display(),
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        data.extend(gray.iter().map(|v| *v as f32 / 255.0));
    }
    let (h, w) = dims.expect("at least one frame");
    Ok(((files.len(), h, w), data))
}

/// Loads a clip, detecting raw tensor (`<id>.json` sidecar) or PNG directory (`<id>/`).
pub fn load_video(
    dir: impl AsRef<Path>,
    clip_id: &str,
    fps: f64,
    source: ClipSource,
) -> Result<VideoClip> {
    let dir = dir.as_ref();
    let (_, json) = sidecar_paths(dir, clip_id);
    let (dims, data) = if json.exists() {
        let (header, data) = read_tensor(dir, clip_id)?;
        let values = match data {
            TensorData::U8(v) => v.iter().map(|x| *x as f32 / 255.0).collect(),
            TensorData::F32(v) => v,
        };
        (header.dims(), values)
    } else if dir.join(clip_id).is_dir() {
        load_png_dir(&dir.join(clip_id))?
    } else {
        return Err(Error::io(
            json,
            std::io::Error::new(std::io::ErrorKind::NotFound, "clip not found"),
        ));
    };
    VideoClip::new(clip_id, fps, source, dims, data)
}

pub fn save_binary_masks(dir: impl AsRef<Path>, masks: &BinaryMaskSequence) -> Result<()> {
    let (t, h, w) = masks.dims();
    let header = TensorHeader {
        shape: [t, h, w],
        dtype: Dtype::U8,
    };
    let data = TensorData::U8(masks.data().iter().map(|b| *b as u8).collect());
    write_tensor(dir.as_ref(), masks.clip_id(), &header, &data)
}

/// Loads binary masks; `u8` blobs must be 0/1, `f32` blobs are thresholded at 0.5.
pub fn load_binary_masks(dir: impl AsRef<Path>, clip_id: &str) -> Result<BinaryMaskSequence> {
    let (header, data) = read_tensor(dir.as_ref(), clip_id)?;
    let bits = match data {
        TensorData::U8(v) => v
            .iter()
            .map(|x| match x {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("binary mask value {other}"))),
            })
            .collect::<Result<Vec<_>>>()?,
        TensorData::F32(v) => v.iter().map(|p| *p > 0.5).collect(),
    };
    BinaryMaskSequence::new(clip_id, header.dims(), bits)
}

pub fn save_soft_masks(dir: impl AsRef<Path>, masks: &SoftMaskSequence) -> Result<()> {
    save_soft_masks_as(dir, masks.clip_id(), masks)
}

/// Stores soft masks under an arbitrary file stem, e.g. a content hash.
pub fn save_soft_masks_as(
    dir: impl AsRef<Path>,
    stem: &str,
    masks: &SoftMaskSequence,
) -> Result<()> {
    let (t, h, w) = masks.dims();
    let header = TensorHeader {
        shape: [t, h, w],
        dtype: Dtype::F32,
    };
    write_tensor(
        dir.as_ref(),
        stem,
        &header,
        &TensorData::F32(masks.data().to_vec()),
    )
}

pub fn load_soft_masks(dir: impl AsRef<Path>, clip_id: &str) -> Result<SoftMaskSequence> {
    load_soft_masks_as(dir, clip_id, clip_id)
}

pub fn load_soft_masks_as(
    dir: impl AsRef<Path>,
    stem: &str,
    clip_id: &str,
) -> Result<SoftMaskSequence> {
    let (header, data) = read_tensor(dir.as_ref(), stem)?;
    let values = match data {
        TensorData::F32(v) => v,
        TensorData::U8(v) => v.iter().map(|x| *x as f32 / 255.0).collect(),
    };
    SoftMaskSequence::new(clip_id, header.dims(), values)
}
