//! CSV manifests: `manifest.csv` for clip records, `corrupted.csv` for the
//! exclusion list and an optional `tracings.csv` for segment annotations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::raster::{Chord, PolygonalTracing, COMPLETE_CHORDS};
use super::ClipLabels;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const RECORDS_FILE: &str = "manifest.csv";
pub const CORRUPTED_FILE: &str = "corrupted.csv";
pub const TRACINGS_FILE: &str = "tracings.csv";

const RECORD_COLUMNS: [&str; 7] = [
    "clip_id",
    "split",
    "fps",
    "num_frames",
    "ed_frame",
    "es_frame",
    "ef",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TRAIN" => Ok(Split::Train),
            "VAL" => Ok(Split::Val),
            "TEST" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CorruptionReason {
    VideoCorrupt,
    LabelCorrupt,
    EdEsTooClose,
}

impl fmt::Display for CorruptionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionReason::VideoCorrupt => "VIDEO_CORRUPT",
            CorruptionReason::LabelCorrupt => "LABEL_CORRUPT",
            CorruptionReason::EdEsTooClose => "ED_ES_TOO_CLOSE",
        })
    }
}

impl FromStr for CorruptionReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "VIDEO_CORRUPT" => Ok(CorruptionReason::VideoCorrupt),
            "LABEL_CORRUPT" => Ok(CorruptionReason::LabelCorrupt),
            "ED_ES_TOO_CLOSE" => Ok(CorruptionReason::EdEsTooClose),
            other => Err(format!("unknown corruption reason {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub split: Split,
    pub fps: f64,
    pub num_frames: usize,
    pub labels: Option<ClipLabels>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub corrupted: BTreeMap<String, CorruptionReason>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::Manifest {
                    row: i + 2,
                    message: format!("duplicate clip_id {}", r.clip_id),
                });
            }
        }
        Ok(Self {
            records,
            corrupted: BTreeMap::new(),
        })
    }

    pub fn get(&self, clip_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.clip_id == clip_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn is_corrupted(&self, clip_id: &str) -> bool {
        self.corrupted.contains_key(clip_id)
    }

    /// Marks a clip; an id already listed keeps its first reason.
    pub fn mark_corrupted(&mut self, clip_id: impl Into<String>, reason: CorruptionReason) {
        self.corrupted.entry(clip_id.into()).or_insert(reason);
    }

    /// Restricts the manifest to one split, keeping the relevant exclusion entries.
    pub fn subset(&self, split: Split) -> Self {
        let records: Vec<_> = self.split(split).cloned().collect();
        let corrupted = self
            .corrupted
            .iter()
            .filter(|(id, _)| records.iter().any(|r| &r.clip_id == *id))
            .map(|(id, reason)| (id.clone(), *reason))
            .collect();
        Self { records, corrupted }
    }
}

fn manifest_err(row: usize, message: impl Into<String>) -> Error {
    Error::Manifest {
        row,
        message: message.into(),
    }
}

fn column_index(headers: &csv::StringRecord, names: &[&str]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| manifest_err(1, format!("missing column {name}")))
        })
        .collect()
}

fn parse_field<T: FromStr>(row: usize, column: &str, raw: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.trim()
        .parse()
        .map_err(|e| manifest_err(row, format!("bad {column} {raw:?}: {e}")))
}

/// Parses the records CSV. Rows are numbered like lines, the header being row 1.
pub fn parse_records_csv(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| manifest_err(1, e.to_string()))?
        .clone();
    let idx = column_index(&headers, &RECORD_COLUMNS)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| manifest_err(line, e.to_string()))?;
        let field = |k: usize| row.get(idx[k]).unwrap_or("").trim();
        let clip_id = field(0).to_string();
        if clip_id.is_empty() {
            return Err(manifest_err(line, "empty clip_id"));
        }
        if !seen.insert(clip_id.clone()) {
            return Err(manifest_err(line, format!("duplicate clip_id {clip_id}")));
        }
        let split: Split = parse_field(line, "split", field(1))?;
        let fps: f64 = parse_field(line, "fps", field(2))?;
        if !(fps.is_finite() && fps > 0.0) {
            return Err(manifest_err(
                line,
                format!("fps must be positive, got {fps}"),
            ));
        }
        let num_frames: usize = parse_field(line, "num_frames", field(3))?;
        let label_cells = [field(4), field(5), field(6)];
        let labels = match label_cells.iter().filter(|c| c.is_empty()).count() {
            3 => None,
            0 => {
                let labels = ClipLabels {
                    ed_frame: parse_field(line, "ed_frame", field(4))?,
                    es_frame: parse_field(line, "es_frame", field(5))?,
                    ef: parse_field(line, "ef", field(6))?,
                    tracings: Vec::new(),
                };
                labels
                    .validate(num_frames)
                    .map_err(|e| manifest_err(line, e.to_string()))?;
                Some(labels)
            }
            _ => {
                return Err(manifest_err(
                    line,
                    "labels must be all present or all empty",
                ))
            }
        };
        records.push(ManifestRecord {
            clip_id,
            split,
            fps,
            num_frames,
            labels,
        });
    }
    Ok(records)
}

pub fn parse_corrupted_csv(text: &str) -> Result<BTreeMap<String, CorruptionReason>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| manifest_err(1, e.to_string()))?
        .clone();
    let idx = column_index(&headers, &["clip_id", "reason"])?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| manifest_err(line, e.to_string()))?;
        let clip_id = row.get(idx[0]).unwrap_or("").trim().to_string();
        if clip_id.is_empty() {
            return Err(manifest_err(line, "empty clip_id"));
        }
        let reason: CorruptionReason = parse_field(line, "reason", row.get(idx[1]).unwrap_or(""))?;
        if out.insert(clip_id.clone(), reason).is_some() {
            return Err(manifest_err(
                line,
                format!("clip_id {clip_id} listed twice; one reason per id"),
            ));
        }
    }
    Ok(out)
}

/// Parses `clip_id,frame,x1,y1,x2,y2` rows, grouped per (clip, frame) in file order.
/// Frames with more than one complete tracing keep the first one and are
/// reported so the caller can flag the clip.
pub fn parse_tracings_csv(
    text: &str,
) -> Result<(BTreeMap<String, Vec<PolygonalTracing>>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| manifest_err(1, e.to_string()))?
        .clone();
    let idx = column_index(&headers, &["clip_id", "frame", "x1", "y1", "x2", "y2"])?;
    let mut grouped: BTreeMap<String, BTreeMap<usize, Vec<Chord>>> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| manifest_err(line, e.to_string()))?;
        let get = |k: usize| row.get(idx[k]).unwrap_or("");
        let clip_id = get(0).trim().to_string();
        let frame: usize = parse_field(line, "frame", get(1))?;
        let coords: Vec<f64> = (2..6)
            .map(|k| parse_field(line, ["x1", "y1", "x2", "y2"][k - 2], get(k)))
            .collect::<Result<_>>()?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(manifest_err(line, "non-finite coordinate"));
        }
        grouped
            .entry(clip_id)
            .or_default()
            .entry(frame)
            .or_default()
            .push(Chord::new(coords[0], coords[1], coords[2], coords[3]));
    }
    let mut duplicated = Vec::new();
    let mut out = BTreeMap::new();
    for (clip_id, frames) in grouped {
        let mut tracings = Vec::new();
        let mut dup = false;
        for (frame_index, mut chords) in frames {
            if chords.len() > COMPLETE_CHORDS {
                chords.truncate(COMPLETE_CHORDS);
                dup = true;
            }
            tracings.push(PolygonalTracing {
                frame_index,
                chords,
            });
        }
        if dup {
            duplicated.push(clip_id.clone());
        }
        out.insert(clip_id, tracings);
    }
    Ok((out, duplicated))
}

pub fn write_records_csv(records: &[ManifestRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECORD_COLUMNS).expect("in-memory write");
    for r in records {
        let (ed, es, ef) = match &r.labels {
            Some(l) => (
                l.ed_frame.to_string(),
                l.es_frame.to_string(),
                l.ef.to_string(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        let row = [
            r.clip_id.clone(),
            r.split.to_string(),
            r.fps.to_string(),
            r.num_frames.to_string(),
            ed,
            es,
            ef,
        ];
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn write_corrupted_csv(corrupted: &BTreeMap<String, CorruptionReason>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["clip_id", "reason"])
        .expect("in-memory write");
    for (id, reason) in corrupted {
        w.write_record([id.as_str(), &reason.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn write_tracings_csv(records: &[ManifestRecord]) -> Option<String> {
    let mut out = String::from("clip_id,frame,x1,y1,x2,y2\n");
    let mut any = false;
    for r in records {
        let Some(labels) = &r.labels else { continue };
        for t in &labels.tracings {
            for c in &t.chords {
                any = true;
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.clip_id, t.frame_index, c.x1, c.y1, c.x2, c.y2
                ));
            }
        }
    }
    any.then_some(out)
}

/// Loads a manifest directory. `corrupted.csv` and `tracings.csv` are optional.
pub fn load_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let read = |name: &str| -> Result<Option<String>> {
        let path = dir.join(name);
        match std::fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    };
    let records_text = read(RECORDS_FILE)?.ok_or_else(|| {
        Error::io(
            dir.join(RECORDS_FILE),
            std::io::Error::new(std::io::ErrorKind::NotFound, "manifest.csv not found"),
        )
    })?;
    let mut manifest = DatasetManifest {
        records: parse_records_csv(&records_text)?,
        corrupted: BTreeMap::new(),
    };
    if let Some(text) = read(CORRUPTED_FILE)? {
        manifest.corrupted = parse_corrupted_csv(&text)?;
    }
    if let Some(text) = read(TRACINGS_FILE)? {
        let (mut tracings, duplicated) = parse_tracings_csv(&text)?;
        let positions: HashMap<String, usize> = manifest
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clip_id.clone(), i))
            .collect();
        for (clip_id, list) in std::mem::take(&mut tracings) {
            if let Some(labels) = positions
                .get(&clip_id)
                .and_then(|i| manifest.records[*i].labels.as_mut())
            {
                labels.tracings = list;
            }
        }
        for clip_id in duplicated {
            manifest.mark_corrupted(clip_id, CorruptionReason::LabelCorrupt);
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(
        dir.join(RECORDS_FILE),
        write_records_csv(&manifest.records).as_bytes(),
    )?;
    write_atomic(
        dir.join(CORRUPTED_FILE),
        write_corrupted_csv(&manifest.corrupted).as_bytes(),
    )?;
    let tracings_path = dir.join(TRACINGS_FILE);
    match write_tracings_csv(&manifest.records) {
        Some(text) => write_atomic(tracings_path, text.as_bytes())?,
        None => {
            if tracings_path.exists() {
                std::fs::remove_file(&tracings_path).map_err(|e| Error::io(&tracings_path, e))?;
            }
        }
    }
    Ok(())
}
