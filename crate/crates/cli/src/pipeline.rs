//! Subcommand bodies. Each reads inputs described by a [`RunConfig`], writes
//! its artifacts under `out_dir` (atomically) and returns their paths.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lvkd_core::data_model::{
    load_binary_masks, load_manifest, load_video, rasterize_tracing, save_binary_masks,
    save_manifest, save_video, BinaryMask, BinaryMaskSequence, ClipSource, DatasetManifest,
    ManifestRecord, Split, VideoClip,
};
use lvkd_core::io::{derive_seed, fmt6, sha256_hex, write_atomic};
use lvkd_core::lvm_eval::{
    coverage_score, evaluated_frames, mitral_phase_events, mitral_phase_signal, overflow_score,
    ClipQuality, MaskQualityReport, MockScorer, PromptScorer, ScoresFileScorer,
};
use lvkd_core::phantom::{generate_phantom, PhantomParams};
use lvkd_core::phase_detect::{
    afd_by_sampling_rate, detect_phase_events, AreaSeries, SamplingRateAnalysis,
};
use lvkd_core::seg_metrics::{evaluate_segmentation, Aggregate, ExclusionPolicy, SegScoreReport};
use lvkd_student::checkpoint::Checkpoint;
use lvkd_student::distillation::{
    calibrate_threshold, generate_pseudolabels, train, AnalyticTeacher, Calibration,
    PseudoLabelReport, PseudoLabelStore, Teacher, TrainingHistory,
};
use lvkd_student::{flops_estimate, Model};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ScorerChoice};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

pub const VIDEOS_DIR: &str = "videos";
pub const TRUTH_DIR: &str = "truth";
pub const PHANTOMS_FILE: &str = "phantoms.json";

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const PSEUDOLABEL_FILE: &str = "pseudolabel.json";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const PREDICTION_INFO_FILE: &str = "model.json";
pub const SEG_SCORES_FILE: &str = "seg_scores.csv";
pub const SEG_SUMMARY_FILE: &str = "seg_summary.json";
pub const AFD_FILE: &str = "afd.csv";
pub const AFD_SUMMARY_FILE: &str = "afd_summary.json";
pub const AFD_FPS_FILE: &str = "afd_by_fps.csv";
pub const LVM_QUALITY_FILE: &str = "lvm_quality.csv";
pub const LVM_PHASE_FILE: &str = "lvm_phase.csv";
pub const LVM_SUMMARY_FILE: &str = "lvm_summary.json";

/// Something the user should see that does not fail the run.
pub type Warnings = Vec<String>;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    write_atomic(path, bytes)?;
    Ok(path.to_path_buf())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Builds a CSV in memory; quoting handled by the csv crate.
pub(crate) struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvTable {
    pub(crate) fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    pub(crate) fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        self.writer
            .write_record(cells.into_iter().collect::<Vec<_>>())
            .expect("in-memory write");
    }

    pub(crate) fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

/// Formats an optional metric; missing values become empty cells.
pub(crate) fn cell(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

/// Clips on disk plus their manifest.
pub struct DataStore {
    dir: PathBuf,
    pub manifest: DatasetManifest,
    phantoms: BTreeMap<String, PhantomParams>,
}

impl DataStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = load_manifest(dir)?;
        let phantoms_path = dir.join(PHANTOMS_FILE);
        let phantoms = if phantoms_path.is_file() {
            let text = std::fs::read_to_string(&phantoms_path).map_err(|e| {
                CliError::Data(format!("cannot read {}: {e}", phantoms_path.display()))
            })?;
            let list: Vec<PhantomParams> = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", phantoms_path.display())))?;
            list.into_iter().map(|p| (p.clip_id.clone(), p)).collect()
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            phantoms,
        })
    }

    pub fn phantoms(&self) -> &BTreeMap<String, PhantomParams> {
        &self.phantoms
    }

    pub fn record(&self, clip_id: &str) -> Result<&ManifestRecord> {
        self.manifest
            .get(clip_id)
            .ok_or_else(|| CliError::Data(format!("clip {clip_id} not in manifest")))
    }

    pub fn load_clip(&self, clip_id: &str) -> lvkd_core::Result<VideoClip> {
        let record = self
            .manifest
            .get(clip_id)
            .ok_or_else(|| lvkd_core::Error::Key(format!("clip {clip_id} not in manifest")))?;
        let source = if self.phantoms.contains_key(clip_id) {
            ClipSource::Phantom
        } else {
            ClipSource::Real
        };
        load_video(self.dir.join(VIDEOS_DIR), clip_id, record.fps, source)
    }

    /// Ground-truth masks: stored phantom truth when present, otherwise the
    /// human tracings rasterized on their labeled frames.
    pub fn label_masks(&self, clip_id: &str) -> lvkd_core::Result<BinaryMaskSequence> {
        let truth_dir = self.dir.join(TRUTH_DIR);
        if truth_dir.join(format!("{clip_id}.json")).is_file() {
            return load_binary_masks(truth_dir, clip_id);
        }
        let record = self
            .manifest
            .get(clip_id)
            .ok_or_else(|| lvkd_core::Error::Key(format!("clip {clip_id} not in manifest")))?;
        let clip = self.load_clip(clip_id)?;
        let (t, h, w) = clip.dims();
        let mut frames = vec![BinaryMask::empty(h, w); t];
        for tracing in record.labels.iter().flat_map(|l| &l.tracings) {
            if tracing.frame_index < t {
                frames[tracing.frame_index] = rasterize_tracing(tracing, h, w)?;
            }
        }
        BinaryMaskSequence::from_frames(clip_id, &frames)
    }

    fn evaluated(&self, split: Split, policy: ExclusionPolicy) -> Vec<&ManifestRecord> {
        self.manifest
            .split(split)
            .filter(|r| policy == ExclusionPolicy::Full || !self.manifest.is_corrupted(&r.clip_id))
            .collect()
    }
}

fn split_name(split: Split) -> String {
    split.to_string().to_lowercase()
}

/// Generates the phantom dataset described by `config.phantom`.
pub fn phantom_gen(config: &RunConfig) -> Result<RunManifest> {
    let p = &config.phantom;
    let data = &config.paths.data_dir;
    let videos = data.join(VIDEOS_DIR);
    let truth_dir = data.join(TRUTH_DIR);
    ensure_dir(&videos)?;
    ensure_dir(&truth_dir)?;
    let mut jobs = Vec::new();
    for (split, n) in [
        (Split::Train, p.train),
        (Split::Val, p.val),
        (Split::Test, p.test),
    ] {
        for i in 0..n {
            jobs.push((split, format!("phantom_{}_{i:04}", split_name(split))));
        }
    }
    let results: Vec<Result<(ManifestRecord, PhantomParams)>> = jobs
        .par_iter()
        .map(|(split, id)| {
            let seed = derive_seed(config.seed, &["phantom-gen", id]);
            let params = PhantomParams::sample(id, seed, p.frames, p.height, p.width);
            let (clip, truth, labels) = generate_phantom(&params)?;
            save_video(&videos, &clip)?;
            save_binary_masks(&truth_dir, &truth)?;
            let record = ManifestRecord {
                clip_id: id.clone(),
                split: *split,
                fps: params.fps,
                num_frames: params.frames,
                labels: Some(labels),
            };
            Ok((record, params))
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut params = Vec::with_capacity(results.len());
    for r in results {
        let (record, p) = r?;
        records.push(record);
        params.push(p);
    }
    let manifest = DatasetManifest::new(records)?;
    save_manifest(&manifest, data)?;
    write_json(&data.join(PHANTOMS_FILE), &params)?;
    let mut run = RunManifest::new("phantom-gen", config);
    run.output(data.join(lvkd_core::data_model::RECORDS_FILE));
    run.output(data.join(PHANTOMS_FILE));
    run.output(videos);
    run.output(truth_dir);
    run.write(&config.paths.out_dir)?;
    Ok(run)
}

/// The analytic teacher is the only bundled teacher; it needs phantom parameters.
pub fn phantom_teacher(config: &RunConfig, data: &DataStore) -> Result<AnalyticTeacher> {
    if data.phantoms().is_empty() {
        return Err(CliError::Config(format!(
            "{} has no {PHANTOMS_FILE}; only phantom datasets have a bundled teacher",
            config.paths.data_dir.display()
        )));
    }
    let mut teacher = AnalyticTeacher::new(derive_seed(config.seed, &["pseudolabel"]));
    for p in data.phantoms().values() {
        teacher.add(p.clone());
    }
    Ok(teacher)
}

pub fn pseudo_label_store(config: &RunConfig, teacher: &dyn Teacher) -> PseudoLabelStore {
    PseudoLabelStore::new(&config.paths.cache_dir, teacher.version())
}

pub fn pseudolabel(config: &RunConfig) -> Result<(PseudoLabelReport, RunManifest)> {
    let data = DataStore::open(&config.paths.data_dir)?;
    let teacher = phantom_teacher(config, &data)?;
    let store = pseudo_label_store(config, &teacher);
    let report = generate_pseudolabels(&teacher, &data.manifest, |id| data.load_clip(id), &store)?;
    let mut run = RunManifest::new("pseudolabel", config);
    run.input(
        config
            .paths
            .data_dir
            .join(lvkd_core::data_model::RECORDS_FILE),
    );
    run.output(config.paths.cache_dir.clone());
    run.output(write_json(
        &config.paths.out_dir.join(PSEUDOLABEL_FILE),
        &report,
    )?);
    run.write(&config.paths.out_dir)?;
    Ok((report, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: String,
    pub param_count: usize,
    pub gflops_per_frame: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub threshold: f64,
    pub degenerate_calibration: bool,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: TrainingHistory,
    pub calibration: Calibration,
    pub summary: TrainSummary,
    pub run: RunManifest,
    pub warnings: Warnings,
}

/// Trains, calibrates and checkpoints a student on cached pseudo-labels.
pub fn train_student(config: &RunConfig) -> Result<TrainOutcome> {
    let data = DataStore::open(&config.paths.data_dir)?;
    let teacher = phantom_teacher(config, &data)?;
    let store = pseudo_label_store(config, &teacher);
    let mut training = config.training.clone();
    training.seed = derive_seed(config.seed, &["train", &config.training.seed.to_string()]);
    let load = |id: &str| data.load_clip(id);
    let (mut model, history) = train(
        &config.model,
        &data.manifest,
        &load,
        &store,
        &training,
        None,
    )?;
    let calibration = calibrate_threshold(&model, &data.manifest, &load, &store)?;
    model.set_threshold(calibration.threshold)?;
    let mut warnings = Warnings::new();
    if calibration.degenerate {
        warnings.push(format!(
            "DegenerateCalibration: flat Dice curve on VAL, threshold left at {}",
            calibration.threshold
        ));
    }
    let best = &history.epochs[history.best_epoch];
    let out = &config.paths.out_dir;
    let checkpoint = Checkpoint {
        model: model.clone(),
        epoch: Some(history.best_epoch),
        val_loss: Some(best.val_loss),
    };
    let (h, w) = config.model.input_size;
    let summary = TrainSummary {
        model: config.model.name(),
        param_count: model.param_count(),
        gflops_per_frame: flops_estimate(&config.model, h, w),
        best_epoch: history.best_epoch,
        best_val_loss: best.val_loss,
        threshold: calibration.threshold,
        degenerate_calibration: calibration.degenerate,
    };
    let mut calib_csv = CsvTable::new(&["threshold", "mean_dice"]);
    for (t, d) in &calibration.curve {
        calib_csv.row([fmt6(*t), fmt6(*d)]);
    }
    let mut run = RunManifest::new("train", config);
    run.input(
        config
            .paths
            .data_dir
            .join(lvkd_core::data_model::RECORDS_FILE),
    );
    run.input(config.paths.cache_dir.clone());
    ensure_dir(out)?;
    checkpoint.save(out.join(CHECKPOINT_FILE))?;
    run.output(out.join(CHECKPOINT_FILE));
    run.output(write_file(
        &out.join(HISTORY_FILE),
        history.to_csv().as_bytes(),
    )?);
    run.output(write_file(
        &out.join(CALIBRATION_FILE),
        &calib_csv.into_bytes(),
    )?);
    run.output(write_json(&out.join(TRAIN_SUMMARY_FILE), &summary)?);
    run.write(out)?;
    Ok(TrainOutcome {
        model,
        history,
        calibration,
        summary,
        run,
        warnings,
    })
}

/// Identifies the model behind a prediction store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInfo {
    pub model: String,
    pub num_blocks: usize,
    pub layers_per_block: usize,
    pub param_count: usize,
    pub threshold: f64,
    pub checkpoint_sha256: String,
}

/// Runs the checkpoint over the evaluation split and stores binary masks.
pub fn predict(
    config: &RunConfig,
    checkpoint_path: &Path,
    masks_dir: &Path,
) -> Result<PredictionInfo> {
    let data = DataStore::open(&config.paths.data_dir)?;
    let bytes = std::fs::read(checkpoint_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", checkpoint_path.display())))?;
    let checkpoint = Checkpoint::decode(&bytes)?;
    let model = checkpoint.model;
    let threshold = model.config().threshold as f32;
    ensure_dir(masks_dir)?;
    let records = data.evaluated(config.evaluation.split, config.evaluation.policy);
    records.par_iter().try_for_each(|r| -> Result<()> {
        let clip = data.load_clip(&r.clip_id)?;
        let soft = model.forward(&clip, config.evaluation.prepad_frames)?;
        save_binary_masks(masks_dir, &soft.threshold(threshold))?;
        Ok(())
    })?;
    let cfg = model.config();
    let info = PredictionInfo {
        model: cfg.name(),
        num_blocks: cfg.num_blocks,
        layers_per_block: cfg.layers_per_block,
        param_count: model.param_count(),
        threshold: cfg.threshold,
        checkpoint_sha256: sha256_hex(&bytes),
    };
    write_json(&masks_dir.join(PREDICTION_INFO_FILE), &info)?;
    Ok(info)
}

fn read_prediction_info(masks_dir: &Path) -> Option<PredictionInfo> {
    let text = std::fs::read_to_string(masks_dir.join(PREDICTION_INFO_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Where evaluation masks come from.
#[derive(Debug, Clone)]
pub enum MaskSource {
    /// An existing mask store.
    Store(PathBuf),
    /// Predict with this checkpoint into `out_dir/predictions` first.
    Checkpoint(PathBuf),
}

impl MaskSource {
    /// Explicit masks win; otherwise predict with the explicit or default checkpoint.
    pub fn resolve(
        config: &RunConfig,
        masks: Option<PathBuf>,
        checkpoint: Option<PathBuf>,
    ) -> Self {
        match (masks, checkpoint) {
            (Some(m), _) => MaskSource::Store(m),
            (None, Some(c)) => MaskSource::Checkpoint(c),
            (None, None) => MaskSource::Checkpoint(config.paths.out_dir.join(CHECKPOINT_FILE)),
        }
    }

    fn materialize(
        &self,
        config: &RunConfig,
        run: &mut RunManifest,
    ) -> Result<(PathBuf, Option<PredictionInfo>)> {
        match self {
            MaskSource::Store(dir) => {
                if !dir.is_dir() {
                    return Err(CliError::Data(format!(
                        "mask store {} does not exist",
                        dir.display()
                    )));
                }
                run.input(dir.clone());
                Ok((dir.clone(), read_prediction_info(dir)))
            }
            MaskSource::Checkpoint(path) => {
                let dir = config.paths.out_dir.join(PREDICTIONS_DIR);
                run.input(path.clone());
                let info = predict(config, path, &dir)?;
                run.output(dir.clone());
                Ok((dir, Some(info)))
            }
        }
    }
}

fn load_masks(dir: &Path, clip_id: &str) -> Option<BinaryMaskSequence> {
    load_binary_masks(dir, clip_id).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegSummary {
    pub model: Option<PredictionInfo>,
    pub split: Split,
    pub policy: ExclusionPolicy,
    pub aggregate: Aggregate,
    pub excluding_corrupted: Option<Aggregate>,
    pub missing_predictions: usize,
    pub empty_pairs: usize,
    /// Grid coordinates of the model, e.g. row `l1`, column `B2`.
    pub grid_row: Option<String>,
    pub grid_col: Option<String>,
}

pub fn eval_seg(config: &RunConfig, source: &MaskSource) -> Result<(SegScoreReport, RunManifest)> {
    let data = DataStore::open(&config.paths.data_dir)?;
    let mut run = RunManifest::new("eval-seg", config);
    run.input(
        config
            .paths
            .data_dir
            .join(lvkd_core::data_model::RECORDS_FILE),
    );
    let (dir, info) = source.materialize(config, &mut run)?;
    let subset = data.manifest.subset(config.evaluation.split);
    let report = evaluate_segmentation(
        &subset,
        config.evaluation.policy,
        |id| load_masks(&dir, id),
        |id| data.label_masks(id),
    )?;
    let mut csv = CsvTable::new(&[
        "clip_id",
        "dice_ed",
        "dice_es",
        "iou_ed",
        "iou_es",
        "missing",
        "empty_pair",
        "corrupted",
    ]);
    for c in &report.clips {
        csv.row([
            c.clip_id.clone(),
            fmt6(c.dice_ed),
            fmt6(c.dice_es),
            fmt6(c.iou_ed),
            fmt6(c.iou_es),
            c.missing.to_string(),
            c.empty_pair.to_string(),
            c.corrupted.map(|r| r.to_string()).unwrap_or_default(),
        ]);
    }
    let summary = SegSummary {
        grid_row: info.as_ref().map(|i| format!("l{}", i.layers_per_block)),
        grid_col: info.as_ref().map(|i| format!("B{}", i.num_blocks)),
        model: info,
        split: config.evaluation.split,
        policy: report.policy,
        aggregate: report.aggregate,
        excluding_corrupted: report.excluding_corrupted,
        missing_predictions: report.clips.iter().filter(|c| c.missing).count(),
        empty_pairs: report.clips.iter().filter(|c| c.empty_pair).count(),
    };
    let out = &config.paths.out_dir;
    run.output(write_file(&out.join(SEG_SCORES_FILE), &csv.into_bytes())?);
    run.output(write_json(&out.join(SEG_SUMMARY_FILE), &summary)?);
    run.write(out)?;
    Ok((report, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfdRow {
    pub clip_id: String,
    pub pred_ed: usize,
    pub pred_es: usize,
    pub label_ed: usize,
    pub label_es: usize,
    pub fps: f64,
    pub ed_degenerate: bool,
    pub es_degenerate: bool,
}

impl AfdRow {
    pub fn abs_err_ed(&self) -> usize {
        self.pred_ed.abs_diff(self.label_ed)
    }

    pub fn abs_err_es(&self) -> usize {
        self.pred_es.abs_diff(self.label_es)
    }

    fn flags(&self) -> String {
        match (self.ed_degenerate, self.es_degenerate) {
            (false, false) => String::new(),
            (true, false) => "ED".into(),
            (false, true) => "ES".into(),
            (true, true) => "ED|ES".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfdSummary {
    pub model: Option<PredictionInfo>,
    pub split: Split,
    pub policy: ExclusionPolicy,
    pub clips: usize,
    pub afd_ed: f64,
    pub afd_es: f64,
    pub degenerate_clips: usize,
    pub missing_predictions: usize,
    pub by_sampling_rate: Option<SamplingRateAnalysis>,
}

fn afd_csv(rows: &[AfdRow]) -> Vec<u8> {
    let mut csv = CsvTable::new(&[
        "clip_id",
        "pred_ed",
        "pred_es",
        "label_ed",
        "label_es",
        "abs_err_ed",
        "abs_err_es",
        "fps",
        "degenerate_flags",
    ]);
    for r in rows {
        csv.row([
            r.clip_id.clone(),
            r.pred_ed.to_string(),
            r.pred_es.to_string(),
            r.label_ed.to_string(),
            r.label_es.to_string(),
            r.abs_err_ed().to_string(),
            r.abs_err_es().to_string(),
            fmt6(r.fps),
            r.flags(),
        ]);
    }
    csv.into_bytes()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut n, mut s) = (0usize, 0.0);
    for v in values {
        n += 1;
        s += v;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// ED/ES detection from predicted mask areas, scored against label frames.
/// A missing prediction falls back to the label frame pair and is counted as degenerate.
pub fn eval_afd(
    config: &RunConfig,
    source: &MaskSource,
) -> Result<(Vec<AfdRow>, AfdSummary, RunManifest)> {
    let data = DataStore::open(&config.paths.data_dir)?;
    let mut run = RunManifest::new("eval-afd", config);
    run.input(
        config
            .paths
            .data_dir
            .join(lvkd_core::data_model::RECORDS_FILE),
    );
    let (dir, info) = source.materialize(config, &mut run)?;
    let mut rows = Vec::new();
    let mut missing = 0;
    for r in data.evaluated(config.evaluation.split, config.evaluation.policy) {
        let Some(labels) = &r.labels else { continue };
        let events = match load_masks(&dir, &r.clip_id) {
            Some(masks) => {
                let series = AreaSeries::from_counts(&r.clip_id, r.fps, &masks.areas());
                detect_phase_events(&series, labels.ed_frame, labels.es_frame)?
            }
            None => {
                missing += 1;
                lvkd_core::phase_detect::PhaseEvents {
                    ed_frame: labels.ed_frame,
                    es_frame: labels.es_frame,
                    ed_degenerate: true,
                    es_degenerate: true,
                }
            }
        };
        rows.push(AfdRow {
            clip_id: r.clip_id.clone(),
            pred_ed: events.ed_frame,
            pred_es: events.es_frame,
            label_ed: labels.ed_frame,
            label_es: labels.es_frame,
            fps: r.fps,
            ed_degenerate: events.ed_degenerate,
            es_degenerate: events.es_degenerate,
        });
    }
    let per_clip: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.fps, (r.abs_err_ed() + r.abs_err_es()) as f64 / 2.0))
        .collect();
    let by_rate = if per_clip.is_empty() {
        None
    } else {
        Some(afd_by_sampling_rate(&per_clip)?)
    };
    let summary = AfdSummary {
        model: info,
        split: config.evaluation.split,
        policy: config.evaluation.policy,
        clips: rows.len(),
        afd_ed: mean(rows.iter().map(|r| r.abs_err_ed() as f64)),
        afd_es: mean(rows.iter().map(|r| r.abs_err_es() as f64)),
        degenerate_clips: rows
            .iter()
            .filter(|r| r.ed_degenerate || r.es_degenerate)
            .count(),
        missing_predictions: missing,
        by_sampling_rate: by_rate.clone(),
    };
    let out = &config.paths.out_dir;
    run.output(write_file(&out.join(AFD_FILE), &afd_csv(&rows))?);
    let mut fps_csv = CsvTable::new(&["fps_low", "fps_high", "count", "mean_abs_error"]);
    for b in by_rate.iter().flat_map(|a| &a.bins) {
        fps_csv.row([
            fmt6(b.fps_low),
            fmt6(b.fps_high),
            b.count.to_string(),
            fmt6(b.mean_abs_error),
        ]);
    }
    run.output(write_file(&out.join(AFD_FPS_FILE), &fps_csv.into_bytes())?);
    run.output(write_json(&out.join(AFD_SUMMARY_FILE), &summary)?);
    run.write(out)?;
    Ok((rows, summary, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvmSummary {
    pub model: Option<PredictionInfo>,
    pub quality: MaskQualityReport,
    /// Frame distance of the mitral-signal phase detector against label frames.
    pub mitral_afd_ed: f64,
    pub mitral_afd_es: f64,
}

fn build_scorer(
    config: &RunConfig,
    data: &DataStore,
    run: &mut RunManifest,
) -> Result<Box<dyn PromptScorer>> {
    match config.evaluation.scorer {
        ScorerChoice::Mock => {
            if data.phantoms().is_empty() {
                return Err(CliError::Config(
                    "the mock scorer needs a phantom dataset".into(),
                ));
            }
            let mut mock = MockScorer::new();
            for r in data.evaluated(config.evaluation.split, config.evaluation.policy) {
                if let Some(p) = data.phantoms().get(&r.clip_id) {
                    // the scorer sees the exact rendering, not the 8-bit copy on disk
                    let (clip, _, _) = generate_phantom(p)?;
                    mock.add_phantom(p, &clip)?;
                }
            }
            Ok(Box::new(mock))
        }
        ScorerChoice::ScoresFile => {
            let path = config.evaluation.scores_file.as_ref().expect("validated");
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            run.input(path.clone());
            Ok(Box::new(ScoresFileScorer::parse(&text)?))
        }
    }
}

/// Label-free mask quality and mitral-signal phase detection.
pub fn eval_lvm(config: &RunConfig, source: &MaskSource) -> Result<(LvmSummary, RunManifest)> {
    let data = DataStore::open(&config.paths.data_dir)?;
    let mut run = RunManifest::new("eval-lvm", config);
    run.input(
        config
            .paths
            .data_dir
            .join(lvkd_core::data_model::RECORDS_FILE),
    );
    let scorer = build_scorer(config, &data, &mut run)?;
    let (dir, info) = source.materialize(config, &mut run)?;
    let mut quality = Vec::new();
    let mut phase = CsvTable::new(&[
        "clip_id",
        "pred_ed",
        "pred_es",
        "label_ed",
        "label_es",
        "abs_err_ed",
        "abs_err_es",
    ]);
    let (mut err_ed, mut err_es) = (Vec::new(), Vec::new());
    for r in data.evaluated(config.evaluation.split, config.evaluation.policy) {
        let clip = match (config.evaluation.scorer, data.phantoms().get(&r.clip_id)) {
            (ScorerChoice::Mock, Some(p)) => generate_phantom(p)?.0,
            _ => data.load_clip(&r.clip_id)?,
        };
        let masks = load_masks(&dir, &r.clip_id).ok_or_else(|| {
            CliError::Data(format!(
                "no predicted masks for {} in {}",
                r.clip_id,
                dir.display()
            ))
        })?;
        let frames = evaluated_frames(clip.num_frames(), r.labels.as_ref());
        quality.push(ClipQuality {
            clip_id: r.clip_id.clone(),
            overflow_score: overflow_score(&clip, &masks, scorer.as_ref(), &frames)?,
            coverage_score: coverage_score(
                &clip,
                &masks,
                scorer.as_ref(),
                config.evaluation.dilation_px,
                &frames,
            )?,
        });
        if let Some(labels) = &r.labels {
            let signal = mitral_phase_signal(&clip, scorer.as_ref())?;
            let ev =
                mitral_phase_events(&r.clip_id, r.fps, &signal, labels.ed_frame, labels.es_frame)?;
            let (e_ed, e_es) = (
                ev.ed_frame.abs_diff(labels.ed_frame),
                ev.es_frame.abs_diff(labels.es_frame),
            );
            err_ed.push(e_ed as f64);
            err_es.push(e_es as f64);
            phase.row([
                r.clip_id.clone(),
                ev.ed_frame.to_string(),
                ev.es_frame.to_string(),
                labels.ed_frame.to_string(),
                labels.es_frame.to_string(),
                e_ed.to_string(),
                e_es.to_string(),
            ]);
        }
    }
    if quality.is_empty() {
        return Err(CliError::Data(format!(
            "no {} clips to evaluate",
            config.evaluation.split
        )));
    }
    let mut quality_csv = CsvTable::new(&["clip_id", "overflow_score", "coverage_score"]);
    for q in &quality {
        quality_csv.row([
            q.clip_id.clone(),
            fmt6(q.overflow_score),
            fmt6(q.coverage_score),
        ]);
    }
    let summary = LvmSummary {
        model: info,
        quality: MaskQualityReport::from_clips(
            scorer.name(),
            config.evaluation.dilation_px,
            quality,
        ),
        mitral_afd_ed: mean(err_ed.into_iter()),
        mitral_afd_es: mean(err_es.into_iter()),
    };
    let out = &config.paths.out_dir;
    run.output(write_file(
        &out.join(LVM_QUALITY_FILE),
        &quality_csv.into_bytes(),
    )?);
    run.output(write_file(&out.join(LVM_PHASE_FILE), &phase.into_bytes())?);
    run.output(write_json(&out.join(LVM_SUMMARY_FILE), &summary)?);
    run.write(out)?;
    Ok((summary, run))
}
