//! Teacher abstraction, pseudo-label cache, the distillation training loop
//! and float-to-boolean threshold calibration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lvkd_core::data_model::{
    load_soft_masks_as, save_soft_masks_as, DatasetManifest, SoftMaskSequence, Split, VideoClip,
};
use lvkd_core::io::{derive_seed, fmt6, sha256_hex, write_atomic};
use lvkd_core::phantom::{analytic_teacher, cavity_masks, PhantomParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Result, StudentError};
use crate::loss::LossKind;
use crate::model::Model;

/// Anything that turns a clip into per-frame soft masks.
pub trait Teacher: Sync {
    fn name(&self) -> &str;
    /// Changes whenever outputs may change; part of the cache key.
    fn version(&self) -> &str;
    fn predict(&self, clip: &VideoClip) -> lvkd_core::Result<SoftMaskSequence>;
}

/// Phantom stand-in for a real teacher: the exact cavity with ±1 pixel
/// boundary noise, softened.
#[derive(Debug, Clone, Default)]
pub struct AnalyticTeacher {
    params: BTreeMap<String, PhantomParams>,
    seed: u64,
}

impl AnalyticTeacher {
    pub fn new(seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn add(&mut self, params: PhantomParams) {
        self.params.insert(params.clip_id.clone(), params);
    }
}

impl Teacher for AnalyticTeacher {
    fn name(&self) -> &str {
        "analytic-phantom"
    }

    fn version(&self) -> &str {
        "analytic-phantom-1"
    }

    fn predict(&self, clip: &VideoClip) -> lvkd_core::Result<SoftMaskSequence> {
        let params = self.params.get(clip.id()).ok_or_else(|| {
            lvkd_core::Error::Key(format!("no phantom parameters for {}", clip.id()))
        })?;
        let truth = cavity_masks(params);
        truth.check_matches(clip)?;
        Ok(analytic_teacher(
            &truth,
            derive_seed(self.seed, &["teacher", clip.id()]),
        ))
    }
}

pub const SKIP_LIST_FILE: &str = "skipped.csv";

/// Content-addressed teacher outputs, one f32 tensor per clip.
#[derive(Debug, Clone)]
pub struct PseudoLabelStore {
    dir: PathBuf,
    teacher_version: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelReport {
    pub computed: Vec<String>,
    pub reused: Vec<String>,
    /// `(clip_id, error)` for clips the teacher failed on.
    pub skipped: Vec<(String, String)>,
}

impl PseudoLabelStore {
    pub fn new(dir: impl Into<PathBuf>, teacher_version: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            teacher_version: teacher_version.into(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stem(&self, clip_id: &str) -> String {
        sha256_hex(format!("{}\0{}", self.teacher_version, clip_id).as_bytes())
    }

    pub fn contains(&self, clip_id: &str) -> bool {
        let stem = self.stem(clip_id);
        self.dir.join(format!("{stem}.bin")).is_file()
            && self.dir.join(format!("{stem}.json")).is_file()
    }

    pub fn load(&self, clip_id: &str) -> Result<SoftMaskSequence> {
        Ok(load_soft_masks_as(&self.dir, &self.stem(clip_id), clip_id)?)
    }

    pub fn save(&self, masks: &SoftMaskSequence) -> Result<()> {
        Ok(save_soft_masks_as(
            &self.dir,
            &self.stem(masks.clip_id()),
            masks,
        )?)
    }

    pub fn skip_list(&self) -> Result<BTreeMap<String, String>> {
        let path = self.dir.join(SKIP_LIST_FILE);
        if !path.is_file() {
            return Ok(BTreeMap::new());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| lvkd_core::Error::io(&path, e))?;
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let mut out = BTreeMap::new();
        for row in reader.records() {
            let row = row.map_err(|e| lvkd_core::Error::Format(format!("skip list: {e}")))?;
            out.insert(
                row.get(0).unwrap_or("").to_string(),
                row.get(1).unwrap_or("").to_string(),
            );
        }
        Ok(out)
    }

    fn write_skip_list(&self, skipped: &BTreeMap<String, String>) -> Result<()> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["clip_id", "error"])
            .expect("in-memory write");
        for (id, err) in skipped {
            writer.write_record([id, err]).expect("in-memory write");
        }
        let bytes = writer.into_inner().expect("in-memory flush");
        Ok(write_atomic(self.dir.join(SKIP_LIST_FILE), &bytes)?)
    }
}

/// Runs the teacher on every manifest clip missing from the store.
/// Teacher failures land in the skip list instead of aborting the run.
pub fn generate_pseudolabels(
    teacher: &dyn Teacher,
    manifest: &DatasetManifest,
    load_clip: impl Fn(&str) -> lvkd_core::Result<VideoClip> + Sync,
    store: &PseudoLabelStore,
) -> Result<PseudoLabelReport> {
    std::fs::create_dir_all(&store.dir).map_err(|e| lvkd_core::Error::io(&store.dir, e))?;
    let ids: Vec<&str> = manifest
        .records
        .iter()
        .map(|r| r.clip_id.as_str())
        .collect();
    let outcomes: Vec<(String, std::result::Result<bool, String>)> = ids
        .par_iter()
        .map(|id| {
            if store.contains(id) {
                return (id.to_string(), Ok(false));
            }
            let run = || -> Result<()> {
                let clip = load_clip(id)?;
                let masks = teacher.predict(&clip)?;
                masks.check_matches(&clip)?;
                if masks.clip_id() != clip.id() {
                    return Err(lvkd_core::Error::Key(format!(
                        "teacher labeled {} as {}",
                        clip.id(),
                        masks.clip_id()
                    ))
                    .into());
                }
                store.save(&masks)
            };
            (
                id.to_string(),
                run().map(|_| true).map_err(|e| e.to_string()),
            )
        })
        .collect();
    let mut report = PseudoLabelReport::default();
    let mut skip = store.skip_list()?;
    for (id, outcome) in outcomes {
        match outcome {
            Ok(true) => {
                skip.remove(&id);
                report.computed.push(id);
            }
            Ok(false) => report.reused.push(id),
            Err(e) => {
                skip.insert(id.clone(), e.clone());
                report.skipped.push((id, e));
            }
        }
    }
    store.write_skip_list(&skip)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRate {
    pub initial: f64,
    /// Fraction of `max_epochs` after which the rate is multiplied by `decay_factor`.
    #[serde(default = "default_decay_at")]
    pub decay_at_fraction: f64,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
}

fn default_decay_at() -> f64 {
    0.7
}

fn default_decay_factor() -> f64 {
    0.1
}

fn default_momentum() -> f64 {
    0.9
}

impl LearningRate {
    pub fn at_epoch(&self, epoch: usize, max_epochs: usize) -> f64 {
        let boundary = (self.decay_at_fraction * max_epochs as f64).floor() as usize;
        if epoch >= boundary {
            self.initial * self.decay_factor
        } else {
            self.initial
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default)]
    pub loss: LossKind,
    pub learning_rate: LearningRate,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Rescales a batch gradient whose L2 norm exceeds this value.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub batch_size: usize,
    pub sequence_length: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::DicePlusBce,
            learning_rate: LearningRate {
                initial: 0.05,
                decay_at_fraction: 0.7,
                decay_factor: 0.1,
            },
            momentum: 0.9,
            grad_clip: Some(5.0),
            batch_size: 8,
            sequence_length: 32,
            max_epochs: 400,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length < 2 {
            return Err(StudentError::Config(format!(
                "sequence_length {} < 2",
                self.sequence_length
            )));
        }
        if self.max_epochs < 1 {
            return Err(StudentError::Config("max_epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(StudentError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.initial >= 0.0 && self.learning_rate.initial.is_finite()) {
            return Err(StudentError::Config(format!(
                "learning rate {} invalid",
                self.learning_rate.initial
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(StudentError::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainingHistory {
    /// Picks the first epoch with the lowest validation loss.
    pub fn from_records(epochs: Vec<EpochRecord>) -> Self {
        let mut best = 0;
        for (i, e) in epochs.iter().enumerate() {
            if e.val_loss < epochs[best].val_loss {
                best = i;
            }
        }
        let best_epoch = epochs.get(best).map_or(0, |e| e.epoch);
        Self { epochs, best_epoch }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{}",
                e.epoch,
                fmt6(e.train_loss),
                fmt6(e.val_loss)
            );
        }
        out
    }
}

/// One clip held in memory for training: frames and teacher targets.
struct Sample {
    id: String,
    t: usize,
    frames: Vec<f32>,
    targets: Vec<f32>,
}

impl Sample {
    fn window(&self, start: usize, len: usize, n: usize) -> (&[f32], &[f32], usize) {
        let len = len.min(self.t);
        let range = start * n..(start + len) * n;
        (&self.frames[range.clone()], &self.targets[range], len)
    }
}

fn load_split(
    manifest: &DatasetManifest,
    split: Split,
    load_clip: &(dyn Fn(&str) -> lvkd_core::Result<VideoClip> + Sync),
    store: &PseudoLabelStore,
    size: (usize, usize),
) -> Result<Vec<Sample>> {
    let ids: Vec<&str> = manifest
        .split(split)
        .map(|r| r.clip_id.as_str())
        .filter(|id| store.contains(id))
        .collect();
    ids.par_iter()
        .map(|id| {
            let clip = load_clip(id)?;
            let labels = store.load(id)?;
            labels.check_matches(&clip)?;
            let (t, h, w) = clip.dims();
            if (h, w) != size {
                return Err(StudentError::shape("frame size", size.0 * size.1, h * w));
            }
            Ok(Sample {
                id: id.to_string(),
                t,
                frames: clip.data().to_vec(),
                targets: labels.data().to_vec(),
            })
        })
        .collect()
}

/// Hook called after every epoch with the current (not best) model.
pub type EpochObserver<'a> = &'a mut dyn FnMut(&EpochRecord, &Model<f32>);

/// Trains a student on cached pseudo-labels; returns the best-validation-epoch model.
pub fn train(
    student: &ModelConfig,
    manifest: &DatasetManifest,
    load_clip: &(dyn Fn(&str) -> lvkd_core::Result<VideoClip> + Sync),
    store: &PseudoLabelStore,
    config: &TrainingConfig,
    observer: Option<EpochObserver<'_>>,
) -> Result<(Model<f32>, TrainingHistory)> {
    config.validate()?;
    let mut model = Model::<f32>::build(student, derive_seed(config.seed, &["init"]))?;
    let (h, w) = student.input_size;
    let n = h * w;
    let train_set = load_split(manifest, Split::Train, load_clip, store, (h, w))?;
    let val_set = load_split(manifest, Split::Val, load_clip, store, (h, w))?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(StudentError::Config(format!(
            "need non-empty TRAIN and VAL splits with pseudo-labels, got {} and {}",
            train_set.len(),
            val_set.len()
        )));
    }
    // validation windows stay fixed across epochs so losses are comparable
    let val_windows: Vec<usize> = val_set
        .iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["val", &s.id]));
            rng.random_range(0..=s.t.saturating_sub(config.sequence_length))
        })
        .collect();

    let mut observer = observer;
    let mut velocity = vec![0.0f32; model.param_count()];
    let mut records = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, Vec<f32>)> = None;
    for epoch in 0..config.max_epochs {
        let lr = config.learning_rate.at_epoch(epoch, config.max_epochs) as f32;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["epoch", &epoch.to_string()]));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let starts: Vec<usize> = order
            .iter()
            .map(|i| rng.random_range(0..=train_set[*i].t.saturating_sub(config.sequence_length)))
            .collect();
        let mut epoch_loss = 0.0;
        for (step, (batch, batch_starts)) in order
            .chunks(config.batch_size)
            .zip(starts.chunks(config.batch_size))
            .enumerate()
        {
            let results: Vec<Result<(f64, Vec<f32>)>> = batch
                .par_iter()
                .zip(batch_starts.par_iter())
                .map(|(i, start)| {
                    let (frames, targets, len) =
                        train_set[*i].window(*start, config.sequence_length, n);
                    model.loss_and_grad(frames, targets, len, h, w, config.loss)
                })
                .collect();
            let mut grad = vec![0.0f32; model.param_count()];
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += *b);
            }
            let scale = 1.0 / batch.len() as f32;
            grad.iter_mut().for_each(|g| *g *= scale);
            batch_loss /= batch.len() as f64;
            let norm = grad.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
            if !batch_loss.is_finite() || !norm.is_finite() {
                return Err(StudentError::Divergence {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            if let Some(clip) = config.grad_clip {
                if norm > clip {
                    let s = (clip / norm) as f32;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            let mu = config.momentum as f32;
            for ((p, v), g) in model
                .params_mut()
                .iter_mut()
                .zip(velocity.iter_mut())
                .zip(&grad)
            {
                *v = mu * *v + *g;
                *p -= lr * *v;
            }
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_losses: Vec<Result<f64>> = val_set
            .par_iter()
            .zip(val_windows.par_iter())
            .map(|(s, start)| {
                let (frames, targets, len) = s.window(*start, config.sequence_length, n);
                model.loss(frames, targets, len, h, w, config.loss)
            })
            .collect();
        let mut val_loss = 0.0;
        for v in val_losses {
            val_loss += v?;
        }
        val_loss /= val_set.len() as f64;
        if !val_loss.is_finite() {
            return Err(StudentError::Divergence {
                epoch,
                step: 0,
                loss: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.params().to_vec()));
        }
        if let Some(obs) = observer.as_mut() {
            obs(&record, &model);
        }
        records.push(record);
    }
    let history = TrainingHistory::from_records(records);
    if let Some((_, params)) = best {
        model.params_mut().copy_from_slice(&params);
    }
    Ok((model, history))
}

pub const CALIBRATION_GRID: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80,
    0.85, 0.90, 0.95,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// `(threshold, mean Dice)` over the grid.
    pub curve: Vec<(f64, f64)>,
    /// The Dice curve is flat (e.g. an all-zero student); the threshold is the 0.5 default.
    pub degenerate: bool,
}

fn frame_dice(student: &[f32], threshold: f32, teacher: &[f32]) -> f64 {
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (s, t) in student.iter().zip(teacher) {
        let (x, y) = (*s > threshold, *t > 0.5);
        inter += (x && y) as usize;
        a += x as usize;
        b += y as usize;
    }
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Chooses the grid threshold maximizing mean per-frame Dice between the
/// thresholded student and the teacher at 0.5; ties go to the value closest to 0.5.
pub fn calibrate_from_outputs(
    pairs: &[(SoftMaskSequence, SoftMaskSequence)],
) -> Result<Calibration> {
    if pairs.is_empty() {
        return Err(StudentError::Config(
            "calibration needs at least one clip".into(),
        ));
    }
    for (s, t) in pairs {
        if s.dims() != t.dims() {
            return Err(StudentError::shape(
                "calibration frames",
                t.data().len(),
                s.data().len(),
            ));
        }
    }
    let curve: Vec<(f64, f64)> = CALIBRATION_GRID
        .iter()
        .map(|th| {
            let mut total = 0.0;
            let mut frames = 0usize;
            for (s, t) in pairs {
                for f in 0..s.num_frames() {
                    total += frame_dice(s.frame(f), *th as f32, t.frame(f));
                    frames += 1;
                }
            }
            (*th, total / frames as f64)
        })
        .collect();
    let max = curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let min = curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let threshold = curve
        .iter()
        .filter(|c| c.1 == max)
        .map(|c| c.0)
        .min_by(|a, b| {
            (a - 0.5)
                .abs()
                .total_cmp(&(b - 0.5).abs())
                .then(a.total_cmp(b))
        })
        .expect("non-empty grid");
    Ok(Calibration {
        threshold,
        curve,
        degenerate: max == min,
    })
}

/// Runs the student over the VAL split and calibrates against cached teacher masks.
pub fn calibrate_threshold(
    model: &Model<f32>,
    manifest: &DatasetManifest,
    load_clip: &(dyn Fn(&str) -> lvkd_core::Result<VideoClip> + Sync),
    store: &PseudoLabelStore,
) -> Result<Calibration> {
    let ids: Vec<&str> = manifest
        .split(Split::Val)
        .map(|r| r.clip_id.as_str())
        .filter(|id| store.contains(id))
        .collect();
    let pairs: Vec<(SoftMaskSequence, SoftMaskSequence)> = ids
        .par_iter()
        .map(|id| {
            let clip = load_clip(id)?;
            Ok((model.forward(&clip, 0)?, store.load(id)?))
        })
        .collect::<Result<_>>()?;
    calibrate_from_outputs(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soft(values: Vec<f32>) -> SoftMaskSequence {
        let n = values.len() / 64;
        SoftMaskSequence::new("c", (n, 8, 8), values).unwrap()
    }

    fn teacher() -> SoftMaskSequence {
        let mut v = Vec::new();
        for f in 0..4 {
            for i in 0..64 {
                let (r, c) = (i / 8, i % 8);
                let d = ((r as f32 - 3.5).powi(2) + (c as f32 - 3.5).powi(2)).sqrt();
                v.push((1.0 - (d - 1.0 - f as f32 * 0.3) / 3.0).clamp(0.0, 1.0));
            }
        }
        soft(v)
    }

    #[test]
    fn identical_student_calibrates_to_half() {
        let t = teacher();
        let cal = calibrate_from_outputs(&[(t.clone(), t)]).unwrap();
        assert_eq!(cal.threshold, 0.5);
        assert!(!cal.degenerate);
    }

    #[test]
    fn shifted_student_calibrates_low() {
        let t = teacher();
        let shifted = soft(t.data().iter().map(|v| (v - 0.3).max(0.0)).collect());
        let cal = calibrate_from_outputs(&[(shifted, t)]).unwrap();
        assert!(cal.threshold <= 0.25, "{cal:?}");
    }

    #[test]
    fn zero_student_is_degenerate() {
        let t = teacher();
        let zero = soft(vec![0.0; t.data().len()]);
        let cal = calibrate_from_outputs(&[(zero, t)]).unwrap();
        assert_eq!(cal.threshold, 0.5);
        assert!(cal.degenerate);
        assert!(cal.curve.iter().all(|c| c.1 == 0.0));
    }

    #[test]
    fn best_epoch_is_argmin() {
        let records = [0.5, 0.3, 0.4]
            .iter()
            .enumerate()
            .map(|(epoch, v)| EpochRecord {
                epoch,
                train_loss: 1.0,
                val_loss: *v,
            })
            .collect();
        let h = TrainingHistory::from_records(records);
        assert_eq!(h.best_epoch, 1);
        assert_eq!(
            h.to_csv(),
            "epoch,train_loss,val_loss\n0,1,0.5\n1,1,0.3\n2,1,0.4\n"
        );
    }

    #[test]
    fn learning_rate_steps_down() {
        let lr = LearningRate {
            initial: 0.1,
            decay_at_fraction: 0.7,
            decay_factor: 0.1,
        };
        assert_eq!(lr.at_epoch(6, 10), 0.1);
        assert!((lr.at_epoch(7, 10) - 0.01).abs() < 1e-15);
    }
}
