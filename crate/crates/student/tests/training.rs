use std::collections::HashMap;

use lvkd_core::data_model::{DatasetManifest, ManifestRecord, SoftMaskSequence, Split, VideoClip};
use lvkd_core::phantom::{generate_phantom, PhantomParams};
use lvkd_student::distillation::{
    generate_pseudolabels, train, AnalyticTeacher, EpochRecord, LearningRate, PseudoLabelStore,
    Teacher, TrainingConfig,
};
use lvkd_student::{Model, ModelConfig};

const SIDE: usize = 32;
const FRAMES: usize = 16;

struct Fixture {
    manifest: DatasetManifest,
    clips: HashMap<String, VideoClip>,
    teacher: AnalyticTeacher,
}

fn fixture(train: usize, val: usize) -> Fixture {
    let mut records = Vec::new();
    let mut clips = HashMap::new();
    let mut teacher = AnalyticTeacher::new(5);
    for (split, n) in [(Split::Train, train), (Split::Val, val)] {
        for i in 0..n {
            let id = format!("{split}_{i}");
            let p = PhantomParams::sample(
                &id,
                40 + i as u64 + 100 * (split == Split::Val) as u64,
                FRAMES,
                SIDE,
                SIDE,
            );
            let (clip, _, labels) = generate_phantom(&p).unwrap();
            records.push(ManifestRecord {
                clip_id: id.clone(),
                split,
                fps: p.fps,
                num_frames: FRAMES,
                labels: Some(labels),
            });
            teacher.add(p);
            clips.insert(id, clip);
        }
    }
    Fixture {
        manifest: DatasetManifest::new(records).unwrap(),
        clips,
        teacher,
    }
}

fn small_config(epochs: usize, lr: f64) -> TrainingConfig {
    TrainingConfig {
        learning_rate: LearningRate {
            initial: lr,
            decay_at_fraction: 0.7,
            decay_factor: 0.1,
        },
        batch_size: 2,
        sequence_length: 4,
        max_epochs: epochs,
        seed: 9,
        ..TrainingConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let fx = fixture(2, 1);
    let dir = tempfile::tempdir().unwrap();
    let store = PseudoLabelStore::new(dir.path(), fx.teacher.version());
    let load = |id: &str| Ok(fx.clips[id].clone());
    generate_pseudolabels(&fx.teacher, &fx.manifest, load, &store).unwrap();
    let cfg = ModelConfig::grid(1, 1, (SIDE, SIDE));
    let (model, history) = train(
        &cfg,
        &fx.manifest,
        &load,
        &store,
        &small_config(1, 0.0),
        None,
    )
    .unwrap();
    assert_eq!(history.epochs.len(), 1);
    let init = lvkd_core::io::derive_seed(9, &["init"]);
    let fresh = Model::<f32>::build(&cfg, init).unwrap();
    assert_eq!(model.params(), fresh.params());
}

#[test]
fn returns_weights_from_best_validation_epoch() {
    let fx = fixture(4, 2);
    let dir = tempfile::tempdir().unwrap();
    let store = PseudoLabelStore::new(dir.path(), fx.teacher.version());
    let load = |id: &str| Ok(fx.clips[id].clone());
    generate_pseudolabels(&fx.teacher, &fx.manifest, load, &store).unwrap();
    let cfg = ModelConfig::grid(1, 1, (SIDE, SIDE));
    let mut snapshots: Vec<(EpochRecord, Vec<f32>)> = Vec::new();
    let mut observe = |r: &EpochRecord, m: &Model<f32>| snapshots.push((*r, m.params().to_vec()));
    let (model, history) = train(
        &cfg,
        &fx.manifest,
        &load,
        &store,
        &small_config(4, 0.05),
        Some(&mut observe),
    )
    .unwrap();
    assert_eq!(history.epochs.len(), 4);
    let best = history.best_epoch;
    let min = history
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(history.epochs[best].val_loss, min);
    assert_eq!(model.params(), snapshots[best].1.as_slice());
    let csv = history.to_csv();
    assert!(csv.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn training_is_deterministic() {
    let fx = fixture(3, 1);
    let dir = tempfile::tempdir().unwrap();
    let store = PseudoLabelStore::new(dir.path(), fx.teacher.version());
    let load = |id: &str| Ok(fx.clips[id].clone());
    generate_pseudolabels(&fx.teacher, &fx.manifest, load, &store).unwrap();
    let cfg = ModelConfig::grid(1, 1, (SIDE, SIDE));
    let (a, ha) = train(
        &cfg,
        &fx.manifest,
        &load,
        &store,
        &small_config(2, 0.05),
        None,
    )
    .unwrap();
    let (b, hb) = train(
        &cfg,
        &fx.manifest,
        &load,
        &store,
        &small_config(2, 0.05),
        None,
    )
    .unwrap();
    assert_eq!(ha.to_csv(), hb.to_csv());
    assert!(a
        .params()
        .iter()
        .zip(b.params())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn pseudolabels_are_reused_on_rerun() {
    let fx = fixture(3, 1);
    let dir = tempfile::tempdir().unwrap();
    let store = PseudoLabelStore::new(dir.path(), fx.teacher.version());
    let load = |id: &str| Ok(fx.clips[id].clone());
    let first = generate_pseudolabels(&fx.teacher, &fx.manifest, load, &store).unwrap();
    assert_eq!(first.computed.len(), 4);
    let bytes: Vec<Vec<u8>> = {
        let mut names: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        names.iter().map(|p| std::fs::read(p).unwrap()).collect()
    };
    let second = generate_pseudolabels(&fx.teacher, &fx.manifest, load, &store).unwrap();
    assert!(second.computed.is_empty());
    assert_eq!(second.reused.len(), 4);
    let mut names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    let after: Vec<Vec<u8>> = names.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(bytes, after);
}

#[test]
fn a_new_teacher_version_gets_its_own_cache_entries() {
    let a = PseudoLabelStore::new("/tmp/x", "v1");
    let b = PseudoLabelStore::new("/tmp/x", "v2");
    assert_ne!(a.stem("clip"), b.stem("clip"));
    assert_eq!(
        a.stem("clip"),
        PseudoLabelStore::new("/tmp/y", "v1").stem("clip")
    );
}

/// Returns masks one row short for clips whose id ends in "1".
struct WrongShapeTeacher;

impl Teacher for WrongShapeTeacher {
    fn name(&self) -> &str {
        "wrong-shape"
    }

    fn version(&self) -> &str {
        "wrong-shape-1"
    }

    fn predict(&self, clip: &VideoClip) -> lvkd_core::Result<SoftMaskSequence> {
        let h = if clip.id().ends_with('1') {
            clip.height() - 1
        } else {
            clip.height()
        };
        let shape = (clip.num_frames(), h, clip.width());
        SoftMaskSequence::new(clip.id(), shape, vec![0.5; shape.0 * shape.1 * shape.2])
    }
}

#[test]
fn teacher_failures_go_to_the_skip_list() {
    let fx = fixture(3, 1);
    let dir = tempfile::tempdir().unwrap();
    let store = PseudoLabelStore::new(dir.path(), WrongShapeTeacher.version());
    let load = |id: &str| Ok(fx.clips[id].clone());
    let report = generate_pseudolabels(&WrongShapeTeacher, &fx.manifest, load, &store).unwrap();
    let skipped: Vec<&str> = report.skipped.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(skipped, ["TRAIN_1"]);
    assert_eq!(report.computed.len(), 3);
    let list = store.skip_list().unwrap();
    assert_eq!(list.keys().collect::<Vec<_>>(), ["TRAIN_1"]);
    assert!(!store.contains("TRAIN_1"));
}
