//! Small end-to-end phantom run for tuning: `phantom_trial TRAIN VAL TEST EPOCHS LR SEQ`.

use std::collections::HashMap;
use std::time::Instant;

use lvkd_core::data_model::{
    BinaryMaskSequence, DatasetManifest, ManifestRecord, Split, VideoClip,
};
use lvkd_core::io::derive_seed;
use lvkd_core::phantom::{generate_phantom, PhantomParams};
use lvkd_core::phase_detect::{detect_phase_events, AreaSeries};
use lvkd_core::seg_metrics::dice;
use lvkd_student::distillation::{
    calibrate_threshold, generate_pseudolabels, train, AnalyticTeacher, LearningRate,
    PseudoLabelStore, Teacher, TrainingConfig,
};
use lvkd_student::ModelConfig;

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| a.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (ntr, nva, nte) = (
        arg(1, 20.0) as usize,
        arg(2, 8.0) as usize,
        arg(3, 8.0) as usize,
    );
    let epochs = arg(4, 5.0) as usize;
    let lr = arg(5, 0.05);
    let seq = arg(6, 8.0) as usize;
    let mut clips = HashMap::new();
    let mut truths = HashMap::new();
    let mut records = Vec::new();
    let mut teacher = AnalyticTeacher::new(1);
    let t0 = Instant::now();
    for (split, n) in [(Split::Train, ntr), (Split::Val, nva), (Split::Test, nte)] {
        for i in 0..n {
            let id = format!("{split}_{i:04}");
            let p = PhantomParams::sample(&id, derive_seed(9, &["phantom", &id]), 64, 64, 64);
            let (clip, truth, labels) = generate_phantom(&p).unwrap();
            records.push(ManifestRecord {
                clip_id: id.clone(),
                split,
                fps: p.fps,
                num_frames: 64,
                labels: Some(labels),
            });
            teacher.add(p);
            clips.insert(id.clone(), clip);
            truths.insert(id, truth);
        }
    }
    let manifest = DatasetManifest::new(records).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = PseudoLabelStore::new(dir.path(), teacher.version());
    let load = |id: &str| -> lvkd_core::Result<VideoClip> { Ok(clips[id].clone()) };
    generate_pseudolabels(&teacher, &manifest, load, &store).unwrap();
    eprintln!("setup {:?}", t0.elapsed());
    let cfg = ModelConfig::grid(2, 1, (64, 64));
    let tc = TrainingConfig {
        learning_rate: LearningRate {
            initial: lr,
            decay_at_fraction: 0.7,
            decay_factor: 0.1,
        },
        batch_size: 8,
        sequence_length: seq,
        max_epochs: epochs,
        seed: 3,
        ..TrainingConfig::default()
    };
    let t1 = Instant::now();
    let mut obs = |r: &lvkd_student::distillation::EpochRecord, _: &lvkd_student::Model<f32>| {
        eprintln!(
            "epoch {} train {:.4} val {:.4} at {:?}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            t1.elapsed()
        );
    };
    let (mut model, hist) = train(&cfg, &manifest, &load, &store, &tc, Some(&mut obs)).unwrap();
    eprintln!("train {:?} best {}", t1.elapsed(), hist.best_epoch);
    let cal = calibrate_threshold(&model, &manifest, &load, &store).unwrap();
    model.set_threshold(cal.threshold).unwrap();
    eprintln!("threshold {} degenerate {}", cal.threshold, cal.degenerate);
    let (mut d_gt, mut d_t, mut n, mut afd_ed, mut afd_es) = (0.0, 0.0, 0, 0.0, 0.0);
    for r in manifest.split(Split::Test) {
        let clip = &clips[&r.clip_id];
        let soft = model.forward(clip, 0).unwrap();
        let pred: BinaryMaskSequence = soft.threshold(cal.threshold as f32);
        let truth = &truths[&r.clip_id];
        let tmask = store.load(&r.clip_id).unwrap().threshold(0.5);
        let l = r.labels.as_ref().unwrap();
        for f in [l.ed_frame, l.es_frame] {
            d_gt += dice(&pred.frame(f), &truth.frame(f)).unwrap();
        }
        for f in 0..64 {
            d_t += dice(&pred.frame(f), &tmask.frame(f)).unwrap();
        }
        n += 1;
        let series = AreaSeries::from_counts(&r.clip_id, r.fps, &pred.areas());
        let ev = detect_phase_events(&series, l.ed_frame, l.es_frame).unwrap();
        afd_ed += ev.ed_frame.abs_diff(l.ed_frame) as f64;
        afd_es += ev.es_frame.abs_diff(l.es_frame) as f64;
    }
    let n = n as f64;
    println!(
        "dice_gt {:.4} dice_teacher {:.4} afd_ed {:.3} afd_es {:.3} total {:?}",
        d_gt / (2.0 * n),
        d_t / (64.0 * n),
        afd_ed / n,
        afd_es / n,
        t0.elapsed()
    );
}
