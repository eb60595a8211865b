use lvkd_student::{param_count, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parameter count written out from the layer shapes: ConvLSTM encoder
/// layers, one 3×3 decoder conv per stage, and a 1×1 head.
fn by_hand(blocks: usize, layers: usize) -> usize {
    let w = [16usize, 24, 32, 40];
    let mut total = 0;
    for b in 0..blocks {
        for l in 0..layers {
            let input = match (b, l) {
                (0, 0) => 1,
                (_, 0) => w[b - 1],
                _ => w[b],
            };
            total += 36 * w[b] * (input + w[b]) + 4 * w[b];
        }
    }
    for s in 0..blocks {
        let (out, skip) = if s == 0 {
            (w[0] / 2, 1)
        } else {
            (w[s - 1], w[s - 1])
        };
        total += 9 * (w[s] + skip) * out + out;
    }
    total + w[0] / 2 + 1
}

#[test]
fn grid_parameter_counts_follow_the_layer_shapes() {
    for b in 1..=4 {
        for l in 1..=4 {
            let cfg = ModelConfig::grid(b, l, (64, 64));
            assert_eq!(param_count(&cfg), by_hand(b, l), "B{b}_l{l}");
            assert_eq!(
                Model::<f32>::build(&cfg, 0).unwrap().param_count(),
                by_hand(b, l)
            );
        }
    }
}

#[test]
fn parameter_count_is_independent_of_frame_size() {
    let small = param_count(&ModelConfig::grid(3, 2, (32, 32)));
    let large = param_count(&ModelConfig::grid(3, 2, (128, 96)));
    assert_eq!(small, large);
}

#[test]
fn doubling_widths_roughly_quadruples_parameters() {
    for b in 1..=4 {
        for l in 1..=4 {
            let base = ModelConfig::grid(b, l, (64, 64));
            let mut wide = base.clone();
            wide.channel_widths.iter_mut().for_each(|w| *w *= 2);
            let ratio = param_count(&wide) as f64 / param_count(&base) as f64;
            assert!((3.8..=4.0).contains(&ratio), "B{b}_l{l}: ratio {ratio}");
        }
    }
}

#[test]
fn peephole_and_residual_options_change_the_count() {
    let base = ModelConfig::grid(2, 2, (32, 32));
    let mut peep = base.clone();
    peep.peephole = true;
    // three per-channel peephole vectors in every cell
    let expected = 3 * (16 * 2 + 24 * 2);
    assert_eq!(param_count(&peep) - param_count(&base), expected);
}

#[test]
fn outputs_never_depend_on_future_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..6 {
        let mut cfg = ModelConfig::grid(1 + trial % 3, 1 + trial % 2, (16, 16));
        cfg.peephole = trial % 2 == 0;
        cfg.residual_last_block = trial >= 3;
        let model = Model::<f32>::build(&cfg, trial as u64).unwrap();
        let (t, n) = (6, 256);
        let clip: Vec<f32> = (0..t * n).map(|_| rng.random()).collect();
        let cut = rng.random_range(0..t - 1);
        let mut changed = clip.clone();
        changed[(cut + 1) * n..]
            .iter_mut()
            .for_each(|v| *v = rng.random());
        let a = model.forward_logits(&clip, t, 16, 16, 0).unwrap();
        let b = model.forward_logits(&changed, t, 16, 16, 0).unwrap();
        let prefix = (cut + 1) * n;
        assert!(a[..prefix]
            .iter()
            .zip(&b[..prefix])
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a[prefix..], b[prefix..]);
    }
}

#[test]
fn streaming_steps_match_whole_clip_inference() {
    let cfg = ModelConfig::grid(2, 2, (16, 16));
    let model = Model::<f32>::build(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames: Vec<f32> = (0..5 * 256).map(|_| rng.random()).collect();
    let whole = model.forward_logits(&frames, 5, 16, 16, 0).unwrap();
    let mut state = model.zero_state(16, 16).unwrap();
    let streamed: Vec<f32> = frames
        .chunks(256)
        .flat_map(|f| model.step(&mut state, f).unwrap())
        .collect();
    assert_eq!(whole, streamed);
}

#[test]
fn rejects_frames_not_divisible_by_the_pyramid() {
    let model = Model::<f32>::build(&ModelConfig::grid(3, 1, (16, 16)), 0).unwrap();
    assert!(model.zero_state(12, 12).is_err());
    assert!(model
        .step(&mut model.zero_state(16, 16).unwrap(), &[0.0; 10])
        .is_err());
}
