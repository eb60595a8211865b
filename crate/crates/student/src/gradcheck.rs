//! Central finite-difference checks of the analytic gradients, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell::ConvLstmCell;
use crate::config::{ConvLstmCellConfig, ModelConfig};
use crate::error::Result;
use crate::loss::LossKind;
use crate::model::Model;

/// The losses are pixel means, so parameter gradients are small next to the
/// loss value; a wide step keeps round-off well below 1e-4 relative.
pub const STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub parameters: usize,
    pub max_relative_error: f64,
    pub worst_parameter: String,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// A 2→3 channel peephole cell over three 5×5 steps; the objective is a
/// random linear functional of every hidden output.
pub fn check_cell(seed: u64) -> Result<GradCheck> {
    let cfg = ConvLstmCellConfig {
        in_channels: 2,
        hidden_channels: 3,
        kernel_size: 3,
        uses_peephole: true,
    };
    let mut cell = ConvLstmCell::<f64>::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    cell.params
        .iter_mut()
        .for_each(|p| *p = rng.random_range(-0.5..0.5));
    let (h, w, steps) = (5, 5, 3);
    let xs: Vec<Vec<f64>> = (0..steps)
        .map(|_| {
            (0..2 * h * w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let coeffs: Vec<Vec<f64>> = (0..steps)
        .map(|_| {
            (0..3 * h * w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let objective = |cell: &ConvLstmCell<f64>| -> f64 {
        let (states, _) = cell.run_cached(&xs, h, w);
        states
            .iter()
            .zip(&coeffs)
            .map(|(s, c)| s.h.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let (_, caches) = cell.run_cached(&xs, h, w);
    let (grads, _) = cell.backward_sequence(&caches, &coeffs, h, w);
    let mut out = GradCheck {
        parameters: cell.params.len(),
        max_relative_error: 0.0,
        worst_parameter: String::new(),
    };
    for i in 0..cell.params.len() {
        let orig = cell.params[i];
        cell.params[i] = orig + STEP;
        let up = objective(&cell);
        cell.params[i] = orig - STEP;
        let down = objective(&cell);
        cell.params[i] = orig;
        let err = relative_error(grads[i], (up - down) / (2.0 * STEP));
        if err > out.max_relative_error {
            out.max_relative_error = err;
            out.worst_parameter = format!("cell[{i}]");
        }
    }
    Ok(out)
}

/// A two-block, two-layer model with residual and peephole paths (under 5k
/// parameters), three 8×8 frames, Dice+BCE against random soft targets.
pub fn check_tiny_model(seed: u64) -> Result<GradCheck> {
    let mut cfg = ModelConfig::grid(2, 2, (8, 8));
    cfg.channel_widths = vec![3, 4];
    cfg.residual_last_block = true;
    cfg.peephole = true;
    let mut model = Model::<f64>::build(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // move peephole and bias terms off their special initial values
    model
        .params_mut()
        .iter_mut()
        .for_each(|p| *p += rng.random_range(-0.2..0.2));
    let (t, h, w) = (3, 8, 8);
    let frames: Vec<f64> = (0..t * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    let targets: Vec<f64> = (0..t * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    let kind = LossKind::DicePlusBce;
    let (_, grads) = model.loss_and_grad(&frames, &targets, t, h, w, kind)?;
    let entries = model.layout().entries.clone();
    let mut out = GradCheck {
        parameters: model.param_count(),
        max_relative_error: 0.0,
        worst_parameter: String::new(),
    };
    for i in 0..model.param_count() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + STEP;
        let up = model.loss(&frames, &targets, t, h, w, kind)?;
        model.params_mut()[i] = orig - STEP;
        let down = model.loss(&frames, &targets, t, h, w, kind)?;
        model.params_mut()[i] = orig;
        let err = relative_error(grads[i], (up - down) / (2.0 * STEP));
        if err > out.max_relative_error {
            out.max_relative_error = err;
            out.worst_parameter = entries
                .iter()
                .rev()
                .find(|e| e.offset <= i)
                .map_or_else(|| format!("param[{i}]"), |e| e.name.clone());
        }
    }
    Ok(out)
}
