//! Segmentation losses on logits, per frame, with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::real::{sigmoid, softplus, Real};

/// Smoothing constant of the soft Dice loss.
pub const DICE_EPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossKind {
    Dice,
    Bce,
    #[default]
    DicePlusBce,
}

impl LossKind {
    fn weights(self) -> (f64, f64) {
        match self {
            LossKind::Dice => (1.0, 0.0),
            LossKind::Bce => (0.0, 1.0),
            LossKind::DicePlusBce => (1.0, 1.0),
        }
    }
}

/// Loss of one frame and its gradient with respect to the logits.
pub fn frame_loss<T: Real>(kind: LossKind, logits: &[T], target: &[T]) -> (f64, Vec<T>) {
    assert_eq!(logits.len(), target.len());
    let n = logits.len() as f64;
    let (wd, wb) = kind.weights();
    let probs: Vec<f64> = logits.iter().map(|z| sigmoid(z.as_f64())).collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; logits.len()];
    if wb > 0.0 {
        let mut bce = 0.0;
        for (i, (z, t)) in logits.iter().zip(target).enumerate() {
            let (z, t) = (z.as_f64(), t.as_f64());
            bce += softplus(z) - t * z;
            grad[i] += wb * (probs[i] - t) / n;
        }
        loss += wb * bce / n;
    }
    if wd > 0.0 {
        let inter: f64 = probs.iter().zip(target).map(|(p, t)| p * t.as_f64()).sum();
        let sum: f64 = probs.iter().sum::<f64>() + target.iter().map(|t| t.as_f64()).sum::<f64>();
        let num = 2.0 * inter + DICE_EPS;
        let den = sum + DICE_EPS;
        loss += wd * (1.0 - num / den);
        for (i, t) in target.iter().enumerate() {
            let dp = -(2.0 * t.as_f64() * den - num) / (den * den);
            grad[i] += wd * dp * probs[i] * (1.0 - probs[i]);
        }
    }
    (loss, grad.into_iter().map(T::of).collect())
}

/// The same loss evaluated on probabilities rather than logits.
pub fn prob_loss(kind: LossKind, probs: &[f64], target: &[f64]) -> f64 {
    let n = probs.len() as f64;
    let (wd, wb) = kind.weights();
    let mut loss = 0.0;
    if wb > 0.0 {
        let bce: f64 = probs
            .iter()
            .zip(target)
            .map(|(p, t)| {
                // exact zero when the prediction equals a hard target
                let a = if *t == 0.0 {
                    0.0
                } else {
                    -t * p.max(1e-12).ln()
                };
                let b = if *t == 1.0 {
                    0.0
                } else {
                    -(1.0 - t) * (1.0 - p).max(1e-12).ln()
                };
                a + b
            })
            .sum();
        loss += wb * bce / n;
    }
    if wd > 0.0 {
        let inter: f64 = probs.iter().zip(target).map(|(p, t)| p * t).sum();
        let sum: f64 = probs.iter().sum::<f64>() + target.iter().sum::<f64>();
        loss += wd * (1.0 - (2.0 * inter + DICE_EPS) / (sum + DICE_EPS));
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_cost_nothing() {
        let t = [1.0, 0.0, 1.0, 1.0, 0.0];
        assert_eq!(prob_loss(LossKind::Dice, &t, &t), 0.0);
        assert_eq!(prob_loss(LossKind::Bce, &t, &t), 0.0);
        assert_eq!(prob_loss(LossKind::DicePlusBce, &t, &t), 0.0);
    }

    #[test]
    fn logit_gradient_matches_finite_difference() {
        let z: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() * 2.0).collect();
        let t: Vec<f64> = (0..12).map(|i| ((i * 5) % 7) as f64 / 6.0).collect();
        for kind in [LossKind::Dice, LossKind::Bce, LossKind::DicePlusBce] {
            let (_, g) = frame_loss(kind, &z, &t);
            for i in 0..z.len() {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += 1e-6;
                zm[i] -= 1e-6;
                let fd = (frame_loss(kind, &zp, &t).0 - frame_loss(kind, &zm, &t).0) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-7, "{kind:?} {i}: {fd} vs {}", g[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn losses_nonnegative(p in proptest::collection::vec(0.0f64..=1.0, 1..40), seed in 0u64..100) {
            let t: Vec<f64> = p.iter().enumerate().map(|(i, _)| ((i as u64 * 31 + seed) % 3) as f64 / 2.0).collect();
            for kind in [LossKind::Dice, LossKind::Bce, LossKind::DicePlusBce] {
                prop_assert!(prob_loss(kind, &p, &t) >= 0.0);
            }
            let z: Vec<f64> = p.iter().map(|v| (v - 0.5) * 8.0).collect();
            prop_assert!(frame_loss(LossKind::DicePlusBce, &z, &t).0 >= 0.0);
        }
    }
}
