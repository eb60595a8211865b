//! Score bounds implied by annotator self-disagreement, and a maximum
//! likelihood fit of the annotator frame-noise distribution.
//!
//! Model: two annotation rounds `Z1 = Y + X1`, `Z2 = Y + X2` with `X1`, `X2`
//! i.i.d. and symmetric. Then `RMSE(Z1, Z2) = √2 · σ_X` and
//! `ρ(Z1, Y) = √ρ(Z1, Z2)`. The noise `X` is a mixture of a wide uniform
//! (annotator gives up) and a Laplace (ordinary imprecision); observed round
//! differences follow the self-convolution of its integer discretization.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntraAnnotatorStats {
    /// RMSE between two annotation rounds.
    pub rmse_rounds: f64,
    /// Correlation between two annotation rounds.
    pub corr_rounds: f64,
}

impl IntraAnnotatorStats {
    pub fn bounds(&self) -> Result<(f64, f64)> {
        Ok((
            rmse_floor(self.rmse_rounds)?,
            corr_ceiling(self.corr_rounds)?,
        ))
    }
}

/// Lowest RMSE any model can reach against a single noisy annotation.
pub fn rmse_floor(rmse_rounds: f64) -> Result<f64> {
    if !(rmse_rounds.is_finite() && rmse_rounds >= 0.0) {
        return Err(Error::Input(format!(
            "RMSE {rmse_rounds} must be nonnegative"
        )));
    }
    Ok(rmse_rounds / std::f64::consts::SQRT_2)
}

/// Highest correlation any model can reach against a single noisy annotation.
pub fn corr_ceiling(corr_rounds: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&corr_rounds) {
        return Err(Error::Input(format!(
            "correlation {corr_rounds} outside [0, 1]"
        )));
    }
    Ok(corr_rounds.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorNoiseModel {
    /// Weight of the uniform component.
    pub mixture_weight: f64,
    /// Uniform support is `[-U, U]` frames.
    pub uniform_halfwidth: f64,
    /// Laplace scale in frames.
    pub laplace_scale: f64,
}

impl AnnotatorNoiseModel {
    pub fn new(mixture_weight: f64, uniform_halfwidth: f64, laplace_scale: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mixture_weight) {
            return Err(Error::Input(format!(
                "weight {mixture_weight} outside [0, 1]"
            )));
        }
        if !(uniform_halfwidth > 0.0 && uniform_halfwidth.is_finite()) {
            return Err(Error::Input(format!(
                "uniform half-width {uniform_halfwidth} must be positive"
            )));
        }
        if !(laplace_scale > 0.0 && laplace_scale.is_finite()) {
            return Err(Error::Input(format!(
                "Laplace scale {laplace_scale} must be positive"
            )));
        }
        Ok(Self {
            mixture_weight,
            uniform_halfwidth,
            laplace_scale,
        })
    }

    /// `E|X| = w·U/2 + (1−w)·b`.
    pub fn expected_abs(&self) -> f64 {
        expected_abs(self)
    }

    /// Draws one continuous noise value.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.mixture_weight {
            rng.random_range(-self.uniform_halfwidth..=self.uniform_halfwidth)
        } else {
            // inverse CDF, u uniform on (-1/2, 1/2)
            let u: f64 = rng.random::<f64>() - 0.5;
            -self.laplace_scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
        }
    }
}

pub fn expected_abs(model: &AnnotatorNoiseModel) -> f64 {
    let w = model.mixture_weight;
    w * model.uniform_halfwidth / 2.0 + (1.0 - w) * model.laplace_scale
}

/// Simulates `n` round differences `round(X1) − round(X2)`.
pub fn sample_round_differences(model: &AnnotatorNoiseModel, n: usize, seed: u64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x1 = model.sample(&mut rng).round() as i64;
            let x2 = model.sample(&mut rng).round() as i64;
            x1 - x2
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFit {
    pub model: AnnotatorNoiseModel,
    pub log_likelihood: f64,
    /// Every difference was zero; the model collapses to a point mass.
    pub degenerate: bool,
}

pub const MIN_FIT_SAMPLES: usize = 50;

const COARSE_W_STEP: f64 = 0.002;
const COARSE_W_MAX: f64 = 0.05;
const COARSE_U: [f64; 7] = [20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0];
const COARSE_U_STEP: f64 = 10.0;
const COARSE_B_STEP: f64 = 0.1;
const COARSE_B_MIN: f64 = 0.6;
const COARSE_B_MAX: f64 = 6.0;
const REFINE_ROUNDS: u32 = 2;
const REFINE_HALF_SPAN: i32 = 10;

/// Histogram of `|d|`, exploiting symmetry of the difference distribution.
fn abs_histogram(diffs: &[i64]) -> BTreeMap<u64, u64> {
    let mut hist = BTreeMap::new();
    for d in diffs {
        *hist.entry(d.unsigned_abs()).or_insert(0) += 1;
    }
    hist
}

/// Per-integer masses of the discretized components on `[-m, m]`.
struct Components {
    m: i64,
    uniform: Vec<f64>,
    laplace: Vec<f64>,
}

impl Components {
    fn new(halfwidth: f64, scale: f64, max_abs_diff: u64) -> Self {
        let m = (halfwidth.ceil() as i64 + 1)
            .max((40.0 * scale).ceil() as i64)
            .max(max_abs_diff as i64 + 1);
        let laplace_cdf = |x: f64| {
            if x < 0.0 {
                0.5 * (x / scale).exp()
            } else {
                1.0 - 0.5 * (-x / scale).exp()
            }
        };
        let mut uniform = Vec::with_capacity((2 * m + 1) as usize);
        let mut laplace = Vec::with_capacity((2 * m + 1) as usize);
        for k in -m..=m {
            let (lo, hi) = (k as f64 - 0.5, k as f64 + 0.5);
            let overlap = (hi.min(halfwidth) - lo.max(-halfwidth)).max(0.0);
            uniform.push(overlap / (2.0 * halfwidth));
            laplace.push(laplace_cdf(hi) - laplace_cdf(lo));
        }
        Self {
            m,
            uniform,
            laplace,
        }
    }

    /// Cross-correlation `Σ_k p(k) q(k − d)`; equal to the convolution for symmetric masses.
    fn conv(&self, p: &[f64], q: &[f64], d: i64) -> f64 {
        let m = self.m;
        let mut acc = 0.0;
        for k in (-m).max(d - m)..=m.min(d + m) {
            acc += p[(k + m) as usize] * q[(k - d + m) as usize];
        }
        acc
    }

    /// `(u⋆u, u⋆l, l⋆l)` at difference `d`.
    fn terms(&self, d: i64) -> (f64, f64, f64) {
        (
            self.conv(&self.uniform, &self.uniform, d),
            self.conv(&self.uniform, &self.laplace, d),
            self.conv(&self.laplace, &self.laplace, d),
        )
    }
}

fn mixture_loglik(terms: &[(u64, (f64, f64, f64))], w: f64) -> f64 {
    let v = 1.0 - w;
    terms
        .iter()
        .map(|(count, (uu, ul, ll))| {
            let p = w * w * uu + 2.0 * w * v * ul + v * v * ll;
            *count as f64 * p.max(f64::MIN_POSITIVE).ln()
        })
        .sum()
}

fn grid_terms(
    hist: &BTreeMap<u64, u64>,
    halfwidth: f64,
    scale: f64,
) -> Vec<(u64, (f64, f64, f64))> {
    let max_d = hist.keys().next_back().copied().unwrap_or(0);
    let comps = Components::new(halfwidth, scale, max_d);
    hist.iter()
        .map(|(d, count)| (*count, comps.terms(*d as i64)))
        .collect()
}

/// Log-likelihood of integer round differences under the discretized model.
pub fn log_likelihood(model: &AnnotatorNoiseModel, diffs: &[i64]) -> f64 {
    let hist = abs_histogram(diffs);
    let terms = grid_terms(&hist, model.uniform_halfwidth, model.laplace_scale);
    mixture_loglik(&terms, model.mixture_weight)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    loglik: f64,
    w: f64,
    u: f64,
    b: f64,
}

impl Candidate {
    /// Higher likelihood wins; ties go to the lexicographically smaller parameters.
    fn beats(&self, other: &Candidate) -> bool {
        if self.loglik != other.loglik {
            return self.loglik > other.loglik;
        }
        (self.w, self.u, self.b) < (other.w, other.u, other.b)
    }
}

fn search(hist: &BTreeMap<u64, u64>, ws: &[f64], us: &[f64], bs: &[f64]) -> Candidate {
    use rayon::prelude::*;
    let cells: Vec<(f64, f64)> = us
        .iter()
        .flat_map(|u| bs.iter().map(move |b| (*u, *b)))
        .collect();
    let per_cell: Vec<Candidate> = cells
        .par_iter()
        .map(|(u, b)| {
            let terms = grid_terms(hist, *u, *b);
            let mut best: Option<Candidate> = None;
            for w in ws {
                let c = Candidate {
                    loglik: mixture_loglik(&terms, *w),
                    w: *w,
                    u: *u,
                    b: *b,
                };
                if best.is_none_or(|bst| c.beats(&bst)) {
                    best = Some(c);
                }
            }
            best.expect("non-empty weight grid")
        })
        .collect();
    // sequential reduction keeps the result independent of thread scheduling
    per_cell
        .into_iter()
        .reduce(|a, c| if c.beats(&a) { c } else { a })
        .expect("non-empty grid")
}

fn axis(center: f64, step: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut out: Vec<f64> = (-REFINE_HALF_SPAN..=REFINE_HALF_SPAN)
        .map(|i| center + i as f64 * step)
        .filter(|x| *x >= lo && *x <= hi)
        .collect();
    out.dedup();
    out
}

/// Maximum-likelihood mixture fit: coarse grid, then two 10× refinements
/// around the incumbent.
pub fn fit_noise_mixture(round_diffs: &[i64]) -> Result<NoiseFit> {
    if round_diffs.len() < MIN_FIT_SAMPLES {
        return Err(Error::Input(format!(
            "{} samples, need at least {MIN_FIT_SAMPLES}",
            round_diffs.len()
        )));
    }
    if round_diffs.iter().all(|d| *d == 0) {
        return Ok(NoiseFit {
            model: AnnotatorNoiseModel {
                mixture_weight: 0.0,
                uniform_halfwidth: COARSE_U[0],
                laplace_scale: 0.0,
            },
            log_likelihood: 0.0,
            degenerate: true,
        });
    }
    let hist = abs_histogram(round_diffs);
    let n_w = (COARSE_W_MAX / COARSE_W_STEP).round() as usize;
    let ws: Vec<f64> = (0..=n_w).map(|i| i as f64 * COARSE_W_STEP).collect();
    let n_b = ((COARSE_B_MAX - COARSE_B_MIN) / COARSE_B_STEP).round() as usize;
    let bs: Vec<f64> = (0..=n_b)
        .map(|i| COARSE_B_MIN + i as f64 * COARSE_B_STEP)
        .collect();
    let mut best = search(&hist, &ws, &COARSE_U, &bs);

    let (mut sw, mut su, mut sb) = (COARSE_W_STEP, COARSE_U_STEP, COARSE_B_STEP);
    for _ in 0..REFINE_ROUNDS {
        let (pw, pu, pb) = (sw, su, sb);
        sw /= 10.0;
        su /= 10.0;
        sb /= 10.0;
        let ws = axis(best.w, sw, 0.0, 1.0)
            .into_iter()
            .filter(|w| (w - best.w).abs() <= pw + 1e-12)
            .collect::<Vec<_>>();
        let us = axis(best.u, su, COARSE_U[0], COARSE_U[COARSE_U.len() - 1])
            .into_iter()
            .filter(|u| (u - best.u).abs() <= pu + 1e-9)
            .collect::<Vec<_>>();
        let bs = axis(best.b, sb, sb, f64::INFINITY)
            .into_iter()
            .filter(|b| (b - best.b).abs() <= pb + 1e-12)
            .collect::<Vec<_>>();
        let refined = search(&hist, &ws, &us, &bs);
        if refined.beats(&best) {
            best = refined;
        }
    }
    Ok(NoiseFit {
        model: AnnotatorNoiseModel::new(best.w, best.u, best.b)?,
        log_likelihood: best.loglik,
        degenerate: false,
    })
}

/// Reads round differences from a CSV with a `diff` column, or a bare list of integers.
pub fn parse_diffs_csv(text: &str) -> Result<Vec<i64>> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .peekable();
    let mut column = 0;
    if let Some(first) = lines.peek() {
        if first.parse::<i64>().is_err() {
            let header: Vec<&str> = first.split(',').map(str::trim).collect();
            column = header
                .iter()
                .position(|h| *h == "diff")
                .ok_or_else(|| Error::Input("diffs file needs a `diff` column".into()))?;
            lines.next();
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cell = line.split(',').nth(column).unwrap_or("").trim();
            cell.parse::<i64>()
                .map_err(|e| Error::Input(format!("diff row {}: {cell:?}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn published_bounds() {
        assert!((rmse_floor(5.7).unwrap() - 4.0305).abs() < 1e-3);
        assert_eq!(rmse_floor(0.0).unwrap(), 0.0);
        assert!((rmse_floor(2f64.sqrt()).unwrap() - 1.0).abs() < 1e-15);
        assert!((corr_ceiling(0.801).unwrap() - 0.8950).abs() < 1e-4);
        assert_eq!(corr_ceiling(1.0).unwrap(), 1.0);
        assert_eq!(corr_ceiling(0.0).unwrap(), 0.0);
        assert!(rmse_floor(-1.0).is_err());
        assert!(corr_ceiling(1.2).is_err());
    }

    #[test]
    fn expected_abs_identities() {
        let m = |w, u, b| AnnotatorNoiseModel::new(w, u, b).unwrap();
        assert_eq!(expected_abs(&m(0.0, 50.0, 2.0)), 2.0);
        assert_eq!(expected_abs(&m(1.0, 50.0, 2.0)), 25.0);
        assert!((expected_abs(&m(0.01, 50.0, 2.0)) - 2.23).abs() < 1e-12);
    }

    #[test]
    fn discretized_components_are_distributions() {
        let c = Components::new(50.0, 2.0, 0);
        let su: f64 = c.uniform.iter().sum();
        let sl: f64 = c.laplace.iter().sum();
        assert!((su - 1.0).abs() < 1e-12);
        assert!((sl - 1.0).abs() < 1e-12);
        let total: f64 = (-2 * c.m..=2 * c.m).map(|d| c.terms(d).2).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_zero_diffs_degenerate() {
        let fit = fit_noise_mixture(&[0; 60]).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.model.mixture_weight, 0.0);
        assert_eq!(fit.model.laplace_scale, 0.0);
        assert!(fit_noise_mixture(&[1; 10]).is_err());
    }

    #[test]
    fn diffs_parser_accepts_header_or_bare() {
        assert_eq!(parse_diffs_csv("diff\n1\n-2\n0\n").unwrap(), vec![1, -2, 0]);
        assert_eq!(
            parse_diffs_csv("id,diff\na,3\nb,-4\n").unwrap(),
            vec![3, -4]
        );
        assert_eq!(parse_diffs_csv("5\n6\n").unwrap(), vec![5, 6]);
        assert!(parse_diffs_csv("x\n1\n").is_err());
        assert!(parse_diffs_csv("diff\n1.5\n").is_err());
    }

    proptest! {
        #[test]
        fn floor_inverts_scaling(x in 0.0f64..1e6) {
            let back = rmse_floor(x * std::f64::consts::SQRT_2).unwrap();
            prop_assert!((back - x).abs() <= 1e-12 * x.max(1.0));
        }

        #[test]
        fn ceiling_squares_back(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let c = corr_ceiling(x).unwrap();
            prop_assert!((c * c - x).abs() <= 1e-12);
            if x < y {
                prop_assert!(c <= corr_ceiling(y).unwrap());
            }
        }

        #[test]
        fn expected_abs_linear_in_weight(u in 1.0f64..100.0, b in 0.1f64..10.0, w1 in 0.0f64..=1.0, w2 in 0.0f64..=1.0) {
            let e = |w| expected_abs(&AnnotatorNoiseModel::new(w, u, b).unwrap());
            let mid = e((w1 + w2) / 2.0);
            prop_assert!((mid - (e(w1) + e(w2)) / 2.0).abs() <= 1e-9);
        }
    }
}
