//! Feature-map primitives. Maps are `(channels, height, width)` row-major.

use serde::{Deserialize, Serialize};

use crate::real::{gemm, Mat, Real};

/// Unrolls `k×k` zero-padded neighborhoods into a `(c·k·k) × (h·w)` matrix.
pub fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    debug_assert_eq!(input.len(), c * h * w);
    if k == 1 {
        return input.to_vec();
    }
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = vec![T::zero(); c * k * k * hw];
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut out[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let d = &mut dst[y * w..(y + 1) * w];
                    let sx0 = (x_lo as isize + dx) as usize;
                    d[x_lo..x_hi].copy_from_slice(&src[sx0..sx0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters columns back onto a `(c, h, w)` map.
pub fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    if k == 1 {
        return cols.to_vec();
    }
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let sx0 = (x_lo as isize + dx) as usize;
                    let dst =
                        &mut plane[sy as usize * w + sx0..sy as usize * w + sx0 + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
    out
}

/// A same-padded stride-1 convolution whose weights live in a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// Offset of the `cout × (cin·k·k)` kernel matrix.
    pub weight: usize,
    /// Offset of the `cout` biases.
    pub bias: usize,
}

impl Conv {
    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.fan_in()
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    /// Returns the `(cout, h, w)` output and the unrolled input for the backward pass.
    pub fn forward<T: Real>(
        &self,
        params: &[T],
        input: &[T],
        h: usize,
        w: usize,
    ) -> (Vec<T>, Vec<T>) {
        let hw = h * w;
        let cols = im2col(input, self.cin, h, w, self.k);
        let mut out = vec![T::zero(); self.cout * hw];
        for (o, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.fill(params[self.bias + o]);
        }
        let kernel = &params[self.weight..self.weight + self.weight_len()];
        gemm(
            T::one(),
            Mat::new(kernel, self.cout, self.fan_in()),
            Mat::new(&cols, self.fan_in(), hw),
            T::one(),
            &mut out,
        );
        (out, cols)
    }

    /// Accumulates parameter gradients and returns the input gradient when asked.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        grads: &mut [T],
        cols: &[T],
        dout: &[T],
        h: usize,
        w: usize,
        want_input: bool,
    ) -> Option<Vec<T>> {
        let hw = h * w;
        for (o, chunk) in dout.chunks(hw).enumerate() {
            let s: T = chunk.iter().copied().sum();
            grads[self.bias + o] += s;
        }
        gemm(
            T::one(),
            Mat::new(dout, self.cout, hw),
            Mat::new(cols, self.fan_in(), hw).t(),
            T::one(),
            &mut grads[self.weight..self.weight + self.weight_len()],
        );
        if !want_input {
            return None;
        }
        let kernel = &params[self.weight..self.weight + self.weight_len()];
        let mut dcols = vec![T::zero(); self.fan_in() * hw];
        gemm(
            T::one(),
            Mat::new(kernel, self.cout, self.fan_in()).t(),
            Mat::new(dout, self.cout, hw),
            T::zero(),
            &mut dcols,
        );
        Some(col2im(&dcols, self.cin, h, w, self.k))
    }

    /// Multiply-accumulates for one application at `h×w`.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        (self.weight_len() * h * w) as u64
    }
}

/// 2×2 max-pool; returns the pooled map and, per output, the winning input index.
pub fn maxpool2<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let mut best = base + 2 * y * w + 2 * x;
                for idx in [best + 1, best + w, best + w + 1] {
                    // strict comparison keeps the first maximum in raster order
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Real>(dout: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut din = vec![T::zero(); input_len];
    for (g, i) in dout.iter().zip(arg) {
        din[*i as usize] += *g;
    }
    din
}

/// Nearest-neighbor ×2 upsampling.
pub fn upsample2<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let w2 = 2 * w;
    let mut out = vec![T::zero(); c * 4 * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            let src = &input[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
            let dst = &mut out[ch * 4 * h * w + y * w2..ch * 4 * h * w + (y + 1) * w2];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dout: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let w2 = 2 * w;
    let mut din = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            for x in 0..w2 {
                din[ch * h * w + (y / 2) * w + x / 2] += dout[ch * 4 * h * w + y * w2 + x];
            }
        }
    }
    din
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_conv(
        x: &[f64],
        wts: &[f64],
        bias: &[f64],
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
        k: usize,
    ) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; cout * h * w];
        for o in 0..cout {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = bias[o];
                    for ci in 0..cin {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (sy, sx) = (y + ky - pad, xx + kx - pad);
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    let wi = ((o * cin + ci) * k + ky as usize) * k + kx as usize;
                                    acc += wts[wi] * x[ci * h * w + sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[o * h * w + y as usize * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn conv_matches_naive(seed in 0u64..1000, k in prop_oneof![Just(1usize), Just(3), Just(5)]) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (cin, cout, h, w) = (2, 3, 5, 6);
            let conv = Conv { cin, cout, k, weight: 0, bias: cout * cin * k * k };
            let params: Vec<f64> = (0..conv.param_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..cin * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (out, _) = conv.forward(&params, &x, h, w);
            let expect = naive_conv(&x, &params[..conv.weight_len()], &params[conv.bias..], cin, cout, h, w, k);
            for (a, b) in out.iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn col2im_is_adjoint(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (c, h, w, k) = (2, 4, 5, 3);
            let x: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..c * k * k * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs: f64 = im2col(&x, c, h, w, k).iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&col2im(&y, c, h, w, k)).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn pool_and_upsample() {
        let x: Vec<f64> = vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 9.0, 0.0];
        let (p, arg) = maxpool2(&x, 1, 2, 4);
        assert_eq!(p, vec![5.0, 9.0]);
        assert_eq!(
            maxpool2_backward(&[1.0, 2.0], &arg, 8),
            vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]
        );
        let u = upsample2(&[1.0, 2.0], 1, 1, 2);
        assert_eq!(u, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        assert_eq!(upsample2_backward(&u, 1, 1, 2), vec![4.0, 8.0]);
    }
}
