//! The encoder/decoder network: ConvLSTM blocks on a max-pool pyramid, a
//! nearest-upsampling decoder with skip connections, and a sigmoid head.
//! Frames are processed one at a time, so inference is causal by construction.

use lvkd_core::data_model::{SoftMaskSequence, VideoClip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cell::{cell_backward, cell_forward, CellCache, CellState};
use crate::config::{CellLayout, Layout, ModelConfig, Residual};
use crate::error::{Result, StudentError};
use crate::loss::{frame_loss, LossKind};
use crate::ops::{maxpool2, maxpool2_backward, upsample2, upsample2_backward, Conv};
use crate::real::{sigmoid, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<T>,
    seed: u64,
}

/// Recurrent state of every ConvLSTM layer, `[block][layer]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub height: usize,
    pub width: usize,
    pub layers: Vec<Vec<CellState<T>>>,
}

fn uniform_fill<T: Real>(dst: &mut [T], bound: f64, rng: &mut ChaCha8Rng) {
    for p in dst {
        *p = T::of(rng.random_range(-bound..=bound));
    }
}

fn init_conv<T: Real>(conv: &Conv, params: &mut [T], gain: f64, rng: &mut ChaCha8Rng) {
    let bound = (gain / conv.fan_in() as f64).sqrt();
    uniform_fill(
        &mut params[conv.weight..conv.weight + conv.weight_len()],
        bound,
        rng,
    );
    params[conv.bias..conv.bias + conv.cout].fill(T::zero());
}

pub(crate) fn init_cell<T: Real>(cell: &CellLayout, params: &mut [T], rng: &mut ChaCha8Rng) {
    init_conv(&cell.conv, params, 3.0, rng);
    let hid = cell.config.hidden_channels;
    params[cell.conv.bias + hid..cell.conv.bias + 2 * hid].fill(T::one());
    if let Some(off) = cell.peephole {
        params[off..off + 3 * hid].fill(T::zero());
    }
}

struct StepCache<T> {
    pool_args: Vec<Vec<u32>>,
    cells: Vec<Vec<CellCache<T>>>,
    residual_cols: Option<Vec<T>>,
    /// Per decoder stage: unrolled input and post-ReLU output.
    decoder: Vec<(Vec<T>, Vec<T>)>,
    head_cols: Vec<T>,
}

/// Carried gradients for backpropagation through time, `[block][layer]`.
struct Carry<T> {
    dh: Vec<Vec<Vec<T>>>,
    dc: Vec<Vec<Vec<T>>>,
}

impl<T: Real> Model<T> {
    /// Validates the configuration and draws fan-in-scaled uniform weights.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in &layout.blocks {
            for cell in block {
                init_cell(cell, &mut params, &mut rng);
            }
        }
        if let Some(Residual::Project(conv)) = &layout.residual {
            init_conv(conv, &mut params, 3.0, &mut rng);
        }
        for conv in layout.decoder.iter().rev() {
            init_conv(conv, &mut params, 6.0, &mut rng);
        }
        init_conv(&layout.head, &mut params, 3.0, &mut rng);
        Ok(Self {
            config: config.clone(),
            layout,
            params,
            seed,
        })
    }

    /// Reassembles a model from stored parameters.
    pub fn from_parts(config: ModelConfig, seed: u64, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(StudentError::shape(
                "parameters",
                layout.total,
                params.len(),
            ));
        }
        Ok(Self {
            config,
            layout,
            params,
            seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(StudentError::Config(format!(
                "threshold {threshold} outside (0, 1)"
            )));
        }
        self.config.threshold = threshold;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::of(p.as_f64())).collect(),
            seed: self.seed,
        }
    }

    fn sizes(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        (0..=self.config.num_blocks)
            .map(|k| (height >> k, width >> k))
            .collect()
    }

    /// Zeroed recurrent state for `height×width` frames.
    pub fn zero_state(&self, height: usize, width: usize) -> Result<ModelState<T>> {
        self.config.check_input(height, width)?;
        let sizes = self.sizes(height, width);
        let layers = self
            .layout
            .blocks
            .iter()
            .enumerate()
            .map(|(k, block)| {
                let (h, w) = sizes[k + 1];
                block
                    .iter()
                    .map(|c| CellState::zeros(c.config.hidden_channels * h * w))
                    .collect()
            })
            .collect();
        Ok(ModelState {
            height,
            width,
            layers,
        })
    }

    /// Advances one frame and returns the output logits.
    pub fn step(&self, state: &mut ModelState<T>, frame: &[T]) -> Result<Vec<T>> {
        let n = state.height * state.width;
        if frame.len() != n {
            return Err(StudentError::shape("frame pixels", n, frame.len()));
        }
        Ok(self.step_inner(state, frame, None))
    }

    fn step_inner(
        &self,
        state: &mut ModelState<T>,
        x: &[T],
        mut cache: Option<&mut Vec<StepCache<T>>>,
    ) -> Vec<T> {
        let keep = cache.is_some();
        let (height, width) = (state.height, state.width);
        let sizes = self.sizes(height, width);
        let widths = &self.config.channel_widths;
        let b = self.config.num_blocks;
        let p = &self.params;

        let mut pool_args = Vec::with_capacity(b);
        let mut cell_caches = Vec::with_capacity(b);
        let mut residual_cols = None;
        let mut encoded: Vec<Vec<T>> = Vec::with_capacity(b);
        for (k, block) in self.layout.blocks.iter().enumerate() {
            let (ph, pw) = sizes[k];
            let (h, w) = sizes[k + 1];
            let (block_in, arg) = {
                let (prev, ch) = if k == 0 {
                    (x, 1)
                } else {
                    (encoded[k - 1].as_slice(), widths[k - 1])
                };
                maxpool2(prev, ch, ph, pw)
            };
            let mut caches = Vec::with_capacity(block.len());
            let mut cur = block_in.clone();
            for (j, cell) in block.iter().enumerate() {
                let (next, c) = cell_forward(cell, p, &cur, &state.layers[k][j], h, w, keep);
                cur = next.h.clone();
                state.layers[k][j] = next;
                if let Some(c) = c {
                    caches.push(c);
                }
            }
            if k + 1 == b {
                match &self.layout.residual {
                    Some(Residual::Identity) => {
                        cur.iter_mut().zip(&block_in).for_each(|(a, r)| *a += *r);
                    }
                    Some(Residual::Project(conv)) => {
                        let (r, cols) = conv.forward(p, &block_in, h, w);
                        cur.iter_mut().zip(&r).for_each(|(a, r)| *a += *r);
                        residual_cols = Some(cols);
                    }
                    None => {}
                }
            }
            pool_args.push(arg);
            cell_caches.push(caches);
            encoded.push(cur);
        }

        let mut decoder_cache = vec![(Vec::new(), Vec::new()); b];
        let mut d = encoded[b - 1].clone();
        for stage in (1..=b).rev() {
            let (h, w) = sizes[stage];
            let (uh, uw) = sizes[stage - 1];
            let mut concat = upsample2(&d, widths[stage - 1], h, w);
            concat.extend_from_slice(if stage == 1 { x } else { &encoded[stage - 2] });
            let conv = &self.layout.decoder[stage - 1];
            let (mut out, cols) = conv.forward(p, &concat, uh, uw);
            out.iter_mut().for_each(|v| *v = v.max(T::zero()));
            if keep {
                decoder_cache[stage - 1] = (cols, out.clone());
            }
            d = out;
        }
        let (logits, head_cols) = self.layout.head.forward(p, &d, height, width);
        if let Some(cache) = cache.as_mut() {
            cache.push(StepCache {
                pool_args,
                cells: cell_caches,
                residual_cols,
                decoder: decoder_cache,
                head_cols,
            });
        }
        logits
    }

    fn backward_step(
        &self,
        cache: &StepCache<T>,
        dlogit: &[T],
        carry: &mut Carry<T>,
        grads: &mut [T],
        height: usize,
        width: usize,
    ) {
        let sizes = self.sizes(height, width);
        let widths = &self.config.channel_widths;
        let b = self.config.num_blocks;
        let p = &self.params;

        let mut dd = self
            .layout
            .head
            .backward(p, grads, &cache.head_cols, dlogit, height, width, true)
            .expect("input gradient");
        let mut de: Vec<Vec<T>> = (0..b)
            .map(|k| vec![T::zero(); widths[k] * sizes[k + 1].0 * sizes[k + 1].1])
            .collect();
        for stage in 1..=b {
            let (uh, uw) = sizes[stage - 1];
            let (cols, out) = &cache.decoder[stage - 1];
            dd.iter_mut().zip(out).for_each(|(g, o)| {
                if *o <= T::zero() {
                    *g = T::zero();
                }
            });
            let dconcat = self.layout.decoder[stage - 1]
                .backward(p, grads, cols, &dd, uh, uw, true)
                .expect("input gradient");
            let split = widths[stage - 1] * uh * uw;
            if stage >= 2 {
                de[stage - 2]
                    .iter_mut()
                    .zip(&dconcat[split..])
                    .for_each(|(a, g)| *a += *g);
            }
            let (h, w) = sizes[stage];
            dd = upsample2_backward(&dconcat[..split], widths[stage - 1], h, w);
        }
        de[b - 1].iter_mut().zip(&dd).for_each(|(a, g)| *a += *g);

        for k in (0..b).rev() {
            let (h, w) = sizes[k + 1];
            let block = &self.layout.blocks[k];
            let dout = std::mem::take(&mut de[k]);
            let mut d_block_in: Option<Vec<T>> = None;
            if k + 1 == b {
                match &self.layout.residual {
                    Some(Residual::Identity) => d_block_in = Some(dout.clone()),
                    Some(Residual::Project(conv)) => {
                        let cols = cache.residual_cols.as_ref().expect("residual cache");
                        d_block_in = conv.backward(p, grads, cols, &dout, h, w, true);
                    }
                    None => {}
                }
            }
            let mut dcur = dout;
            for j in (0..block.len()).rev() {
                let dh: Vec<T> = dcur
                    .iter()
                    .zip(&carry.dh[k][j])
                    .map(|(a, b)| *a + *b)
                    .collect();
                let g = cell_backward(
                    &block[j],
                    p,
                    grads,
                    &cache.cells[k][j],
                    &dh,
                    &carry.dc[k][j],
                    h,
                    w,
                );
                carry.dh[k][j] = g.dh_prev;
                carry.dc[k][j] = g.dc_prev;
                dcur = g.dx;
            }
            if let Some(extra) = d_block_in {
                dcur.iter_mut().zip(&extra).for_each(|(a, g)| *a += *g);
            }
            if k > 0 {
                let (ph, pw) = sizes[k];
                let dprev = maxpool2_backward(&dcur, &cache.pool_args[k], widths[k - 1] * ph * pw);
                de[k - 1].iter_mut().zip(&dprev).for_each(|(a, g)| *a += *g);
            }
        }
    }

    /// Logits for `t` frames stored contiguously, after `prepad` copies of the first frame.
    pub fn forward_logits(
        &self,
        frames: &[T],
        t: usize,
        height: usize,
        width: usize,
        prepad: usize,
    ) -> Result<Vec<T>> {
        let n = height * width;
        if frames.len() != t * n {
            return Err(StudentError::shape("frames", t * n, frames.len()));
        }
        let mut state = self.zero_state(height, width)?;
        if t > 0 {
            for _ in 0..prepad {
                self.step_inner(&mut state, &frames[..n], None);
            }
        }
        let mut out = Vec::with_capacity(t * n);
        for frame in frames.chunks(n) {
            out.extend(self.step_inner(&mut state, frame, None));
        }
        Ok(out)
    }

    /// Soft masks for a clip, frame by frame.
    pub fn forward(&self, clip: &VideoClip, prepad: usize) -> Result<SoftMaskSequence> {
        let (t, h, w) = clip.dims();
        let frames: Vec<T> = clip.data().iter().map(|v| T::of(*v as f64)).collect();
        let logits = self.forward_logits(&frames, t, h, w, prepad)?;
        // keep probabilities strictly inside (0, 1) after rounding to f32
        let hi = 1.0 - f32::EPSILON / 2.0;
        let probs = logits
            .iter()
            .map(|z| (sigmoid(z.as_f64()) as f32).clamp(f32::MIN_POSITIVE, hi))
            .collect();
        Ok(SoftMaskSequence::new(clip.id(), (t, h, w), probs)?)
    }

    /// Mean per-frame loss over a window and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        frames: &[T],
        targets: &[T],
        t: usize,
        height: usize,
        width: usize,
        kind: LossKind,
    ) -> Result<(f64, Vec<T>)> {
        let n = height * width;
        if frames.len() != t * n || targets.len() != t * n {
            return Err(StudentError::shape(
                "frames",
                t * n,
                frames.len().max(targets.len()),
            ));
        }
        let mut state = self.zero_state(height, width)?;
        let mut caches = Vec::with_capacity(t);
        let mut dlogits = Vec::with_capacity(t);
        let mut total = 0.0;
        let scale = T::of(1.0 / t as f64);
        for (frame, target) in frames.chunks(n).zip(targets.chunks(n)) {
            let logits = self.step_inner(&mut state, frame, Some(&mut caches));
            let (loss, mut g) = frame_loss(kind, &logits, target);
            g.iter_mut().for_each(|v| *v *= scale);
            total += loss;
            dlogits.push(g);
        }
        let mut grads = vec![T::zero(); self.params.len()];
        let mut carry = Carry {
            dh: state
                .layers
                .iter()
                .map(|b| b.iter().map(|s| vec![T::zero(); s.h.len()]).collect())
                .collect(),
            dc: state
                .layers
                .iter()
                .map(|b| b.iter().map(|s| vec![T::zero(); s.c.len()]).collect())
                .collect(),
        };
        for step in (0..t).rev() {
            self.backward_step(
                &caches[step],
                &dlogits[step],
                &mut carry,
                &mut grads,
                height,
                width,
            );
        }
        Ok((total / t as f64, grads))
    }

    /// Loss only; used for validation and finite differences.
    pub fn loss(
        &self,
        frames: &[T],
        targets: &[T],
        t: usize,
        height: usize,
        width: usize,
        kind: LossKind,
    ) -> Result<f64> {
        let logits = self.forward_logits(frames, t, height, width, 0)?;
        let n = height * width;
        let total: f64 = logits
            .chunks(n)
            .zip(targets.chunks(n))
            .map(|(z, y)| frame_loss(kind, z, y).0)
            .sum();
        Ok(total / t as f64)
    }
}

/// Builds the `f32` training model.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model<f32>> {
    Model::build(config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lvkd_core::data_model::ClipSource;

    fn clip(t: usize, side: usize, seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t * side * side).map(|_| rng.random::<f32>()).collect();
        VideoClip::new("c", 30.0, ClipSource::Synthetic, (t, side, side), data).unwrap()
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelConfig::grid(2, 2, (16, 16));
        let a = build_model(&cfg, 9).unwrap();
        let b = build_model(&cfg, 9).unwrap();
        assert_eq!(
            a.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
            b.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a.params(), build_model(&cfg, 10).unwrap().params());
    }

    #[test]
    fn outputs_stay_inside_unit_interval() {
        let cfg = ModelConfig::grid(2, 1, (16, 16));
        let m = build_model(&cfg, 1).unwrap();
        let out = m.forward(&clip(5, 16, 2), 0).unwrap();
        assert!(out.data().iter().all(|p| *p > 0.0 && *p < 1.0));
        let single = m.forward(&clip(1, 16, 3), 4).unwrap();
        assert_eq!(single.num_frames(), 1);
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let cfg = ModelConfig::grid(3, 1, (16, 16));
        let m = build_model(&cfg, 1).unwrap();
        let err = m.forward(&clip(2, 12, 1), 0).unwrap_err();
        assert!(matches!(
            err,
            StudentError::Core(lvkd_core::Error::Shape { .. })
        ));
    }

    #[test]
    fn prepad_replays_first_frame() {
        let cfg = ModelConfig::grid(1, 1, (8, 8));
        let m = build_model(&cfg, 4).unwrap();
        let c = clip(3, 8, 5);
        let first = c.window(0, 1).unwrap();
        let mut padded = Vec::new();
        for _ in 0..3 {
            padded.extend_from_slice(first.data());
        }
        padded.extend_from_slice(c.data());
        let padded = VideoClip::new("c", 30.0, ClipSource::Synthetic, (6, 8, 8), padded).unwrap();
        let a = m.forward(&c, 3).unwrap();
        let b = m.forward(&padded, 0).unwrap();
        assert_eq!(a.data(), &b.data()[3 * 64..]);
    }
}
