//! Convolutional LSTM cell: gates i, f, o, g from one convolution over the
//! concatenated input and hidden maps, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
//! With peepholes, i and f also see `c` and o sees `c'` through per-channel weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{CellLayout, ConvLstmCellConfig, ParamEntry};
use crate::error::{Result, StudentError};
use crate::real::{sigmoid, Real};

/// Hidden and cell maps of one layer, `hidden × h × w` each.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> CellState<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            h: vec![T::zero(); len],
            c: vec![T::zero(); len],
        }
    }
}

/// Intermediate values a backward pass needs.
#[derive(Debug, Clone)]
pub struct CellCache<T> {
    cols: Vec<T>,
    /// Activated gates, `4 × hidden × h × w`, ordered i, f, o, g.
    gates: Vec<T>,
    c_prev: Vec<T>,
    c: Vec<T>,
}

/// Gradients flowing out of one backward step.
pub struct CellGrads<T> {
    pub dx: Vec<T>,
    pub dh_prev: Vec<T>,
    pub dc_prev: Vec<T>,
}

pub fn cell_forward<T: Real>(
    cell: &CellLayout,
    params: &[T],
    x: &[T],
    state: &CellState<T>,
    h: usize,
    w: usize,
    keep_cache: bool,
) -> (CellState<T>, Option<CellCache<T>>) {
    let hid = cell.config.hidden_channels;
    let n = hid * h * w;
    let hw = h * w;
    let mut input = Vec::with_capacity(x.len() + n);
    input.extend_from_slice(x);
    input.extend_from_slice(&state.h);
    let (mut z, cols) = cell.conv.forward(params, &input, h, w);
    let peep = cell.peephole.map(|off| &params[off..off + 3 * hid]);
    let mut c_new = vec![T::zero(); n];
    let mut h_new = vec![T::zero(); n];
    for ch in 0..hid {
        let (pi, pf, po) = match peep {
            Some(p) => (p[ch], p[hid + ch], p[2 * hid + ch]),
            None => (T::zero(), T::zero(), T::zero()),
        };
        for px in 0..hw {
            let idx = ch * hw + px;
            let cp = state.c[idx];
            let i = sigmoid(z[idx] + pi * cp);
            let f = sigmoid(z[n + idx] + pf * cp);
            let g = z[3 * n + idx].tanh();
            let c = f * cp + i * g;
            let o = sigmoid(z[2 * n + idx] + po * c);
            z[idx] = i;
            z[n + idx] = f;
            z[2 * n + idx] = o;
            z[3 * n + idx] = g;
            c_new[idx] = c;
            h_new[idx] = o * c.tanh();
        }
    }
    let cache = keep_cache.then(|| CellCache {
        cols,
        gates: z,
        c_prev: state.c.clone(),
        c: c_new.clone(),
    });
    (CellState { h: h_new, c: c_new }, cache)
}

/// Backpropagates `dh` (total gradient on this step's hidden output) and
/// `dc_next` (gradient reaching this step's cell map from the next step).
pub fn cell_backward<T: Real>(
    cell: &CellLayout,
    params: &[T],
    grads: &mut [T],
    cache: &CellCache<T>,
    dh: &[T],
    dc_next: &[T],
    h: usize,
    w: usize,
) -> CellGrads<T> {
    let hid = cell.config.hidden_channels;
    let n = hid * h * w;
    let hw = h * w;
    let one = T::one();
    let mut dz = vec![T::zero(); 4 * n];
    let mut dc_prev = vec![T::zero(); n];
    let peep = cell
        .peephole
        .map(|off| (off, params[off..off + 3 * hid].to_vec()));
    let mut dpeep = vec![T::zero(); if peep.is_some() { 3 * hid } else { 0 }];
    for ch in 0..hid {
        let (pi, pf, po) = match &peep {
            Some((_, p)) => (p[ch], p[hid + ch], p[2 * hid + ch]),
            None => (T::zero(), T::zero(), T::zero()),
        };
        for px in 0..hw {
            let idx = ch * hw + px;
            let (i, f, o, g) = (
                cache.gates[idx],
                cache.gates[n + idx],
                cache.gates[2 * n + idx],
                cache.gates[3 * n + idx],
            );
            let (cp, c) = (cache.c_prev[idx], cache.c[idx]);
            let tc = c.tanh();
            let da_o = dh[idx] * tc * o * (one - o);
            let dc = dc_next[idx] + dh[idx] * o * (one - tc * tc) + da_o * po;
            let da_i = dc * g * i * (one - i);
            let da_f = dc * cp * f * (one - f);
            let da_g = dc * i * (one - g * g);
            dz[idx] = da_i;
            dz[n + idx] = da_f;
            dz[2 * n + idx] = da_o;
            dz[3 * n + idx] = da_g;
            dc_prev[idx] = dc * f + da_i * pi + da_f * pf;
            if !dpeep.is_empty() {
                dpeep[ch] += da_i * cp;
                dpeep[hid + ch] += da_f * cp;
                dpeep[2 * hid + ch] += da_o * c;
            }
        }
    }
    if let Some((off, _)) = peep {
        for (g, d) in grads[off..off + 3 * hid].iter_mut().zip(&dpeep) {
            *g += *d;
        }
    }
    let dinput = cell
        .conv
        .backward(params, grads, &cache.cols, &dz, h, w, true)
        .expect("input gradient requested");
    let split = cell.config.in_channels * hw;
    CellGrads {
        dx: dinput[..split].to_vec(),
        dh_prev: dinput[split..].to_vec(),
        dc_prev,
    }
}

/// A single ConvLSTM layer with its own parameters.
#[derive(Debug, Clone)]
pub struct ConvLstmCell<T> {
    pub layout: CellLayout,
    pub entries: Vec<ParamEntry>,
    pub params: Vec<T>,
}

impl<T: Real> ConvLstmCell<T> {
    pub fn new(config: ConvLstmCellConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, entries, total) = CellLayout::standalone(config);
        let mut params = vec![T::zero(); total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::model::init_cell(&layout, &mut params, &mut rng);
        Ok(Self {
            layout,
            entries,
            params,
        })
    }

    pub fn config(&self) -> ConvLstmCellConfig {
        self.layout.config
    }

    /// One time step on an `h×w` map.
    pub fn step(&self, x: &[T], state: &CellState<T>, h: usize, w: usize) -> Result<CellState<T>> {
        let cfg = self.layout.config;
        if x.len() != cfg.in_channels * h * w {
            return Err(StudentError::shape(
                "input channels",
                cfg.in_channels * h * w,
                x.len(),
            ));
        }
        let n = cfg.hidden_channels * h * w;
        if state.h.len() != n || state.c.len() != n {
            return Err(StudentError::shape(
                "hidden channels",
                n,
                state.h.len().max(state.c.len()),
            ));
        }
        Ok(cell_forward(&self.layout, &self.params, x, state, h, w, false).0)
    }

    /// Runs a sequence keeping every cache, for training or gradient checks.
    pub fn run_cached(
        &self,
        xs: &[Vec<T>],
        h: usize,
        w: usize,
    ) -> (Vec<CellState<T>>, Vec<CellCache<T>>) {
        let mut state = CellState::zeros(self.layout.config.hidden_channels * h * w);
        let mut states = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = cell_forward(&self.layout, &self.params, x, &state, h, w, true);
            caches.push(cache.expect("cache requested"));
            states.push(next.clone());
            state = next;
        }
        (states, caches)
    }

    /// Backpropagation through time given `dL/dh_t` for every step.
    /// Returns parameter gradients and input gradients per step.
    pub fn backward_sequence(
        &self,
        caches: &[CellCache<T>],
        dhs: &[Vec<T>],
        h: usize,
        w: usize,
    ) -> (Vec<T>, Vec<Vec<T>>) {
        let n = self.layout.config.hidden_channels * h * w;
        let mut grads = vec![T::zero(); self.params.len()];
        let mut dh_next = vec![T::zero(); n];
        let mut dc_next = vec![T::zero(); n];
        let mut dxs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let dh: Vec<T> = dhs[t].iter().zip(&dh_next).map(|(a, b)| *a + *b).collect();
            let g = cell_backward(
                &self.layout,
                &self.params,
                &mut grads,
                &caches[t],
                &dh,
                &dc_next,
                h,
                w,
            );
            dxs[t] = g.dx;
            dh_next = g.dh_prev;
            dc_next = g.dc_prev;
        }
        (grads, dxs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_everything_gives_zero() {
        let cfg = ConvLstmCellConfig {
            in_channels: 2,
            hidden_channels: 3,
            kernel_size: 3,
            uses_peephole: false,
        };
        let mut cell = ConvLstmCell::<f64>::new(cfg, 1).unwrap();
        cell.params.iter_mut().for_each(|p| *p = 0.0);
        let out = cell
            .step(&[0.0; 2 * 25], &CellState::zeros(75), 5, 5)
            .unwrap();
        assert!(out.h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_accumulates() {
        let cfg = ConvLstmCellConfig {
            in_channels: 1,
            hidden_channels: 2,
            kernel_size: 3,
            uses_peephole: false,
        };
        let mut cell = ConvLstmCell::<f64>::new(cfg, 3).unwrap();
        let hid = 2;
        let bias = cell.layout.conv.bias;
        for ch in 0..hid {
            cell.params[bias + hid + ch] = 20.0;
        }
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let prev = CellState {
            h: vec![0.1; 32],
            c: (0..32).map(|i| i as f64 * 0.05 - 0.8).collect(),
        };
        let (next, cache) = cell_forward(&cell.layout, &cell.params, &x, &prev, 4, 4, true);
        let cache = cache.unwrap();
        let n = 32;
        for idx in 0..n {
            let expect = prev.c[idx] + cache.gates[idx] * cache.gates[3 * n + idx];
            assert!((next.c[idx] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_errors_name_dimension() {
        let cfg = ConvLstmCellConfig {
            in_channels: 2,
            hidden_channels: 3,
            kernel_size: 3,
            uses_peephole: false,
        };
        let cell = ConvLstmCell::<f64>::new(cfg, 1).unwrap();
        let err = cell
            .step(&[0.0; 10], &CellState::zeros(75), 5, 5)
            .unwrap_err();
        assert!(err.to_string().contains("input channels"));
        let err = cell
            .step(&[0.0; 50], &CellState::zeros(70), 5, 5)
            .unwrap_err();
        assert!(err.to_string().contains("hidden channels"));
        assert!(ConvLstmCell::<f64>::new(
            ConvLstmCellConfig {
                kernel_size: 2,
                ..cfg
            },
            0
        )
        .is_err());
    }
}
