//! Model family configuration and the parameter layout derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StudentError};
use crate::ops::Conv;

pub const MAX_BLOCKS: usize = 4;
pub const MAX_LAYERS: usize = 4;
pub const DEFAULT_WIDTHS: [usize; MAX_BLOCKS] = [16, 24, 32, 40];
pub const PARAM_BUDGET: usize = 4_000_000;
/// Sanity ceilings checked before any size arithmetic.
pub const MAX_WIDTH: usize = 4096;
pub const MAX_KERNEL: usize = 15;
pub const MAX_SIDE: usize = 4096;
/// Published inference cost of the DeepLabv3 teacher, for comparison tables.
pub const TEACHER_GFLOPS: f64 = 7.84;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLstmCellConfig {
    pub in_channels: usize,
    pub hidden_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default)]
    pub uses_peephole: bool,
}

fn default_kernel() -> usize {
    3
}

fn default_threshold() -> f64 {
    0.5
}

impl ConvLstmCellConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(StudentError::Config(format!(
                "kernel size {} must be odd",
                self.kernel_size
            )));
        }
        if self.in_channels == 0 || self.hidden_channels == 0 {
            return Err(StudentError::Config(
                "channel counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (i, h, k) = (self.in_channels, self.hidden_channels, self.kernel_size);
        4 * h * (i + h) * k * k + 4 * h + if self.uses_peephole { 3 * h } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub layers_per_block: usize,
    pub channel_widths: Vec<usize>,
    #[serde(default)]
    pub residual_last_block: bool,
    #[serde(default)]
    pub peephole: bool,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    /// `(height, width)` of input frames.
    pub input_size: (usize, usize),
    /// Binarization threshold, set by calibration.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl ModelConfig {
    /// Grid member `B{blocks}_l{layers}` at the default widths.
    pub fn grid(blocks: usize, layers: usize, input_size: (usize, usize)) -> Self {
        Self {
            num_blocks: blocks,
            layers_per_block: layers,
            channel_widths: DEFAULT_WIDTHS[..blocks.min(MAX_BLOCKS)].to_vec(),
            residual_last_block: false,
            peephole: false,
            kernel_size: 3,
            input_size,
            threshold: 0.5,
        }
    }

    pub fn name(&self) -> String {
        format!("B{}_l{}", self.num_blocks, self.layers_per_block)
    }

    /// Checks structural invariants and the parameter budget.
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BLOCKS).contains(&self.num_blocks) {
            return Err(StudentError::Config(format!(
                "num_blocks {} outside 1..={MAX_BLOCKS}",
                self.num_blocks
            )));
        }
        if !(1..=MAX_LAYERS).contains(&self.layers_per_block) {
            return Err(StudentError::Config(format!(
                "layers_per_block {} outside 1..={MAX_LAYERS}",
                self.layers_per_block
            )));
        }
        if self.channel_widths.len() != self.num_blocks {
            return Err(StudentError::Config(format!(
                "{} channel widths for {} blocks",
                self.channel_widths.len(),
                self.num_blocks
            )));
        }
        if self
            .channel_widths
            .iter()
            .any(|w| *w == 0 || *w > MAX_WIDTH)
        {
            return Err(StudentError::Config(format!(
                "channel widths must lie in 1..={MAX_WIDTH}"
            )));
        }
        if self.kernel_size > MAX_KERNEL {
            return Err(StudentError::Config(format!(
                "kernel size {} above {MAX_KERNEL}",
                self.kernel_size
            )));
        }
        if self.input_size.0 > MAX_SIDE || self.input_size.1 > MAX_SIDE {
            return Err(StudentError::Config(format!("input side above {MAX_SIDE}")));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(StudentError::Config(format!(
                "kernel size {} must be odd",
                self.kernel_size
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(StudentError::Config(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        self.check_input(self.input_size.0, self.input_size.1)?;
        let count = param_count(self);
        if count > PARAM_BUDGET {
            return Err(StudentError::Budget {
                count,
                budget: PARAM_BUDGET,
            });
        }
        Ok(())
    }

    /// Frame sides must survive `num_blocks` halvings.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let step = 1usize << self.num_blocks;
        if height == 0 || !height.is_multiple_of(step) {
            return Err(StudentError::shape(
                "height",
                height.div_ceil(step).max(1) * step,
                height,
            ));
        }
        if width == 0 || !width.is_multiple_of(step) {
            return Err(StudentError::shape(
                "width",
                width.div_ceil(step).max(1) * step,
                width,
            ));
        }
        Ok(())
    }

    fn decoder_out(&self, stage: usize) -> usize {
        if stage == 1 {
            (self.channel_widths[0] / 2).max(1)
        } else {
            self.channel_widths[stage - 2]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellLayout {
    pub config: ConvLstmCellConfig,
    /// Gate convolution over `[input, hidden]`, output gates ordered i, f, o, g.
    pub conv: Conv,
    /// Offset of the `3 × hidden` peephole weights (input, forget, output).
    pub peephole: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Residual {
    Identity,
    Project(Conv),
}

/// Where each layer's parameters live in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub blocks: Vec<Vec<CellLayout>>,
    pub residual: Option<Residual>,
    /// `decoder[k - 1]` is the stage that restores block `k`'s input resolution.
    pub decoder: Vec<Conv>,
    pub head: Conv,
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

struct Builder {
    entries: Vec<ParamEntry>,
    next: usize,
}

impl Builder {
    fn take(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.next;
        self.next += shape.iter().product::<usize>();
        self.entries.push(ParamEntry {
            name,
            shape,
            offset,
        });
        offset
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let weight = self.take(format!("{prefix}.weight"), vec![cout, cin, k, k]);
        let bias = self.take(format!("{prefix}.bias"), vec![cout]);
        Conv {
            cin,
            cout,
            k,
            weight,
            bias,
        }
    }

    fn cell(&mut self, prefix: &str, config: ConvLstmCellConfig) -> CellLayout {
        let h = config.hidden_channels;
        let conv = self.conv(prefix, config.in_channels + h, 4 * h, config.kernel_size);
        let peephole = config
            .uses_peephole
            .then(|| self.take(format!("{prefix}.peephole"), vec![3, h]));
        CellLayout {
            config,
            conv,
            peephole,
        }
    }
}

impl CellLayout {
    /// Layout of a standalone cell starting at offset 0.
    pub fn standalone(config: ConvLstmCellConfig) -> (Self, Vec<ParamEntry>, usize) {
        let mut b = Builder {
            entries: Vec::new(),
            next: 0,
        };
        let cell = b.cell("cell", config);
        (cell, b.entries, b.next)
    }
}

impl Layout {
    /// Assumes a validated structure (blocks, layers and widths consistent).
    pub fn new(config: &ModelConfig) -> Self {
        let mut b = Builder {
            entries: Vec::new(),
            next: 0,
        };
        let widths = &config.channel_widths;
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for (bi, &width) in widths.iter().enumerate() {
            let block_in = if bi == 0 { 1 } else { widths[bi - 1] };
            let layers = (0..config.layers_per_block)
                .map(|li| {
                    let cfg = ConvLstmCellConfig {
                        in_channels: if li == 0 { block_in } else { width },
                        hidden_channels: width,
                        kernel_size: config.kernel_size,
                        uses_peephole: config.peephole,
                    };
                    b.cell(&format!("enc{}.lstm{}", bi + 1, li + 1), cfg)
                })
                .collect();
            blocks.push(layers);
        }
        let residual = config.residual_last_block.then(|| {
            let last = config.num_blocks - 1;
            let block_in = if last == 0 { 1 } else { widths[last - 1] };
            if block_in == widths[last] {
                Residual::Identity
            } else {
                Residual::Project(b.conv("residual", block_in, widths[last], 1))
            }
        });
        let mut decoder = vec![None; config.num_blocks];
        for stage in (1..=config.num_blocks).rev() {
            let skip = if stage == 1 { 1 } else { widths[stage - 2] };
            let conv = b.conv(
                &format!("dec{stage}"),
                widths[stage - 1] + skip,
                config.decoder_out(stage),
                3,
            );
            decoder[stage - 1] = Some(conv);
        }
        let head = b.conv("head", config.decoder_out(1), 1, 1);
        Self {
            blocks,
            residual,
            decoder: decoder
                .into_iter()
                .map(|c| c.expect("every stage built"))
                .collect(),
            head,
            entries: b.entries,
            total: b.next,
        }
    }
}

/// Trainable parameter count, from the layer layout.
pub fn param_count(config: &ModelConfig) -> usize {
    Layout::new(config).total
}

/// Inference cost per frame in GFLOPS; a multiply-accumulate counts as two.
pub fn flops_estimate(config: &ModelConfig, height: usize, width: usize) -> f64 {
    let layout = Layout::new(config);
    let conv = |c: &Conv, h: usize, w: usize| 2 * c.macs(h, w) + (c.cout * h * w) as u64;
    let mut flops = 0u64;
    let (mut h, mut w) = (height, width);
    let mut channels = 1;
    for block in &layout.blocks {
        // 2×2 max-pool: three comparisons per output
        h /= 2;
        w /= 2;
        flops += 3 * (channels * h * w) as u64;
        for cell in block {
            let hid = cell.config.hidden_channels;
            let px = (hid * h * w) as u64;
            flops += conv(&cell.conv, h, w);
            // four gate nonlinearities, c' = f·c + i·g, h' = o·tanh(c')
            flops += px * (4 + 3 + 2);
            if cell.peephole.is_some() {
                flops += 6 * px;
            }
            channels = hid;
        }
    }
    if let Some(Residual::Project(c)) = &layout.residual {
        flops += conv(c, h, w);
    }
    if layout.residual.is_some() {
        flops += (channels * h * w) as u64;
    }
    for stage in (1..=config.num_blocks).rev() {
        h *= 2;
        w *= 2;
        let c = &layout.decoder[stage - 1];
        flops += conv(c, h, w) + (c.cout * h * w) as u64;
    }
    flops += conv(&layout.head, h, w) + (h * w) as u64;
    flops as f64 / 1e9
}
