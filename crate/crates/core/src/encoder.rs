//! QuartzNet-style B×R encoder: a separable prologue convolution followed by
//! `B` residual blocks of `R` (conv → batch norm → ReLU → dropout) sub-blocks,
//! all at one channel width, stride 1 and dilation 1.
//!
//! Padded frames are zeroed before every convolution, so a sequence produces
//! the same valid-frame outputs alone as inside a padded batch (as long as
//! batch norm runs on fixed statistics).

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{LidError, Result};
use crate::layers::{check_dropout, dropout_var, BatchNormLayer, ConvLayer, ForwardCtx};
use crate::tensor::Real;

/// Kernel widths of the five QuartzNet 15×5 block groups, three blocks each.
pub const QUARTZNET_GROUP_KERNELS: [usize; 5] = [33, 39, 51, 63, 75];

/// Default schedule for `blocks` blocks: the QuartzNet group kernels, each
/// repeated for three consecutive blocks, the last one extended if needed.
pub fn default_kernel_schedule(blocks: usize) -> Vec<usize> {
    (0..blocks)
        .map(|b| QUARTZNET_GROUP_KERNELS[(b / 3).min(QUARTZNET_GROUP_KERNELS.len() - 1)])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub blocks: usize,
    pub subblocks: usize,
    pub channels: usize,
    /// One odd kernel size per block; the prologue uses the first entry.
    pub kernel_schedule: Vec<usize>,
    pub dropout: f64,
    pub separable: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 40,
            blocks: 15,
            subblocks: 5,
            channels: 512,
            kernel_schedule: default_kernel_schedule(15),
            dropout: 0.2,
            separable: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.subblocks == 0 || self.channels == 0 || self.input_dim == 0 {
            return Err(LidError::Config(
                "model.blocks, model.subblocks, model.channels and the feature dimension must be >= 1".into(),
            ));
        }
        if self.kernel_schedule.len() != self.blocks {
            return Err(LidError::Config(format!(
                "model.kernel_schedule has {} entries for {} blocks",
                self.kernel_schedule.len(),
                self.blocks
            )));
        }
        if let Some(k) = self.kernel_schedule.iter().find(|&&k| k % 2 == 0) {
            return Err(LidError::Config(format!("kernel size {k} must be odd")));
        }
        check_dropout(self.dropout)
    }
}

#[derive(Debug, Clone)]
pub struct SubBlock {
    pub conv: ConvLayer,
    pub bn: BatchNormLayer,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub subblocks: Vec<SubBlock>,
    pub residual_conv: ConvLayer,
    pub residual_bn: BatchNormLayer,
    pub dropout: f64,
}

impl Block {
    fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        kernel: usize,
        subblocks: usize,
        dropout: f64,
        separable: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let subblocks = (0..subblocks)
            .map(|r| {
                let sub = format!("{name}.sub{r}");
                let conv = if separable {
                    ConvLayer::separable(store, &format!("{sub}.conv"), channels, channels, kernel, rng)?
                } else {
                    ConvLayer::full(store, &format!("{sub}.conv"), channels, channels, kernel, rng)?
                };
                let bn = BatchNormLayer::new(store, &format!("{sub}.bn"), channels)?;
                Ok(SubBlock { conv, bn })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Block {
            subblocks,
            residual_conv: ConvLayer::pointwise(store, &format!("{name}.residual.conv"), channels, channels, rng)?,
            residual_bn: BatchNormLayer::new(store, &format!("{name}.residual.bn"), channels)?,
            dropout,
        })
    }

    /// `x: [N, T, C] -> [N, T, C]`. The residual branch joins after the last
    /// sub-block's batch norm, before its ReLU and dropout.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        mask: Option<&[T]>,
        ctx: &mut ForwardCtx<'_, T>,
    ) -> Result<Var> {
        let x = apply_mask(g, x, mask)?;
        let res = self.residual_conv.forward(g, x)?;
        let res = self.residual_bn.forward(g, res, ctx)?;
        let last = self.subblocks.len() - 1;
        let mut h = x;
        for (r, sub) in self.subblocks.iter().enumerate() {
            if r > 0 {
                h = apply_mask(g, h, mask)?;
            }
            h = sub.conv.forward(g, h)?;
            h = sub.bn.forward(g, h, ctx)?;
            if r == last {
                h = g.add(h, res)?;
            }
            h = g.relu(h);
            h = dropout_var(g, h, self.dropout, ctx)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub prologue_conv: ConvLayer,
    pub prologue_bn: BatchNormLayer,
    pub blocks: Vec<Block>,
}

impl Encoder {
    pub fn new(config: EncoderConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let k0 = config.kernel_schedule[0];
        let prologue_conv = if config.separable {
            ConvLayer::separable(store, "encoder.prologue.conv", config.input_dim, c, k0, rng)?
        } else {
            ConvLayer::full(store, "encoder.prologue.conv", config.input_dim, c, k0, rng)?
        };
        let prologue_bn = BatchNormLayer::new(store, "encoder.prologue.bn", c)?;
        let blocks = config
            .kernel_schedule
            .iter()
            .enumerate()
            .map(|(b, &k)| {
                Block::new(
                    store,
                    &format!("encoder.block{b}"),
                    c,
                    k,
                    config.subblocks,
                    config.dropout,
                    config.separable,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder {
            config,
            prologue_conv,
            prologue_bn,
            blocks,
        })
    }

    /// `features: [N, T, input_dim] -> [N, T, channels]`, with `mask` holding
    /// one 0/1 factor per frame (`None` when every frame is valid).
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        features: Var,
        mask: Option<&[T]>,
        ctx: &mut ForwardCtx<'_, T>,
    ) -> Result<Var> {
        let shape = g.shape(features);
        if shape.len() != 3 || shape[2] != self.config.input_dim {
            return Err(LidError::dims(
                "encoder input",
                shape,
                &[shape.first().copied().unwrap_or(0), 0, self.config.input_dim],
            ));
        }
        let x = apply_mask(g, features, mask)?;
        let x = self.prologue_conv.forward(g, x)?;
        let x = self.prologue_bn.forward(g, x, ctx)?;
        let mut x = g.relu(x);
        for block in &self.blocks {
            x = block.forward(g, x, mask, ctx)?;
        }
        Ok(x)
    }
}

fn apply_mask<T: Real>(g: &mut Graph<'_, T>, x: Var, mask: Option<&[T]>) -> Result<Var> {
    match mask {
        Some(m) => g.scale_rows(x, m),
        None => Ok(x),
    }
}

/// Per-frame 0/1 factors for a validity mask, or `None` if all frames are valid.
pub fn frame_mask<T: Real>(valid: &[bool]) -> Option<Vec<T>> {
    if valid.iter().all(|&v| v) {
        return None;
    }
    Some(valid.iter().map(|&v| if v { T::one() } else { T::zero() }).collect())
}
