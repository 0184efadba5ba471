//! Convolutional prompt prenet with scaled residual connections.

use std::f64::consts::FRAC_1_SQRT_2;

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::layers::{Conv1d, ConvSpec, Ctx, LayerNorm};
use crate::nn::params::ParamBuilder;

#[derive(Debug, Clone)]
struct PrenetBlock {
    conv: Conv1d,
    norm: LayerNorm,
    skip: Option<Conv1d>,
}

impl PrenetBlock {
    /// `x` and the result are `(batch, channels, frames)`.
    fn forward(&self, x: &Tensor, mask: &Tensor, dropout: f32, ctx: &Ctx) -> Result<Tensor> {
        let h = self.conv.forward(x)?.transpose(1, 2)?;
        let h = self.norm.forward(&h)?.relu()?.transpose(1, 2)?;
        let h = ctx.dropout(&h, dropout)?;
        let skip = match &self.skip {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        Ok((skip + h)?.affine(FRAC_1_SQRT_2, 0.0)?.broadcast_mul(mask)?)
    }
}

#[derive(Debug, Clone)]
pub struct PromptPrenet {
    blocks: Vec<PrenetBlock>,
    dropout: f32,
    out_dim: usize,
}

impl PromptPrenet {
    pub fn new(pb: &mut ParamBuilder, in_dim: usize, dims: &[usize], kernel: usize, dropout: f32) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config("prompt prenet needs at least one block".into()));
        }
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("prenet kernel {kernel} must be odd")));
        }
        let mut blocks = Vec::with_capacity(dims.len());
        let mut c_in = in_dim;
        for (i, &c_out) in dims.iter().enumerate() {
            let mut b = pb.pp(format!("block{i}"));
            blocks.push(PrenetBlock {
                conv: Conv1d::kaiming(&mut b.pp("conv"), c_in, c_out, ConvSpec::same(kernel, 1))?,
                norm: LayerNorm::new(&mut b.pp("norm"), c_out)?,
                skip: if c_in != c_out {
                    Some(Conv1d::kaiming(&mut b.pp("skip"), c_in, c_out, ConvSpec::same(1, 1))?)
                } else {
                    None
                },
            });
            c_in = c_out;
        }
        Ok(Self { blocks, dropout, out_dim: c_in })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `prompt` is `(batch, frames, in_dim)`, `mask` is `(batch, frames)`;
    /// returns `(batch, frames, out_dim)` with padded frames zeroed.
    pub fn forward(&self, prompt: &Tensor, mask: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (b, t, _) = prompt.dims3()?;
        if t == 0 {
            return Err(Error::EmptyInput("prompt frames"));
        }
        let m = mask.reshape((b, 1, t))?;
        let mut x = prompt.transpose(1, 2)?.contiguous()?.broadcast_mul(&m)?;
        for blk in &self.blocks {
            x = blk.forward(&x, &m, self.dropout, ctx)?;
        }
        Ok(x.transpose(1, 2)?.contiguous()?)
    }
}
