//! Conformer block with an extra cross-attention over prompt frames.

use candle_core::Tensor;

use crate::error::Result;
use crate::frontend::attention::MultiHeadAttention;
use crate::nn::layers::{glu, silu, Ctx, LayerNorm, Linear};
use crate::nn::params::{Init, ParamBuilder};

#[derive(Debug, Clone)]
struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(pb: &mut ParamBuilder, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&mut pb.pp("norm"), dim)?,
            up: Linear::new(&mut pb.pp("up"), dim, hidden)?,
            down: Linear::new(&mut pb.pp("down"), hidden, dim)?,
        })
    }

    fn forward(&self, x: &Tensor, p: f32, ctx: &Ctx) -> Result<Tensor> {
        let h = silu(&self.up.forward(&self.norm.forward(x)?)?)?;
        let h = self.down.forward(&ctx.dropout(&h, p)?)?;
        ctx.dropout(&h, p)
    }
}

/// Pointwise GLU, depthwise conv, norm, SiLU, pointwise.
#[derive(Debug, Clone)]
struct ConvModule {
    norm: LayerNorm,
    pw_in: Linear,
    dw_weight: Tensor,
    dw_bias: Tensor,
    dw_norm: LayerNorm,
    pw_out: Linear,
    kernel: usize,
}

impl ConvModule {
    fn new(pb: &mut ParamBuilder, dim: usize, kernel: usize) -> Result<Self> {
        let bound = 1.0 / (kernel as f32).sqrt();
        Ok(Self {
            norm: LayerNorm::new(&mut pb.pp("norm"), dim)?,
            pw_in: Linear::new(&mut pb.pp("pw_in"), dim, 2 * dim)?,
            dw_weight: pb.get("dw_weight", &[dim, kernel], Init::Uniform(bound))?,
            dw_bias: pb.get("dw_bias", &[dim], Init::Zeros)?,
            dw_norm: LayerNorm::new(&mut pb.pp("dw_norm"), dim)?,
            pw_out: Linear::new(&mut pb.pp("pw_out"), dim, dim)?,
            kernel,
        })
    }

    /// Depthwise convolution as a sum of shifted, channel-scaled copies.
    fn depthwise(&self, x: &Tensor) -> Result<Tensor> {
        let (_, d, t) = x.dims3()?;
        let pad = self.kernel / 2;
        let xp = x.pad_with_zeros(2, pad, pad)?;
        let mut acc = self.dw_bias.reshape((1, d, 1))?.broadcast_as(x.shape())?.contiguous()?;
        for k in 0..self.kernel {
            let w = self.dw_weight.narrow(1, k, 1)?.reshape((1, d, 1))?;
            acc = (acc + xp.narrow(2, k, t)?.broadcast_mul(&w)?)?;
        }
        Ok(acc)
    }

    fn forward(&self, x: &Tensor, mask: Option<&Tensor>, p: f32, ctx: &Ctx) -> Result<Tensor> {
        let h = glu(&self.pw_in.forward(&self.norm.forward(x)?)?, 2)?;
        let h = match mask {
            Some(m) => h.broadcast_mul(&m.unsqueeze(2)?)?,
            None => h,
        };
        let h = self.depthwise(&h.transpose(1, 2)?.contiguous()?)?.transpose(1, 2)?;
        let h = silu(&self.dw_norm.forward(&h)?)?;
        ctx.dropout(&self.pw_out.forward(&h)?, p)
    }
}

#[derive(Debug, Clone)]
pub struct ConformerBlock {
    ff1: FeedForward,
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    conv: ConvModule,
    ff2: FeedForward,
    out_norm: LayerNorm,
    dropout: f32,
}

#[derive(Debug, Clone, Copy)]
pub struct ConformerDims {
    pub dim: usize,
    pub prompt_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub conv_kernel: usize,
    pub rel_clip: usize,
    pub dropout: f32,
}

impl ConformerBlock {
    pub fn new(pb: &mut ParamBuilder, d: ConformerDims) -> Result<Self> {
        Ok(Self {
            ff1: FeedForward::new(&mut pb.pp("ff1"), d.dim, d.ffn_dim)?,
            self_norm: LayerNorm::new(&mut pb.pp("self_norm"), d.dim)?,
            self_attn: MultiHeadAttention::new(&mut pb.pp("self_attn"), d.dim, d.dim, d.heads, Some(d.rel_clip), d.dropout)?,
            cross_norm: LayerNorm::new(&mut pb.pp("cross_norm"), d.dim)?,
            cross_attn: MultiHeadAttention::new(&mut pb.pp("cross_attn"), d.dim, d.prompt_dim, d.heads, None, d.dropout)?,
            conv: ConvModule::new(&mut pb.pp("conv"), d.dim, d.conv_kernel)?,
            ff2: FeedForward::new(&mut pb.pp("ff2"), d.dim, d.ffn_dim)?,
            out_norm: LayerNorm::new(&mut pb.pp("out_norm"), d.dim)?,
            dropout: d.dropout,
        })
    }

    pub fn cross_attention(&self) -> &MultiHeadAttention {
        &self.cross_attn
    }

    /// `x` is `(batch, frames, dim)`; `prompt` is the prenet output.
    pub fn forward(
        &self,
        x: &Tensor,
        content_mask: Option<&Tensor>,
        prompt: &Tensor,
        prompt_mask: Option<&Tensor>,
        ctx: &Ctx,
    ) -> Result<Tensor> {
        let p = self.dropout;
        let x = (x + self.ff1.forward(x, p, ctx)?.affine(0.5, 0.0)?)?;
        let h = self.self_norm.forward(&x)?;
        let x = (&x + ctx.dropout(&self.self_attn.forward(&h, &h, content_mask, ctx)?, p)?)?;
        let h = self.cross_norm.forward(&x)?;
        let x = (&x + ctx.dropout(&self.cross_attn.forward(&h, prompt, prompt_mask, ctx)?, p)?)?;
        let x = (&x + self.conv.forward(&x, content_mask, p, ctx)?)?;
        let x = (&x + self.ff2.forward(&x, p, ctx)?.affine(0.5, 0.0)?)?;
        self.out_norm.forward(&x)
    }
}
