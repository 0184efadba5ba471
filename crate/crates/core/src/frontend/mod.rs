//! Prompt prenet plus Conformer blocks that fuse prompt timbre into the
//! content stream, with a linear mel head for the auxiliary loss.

pub mod attention;
pub mod conformer;
pub mod prenet;

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::layers::{Ctx, Linear};
use crate::nn::params::ParamBuilder;

pub use attention::MultiHeadAttention;
pub use conformer::{ConformerBlock, ConformerDims};
pub use prenet::PromptPrenet;

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub content_dim: usize,
    pub prompt_dim: usize,
    pub attn_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub ffn_dim: usize,
    pub conv_kernel: usize,
    pub prenet_dims: Vec<usize>,
    pub prenet_kernel: usize,
    pub rel_clip: usize,
    pub dropout: f32,
    pub n_mels: usize,
}

impl FrontendConfig {
    pub fn paper() -> Self {
        Self {
            content_dim: 512,
            prompt_dim: 1024,
            attn_dim: 184,
            n_heads: 2,
            n_blocks: 2,
            ffn_dim: 2048,
            conv_kernel: 31,
            prenet_dims: vec![128, 256, 512, 512],
            prenet_kernel: 5,
            rel_clip: 64,
            dropout: 0.1,
            n_mels: 80,
        }
    }

    pub fn desk() -> Self {
        Self {
            content_dim: 128,
            prompt_dim: 64,
            attn_dim: 64,
            n_heads: 2,
            n_blocks: 2,
            ffn_dim: 128,
            conv_kernel: 15,
            prenet_dims: vec![32, 64, 64, 64],
            prenet_kernel: 5,
            rel_clip: 32,
            dropout: 0.1,
            n_mels: 80,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.attn_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "attn_dim {} is not divisible by n_heads {}",
                self.attn_dim, self.n_heads
            )));
        }
        if self.conv_kernel % 2 == 0 || self.prenet_kernel % 2 == 0 {
            return Err(Error::Config("frontend kernels must be odd".into()));
        }
        if self.prenet_dims.is_empty() || self.n_blocks == 0 {
            return Err(Error::Config("frontend needs prenet blocks and Conformer blocks".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FrontendOutput {
    /// `(batch, frames, attn_dim)`.
    pub hidden: Tensor,
    /// `(batch, n_mels, frames)`.
    pub mel_pred: Tensor,
}

#[derive(Debug, Clone)]
pub struct Frontend {
    cfg: FrontendConfig,
    content_proj: Linear,
    prenet: PromptPrenet,
    blocks: Vec<ConformerBlock>,
    mel_head: Linear,
}

impl Frontend {
    pub fn new(pb: &mut ParamBuilder, cfg: &FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let prenet = PromptPrenet::new(
            &mut pb.pp("prenet"),
            cfg.prompt_dim,
            &cfg.prenet_dims,
            cfg.prenet_kernel,
            cfg.dropout,
        )?;
        let dims = ConformerDims {
            dim: cfg.attn_dim,
            prompt_dim: prenet.out_dim(),
            heads: cfg.n_heads,
            ffn_dim: cfg.ffn_dim,
            conv_kernel: cfg.conv_kernel,
            rel_clip: cfg.rel_clip,
            dropout: cfg.dropout,
        };
        let blocks = (0..cfg.n_blocks)
            .map(|i| ConformerBlock::new(&mut pb.pp(format!("block{i}")), dims))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            content_proj: Linear::new(&mut pb.pp("content_proj"), cfg.content_dim, cfg.attn_dim)?,
            prenet,
            blocks,
            mel_head: Linear::new(&mut pb.pp("mel_head"), cfg.attn_dim, cfg.n_mels)?,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[ConformerBlock] {
        &self.blocks
    }

    /// Prenet output `(batch, prompt_frames, prenet_out)`.
    pub fn encode_prompt(&self, prompt: &Tensor, prompt_mask: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (_, _, d) = prompt.dims3()?;
        if d != self.cfg.prompt_dim {
            return Err(Error::Dim(format!("prompt dim {d}, expected {}", self.cfg.prompt_dim)));
        }
        self.prenet.forward(prompt, prompt_mask, ctx)
    }

    /// Runs the Conformer stack against an already encoded prompt.
    pub fn forward_encoded(
        &self,
        content: &Tensor,
        content_mask: Option<&Tensor>,
        prompt_hidden: &Tensor,
        prompt_mask: Option<&Tensor>,
        ctx: &Ctx,
    ) -> Result<FrontendOutput> {
        let (_, t, d) = content.dims3()?;
        if d != self.cfg.content_dim {
            return Err(Error::Dim(format!("content dim {d}, expected {}", self.cfg.content_dim)));
        }
        if t == 0 {
            return Err(Error::EmptyInput("content frames"));
        }
        let mut x = ctx.dropout(&self.content_proj.forward(content)?, self.cfg.dropout)?;
        for blk in &self.blocks {
            x = blk.forward(&x, content_mask, prompt_hidden, prompt_mask, ctx)?;
        }
        let mel_pred = self.mel_head.forward(&x)?.transpose(1, 2)?.contiguous()?;
        Ok(FrontendOutput { hidden: x, mel_pred })
    }

    /// `content` is `(batch, frames, content_dim)`, `prompt` is
    /// `(batch, prompt_frames, prompt_dim)`; masks hold 1 for valid frames.
    pub fn forward(
        &self,
        content: &Tensor,
        content_mask: Option<&Tensor>,
        prompt: &Tensor,
        prompt_mask: &Tensor,
        ctx: &Ctx,
    ) -> Result<FrontendOutput> {
        let ph = self.encode_prompt(prompt, prompt_mask, ctx)?;
        self.forward_encoded(content, content_mask, &ph, Some(prompt_mask), ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::to_f32_vec;
    use crate::nn::params::ParamStore;
    use candle_core::{DType, Device};

    fn tiny() -> FrontendConfig {
        FrontendConfig {
            content_dim: 12,
            prompt_dim: 10,
            attn_dim: 8,
            ffn_dim: 16,
            conv_kernel: 5,
            prenet_dims: vec![6, 8, 8, 8],
            rel_clip: 4,
            n_mels: 5,
            ..FrontendConfig::desk()
        }
    }

    fn noise(shape: (usize, usize, usize), phase: f32) -> Tensor {
        let n = shape.0 * shape.1 * shape.2;
        Tensor::from_vec(
            (0..n).map(|i| ((i as f32) * 0.731 + phase).sin()).collect::<Vec<_>>(),
            shape,
            &Device::Cpu,
        )
        .unwrap()
    }

    #[test]
    fn shapes_follow_content_frames() {
        let mut store = ParamStore::new(0);
        let fe = Frontend::new(&mut store.root(), &tiny()).unwrap();
        let c = noise((2, 9, 12), 0.0);
        let p = noise((2, 4, 10), 1.0);
        let m = Tensor::ones((2, 4), DType::F32, &Device::Cpu).unwrap();
        let out = fe.forward(&c, None, &p, &m, &Ctx::eval()).unwrap();
        assert_eq!(out.hidden.dims(), &[2, 9, 8]);
        assert_eq!(out.mel_pred.dims(), &[2, 5, 9]);
    }

    #[test]
    fn padded_prompt_frames_do_not_matter() {
        let mut store = ParamStore::new(4);
        let fe = Frontend::new(&mut store.root(), &tiny()).unwrap();
        let c = noise((1, 6, 12), 0.0);
        let p = noise((1, 5, 10), 1.0);
        let ones = Tensor::ones((1, 5), DType::F32, &Device::Cpu).unwrap();
        let a = fe.forward(&c, None, &p, &ones, &Ctx::eval()).unwrap().hidden;
        let junk = noise((1, 3, 10), 7.0).affine(50.0, 0.0).unwrap();
        let padded = Tensor::cat(&[&p, &junk], 1).unwrap();
        let mask = Tensor::from_vec(vec![1f32, 1., 1., 1., 1., 0., 0., 0.], (1, 8), &Device::Cpu).unwrap();
        let b = fe.forward(&c, None, &padded, &mask, &Ctx::eval()).unwrap().hidden;
        for (x, y) in to_f32_vec(&a).unwrap().iter().zip(to_f32_vec(&b).unwrap()) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}
