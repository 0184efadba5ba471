//! Multi-head scaled dot-product attention.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::layers::{softmax_last, Ctx, Linear};
use crate::nn::params::{Init, ParamBuilder};

/// Learned per-head bias indexed by clipped relative distance `j - i`.
#[derive(Debug, Clone)]
struct RelativeBias {
    table: Tensor,
    clip: usize,
}

impl RelativeBias {
    fn bias(&self, tq: usize, tk: usize) -> Result<Tensor> {
        let c = self.clip as isize;
        let idx: Vec<u32> = (0..tq as isize)
            .flat_map(|i| (0..tk as isize).map(move |j| ((j - i).clamp(-c, c) + c) as u32))
            .collect();
        let idx = Tensor::from_vec(idx, tq * tk, self.table.device())?;
        let heads = self.table.dim(0)?;
        Ok(self
            .table
            .index_select(&idx, 1)?
            .reshape((1, heads, tq, tk))?)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    dim: usize,
    rel: Option<RelativeBias>,
    dropout: f32,
}

impl MultiHeadAttention {
    /// `rel_clip = Some(r)` adds a relative-position bias (self-attention);
    /// `None` leaves the attention free of any positional information.
    pub fn new(
        pb: &mut ParamBuilder,
        dim: usize,
        kv_dim: usize,
        heads: usize,
        rel_clip: Option<usize>,
        dropout: f32,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("attention dim {dim} is not divisible by {heads} heads")));
        }
        let rel = match rel_clip {
            Some(clip) => Some(RelativeBias {
                table: pb.get("rel_bias", &[heads, 2 * clip + 1], Init::Zeros)?,
                clip,
            }),
            None => None,
        };
        Ok(Self {
            q: Linear::new(&mut pb.pp("q"), dim, dim)?,
            k: Linear::new(&mut pb.pp("k"), kv_dim, dim)?,
            v: Linear::new(&mut pb.pp("v"), kv_dim, dim)?,
            out: Linear::new(&mut pb.pp("out"), dim, dim)?,
            heads,
            dim,
            rel,
            dropout,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        Ok(x
            .reshape((b, t, self.heads, self.dim / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// Attention weights `(batch, heads, queries, keys)`.
    ///
    /// `key_mask` is `(batch, keys)` with 1 for valid and 0 for padded frames.
    pub fn weights(&self, query: &Tensor, kv: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, tq, _) = query.dims3()?;
        let tk = kv.dim(1)?;
        if tk == 0 {
            return Err(Error::EmptyInput("attention keys"));
        }
        let q = self.split_heads(&self.q.forward(query)?)?;
        let k = self.split_heads(&self.k.forward(kv)?)?;
        let scale = 1.0 / ((self.dim / self.heads) as f64).sqrt();
        let mut scores = q.matmul(&k.t()?)?.affine(scale, 0.0)?;
        if let Some(rel) = &self.rel {
            scores = scores.broadcast_add(&rel.bias(tq, tk)?)?;
        }
        if let Some(m) = key_mask {
            let penalty = m.affine(1e9, -1e9)?.reshape((b, 1, 1, tk))?;
            scores = scores.broadcast_add(&penalty)?;
        }
        softmax_last(&scores)
    }

    pub fn forward(&self, query: &Tensor, kv: &Tensor, key_mask: Option<&Tensor>, ctx: &Ctx) -> Result<Tensor> {
        let (b, tq, _) = query.dims3()?;
        let w = ctx.dropout(&self.weights(query, kv, key_mask)?, self.dropout)?;
        let v = self.split_heads(&self.v.forward(kv)?)?;
        let y = w.matmul(&v)?.transpose(1, 2)?.reshape((b, tq, self.dim))?;
        self.out.forward(&y)
    }

    /// Value projections `(batch, keys, dim)` before head mixing, for tests.
    pub fn values(&self, kv: &Tensor) -> Result<Tensor> {
        self.v.forward(kv)
    }

    pub fn output_projection(&self, x: &Tensor) -> Result<Tensor> {
        self.out.forward(x)
    }
}

/// Per-query sums of attention weights (should be one).
pub fn weight_row_sums(w: &Tensor) -> Result<Tensor> {
    Ok(w.sum(D::Minus1)?)
}
