//! Basic differentiable layers built from candle primitives.

use std::cell::RefCell;

use candle_core::{DType, Device, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::resample::reflect_index;
use crate::error::{Error, Result};
use crate::nn::kernels::Unfold;
use crate::nn::params::{Init, ParamBuilder};

/// Forward-pass context: training flag plus the RNG behind dropout masks.
pub struct Ctx {
    train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Inverted dropout; the identity in evaluation mode.
    pub fn dropout(&self, x: &Tensor, p: f32) -> Result<Tensor> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let n = x.elem_count();
        let scale = 1.0 / (1.0 - p);
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f32> = (0..n)
            .map(|_| if rng.random::<f32>() < p { 0.0 } else { scale })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
        Ok(x.mul(&mask)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f32).sqrt();
        Ok(Self {
            weight: pb.get("weight", &[out_dim, in_dim], Init::Uniform(bound))?,
            bias: Some(pb.get("bias", &[out_dim], Init::Zeros)?),
        })
    }

    pub fn with_init(
        pb: &mut ParamBuilder,
        in_dim: usize,
        out_dim: usize,
        weight_init: Init,
        bias_init: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: pb.get("weight", &[out_dim, in_dim], weight_init)?,
            bias: Some(pb.get("bias", &[out_dim], bias_init)?),
        })
    }

    pub fn no_bias(pb: &mut ParamBuilder, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f32).sqrt();
        Ok(Self {
            weight: pb.get("weight", &[out_dim, in_dim], Init::Uniform(bound))?,
            bias: None,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    /// Applies `x W^T + b` over the last dimension.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// 1-D convolution as a gather of shifted frames followed by one batched matmul.
///
/// Both steps have cheap gradients (scatter-add and matmul), which makes
/// training far faster than differentiating a direct convolution.
/// `x` is `(batch, in, time)`, `w` is `(out, in / groups, kernel)`.
pub fn unfold_conv1d(
    x: &Tensor,
    w: &Tensor,
    padding: usize,
    stride: usize,
    dilation: usize,
    groups: usize,
) -> Result<Tensor> {
    let (b, c_in, t) = x.dims3()?;
    let (c_out, c_g, k) = w.dims3()?;
    if groups == 0 || c_in != c_g * groups || c_out % groups != 0 || stride == 0 || dilation == 0 {
        return Err(Error::Dim(format!(
            "conv1d: input {:?}, weight {:?}, groups {groups}",
            x.dims(),
            w.dims()
        )));
    }
    let span = dilation * (k - 1) + 1;
    let t_pad = t + 2 * padding;
    if t_pad < span {
        return Err(Error::Dim(format!("conv1d: {t_pad} padded samples for a span of {span}")));
    }
    let t_out = (t_pad - span) / stride + 1;
    let xp = if padding > 0 { x.pad_with_zeros(2, padding, padding)? } else { x.clone() };
    let unfold = Unfold { kernel: k, stride, dilation, out_len: t_out };
    let cols = if xp.dtype() == DType::F32 {
        xp.contiguous()?.apply_op1(unfold)?
    } else {
        let idx: Vec<u32> = (0..k)
            .flat_map(|j| (0..t_out).map(move |i| (i * stride + j * dilation) as u32))
            .collect();
        xp.index_select(&Tensor::from_vec(idx, k * t_out, x.device())?, 2)?
    };
    let cols = cols.reshape((b, groups, c_g * k, t_out))?;
    let wg = w.reshape((1, groups, c_out / groups, c_g * k))?;
    let y = wg.broadcast_matmul(&cols)?;
    Ok(y.reshape((b, c_out, t_out))?)
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
    dilation: usize,
    groups: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    /// `None` selects "same" padding for stride 1.
    pub padding: Option<usize>,
}

impl ConvSpec {
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            dilation,
            groups: 1,
            padding: None,
        }
    }
}

impl Conv1d {
    pub fn new(
        pb: &mut ParamBuilder,
        in_ch: usize,
        out_ch: usize,
        spec: ConvSpec,
        init: Init,
    ) -> Result<Self> {
        let padding = spec
            .padding
            .unwrap_or((spec.kernel - 1) * spec.dilation / 2);
        Ok(Self {
            weight: pb.get("weight", &[out_ch, in_ch / spec.groups, spec.kernel], init)?,
            bias: Some(pb.get("bias", &[out_ch], Init::Zeros)?),
            stride: spec.stride,
            padding,
            dilation: spec.dilation,
            groups: spec.groups,
        })
    }

    /// Default HiFi-GAN style initialization N(0, 0.01).
    pub fn hifi(pb: &mut ParamBuilder, in_ch: usize, out_ch: usize, spec: ConvSpec) -> Result<Self> {
        Self::new(pb, in_ch, out_ch, spec, Init::Normal(0.01))
    }

    /// Fan-in scaled uniform initialization.
    pub fn kaiming(pb: &mut ParamBuilder, in_ch: usize, out_ch: usize, spec: ConvSpec) -> Result<Self> {
        let fan_in = (in_ch / spec.groups * spec.kernel) as f32;
        Self::new(pb, in_ch, out_ch, spec, Init::Uniform(1.0 / fan_in.sqrt()))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = unfold_conv1d(x, &self.weight, self.padding, self.stride, self.dilation, self.groups)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1))?)?,
            None => y,
        })
    }
}

/// Transposed 1-D convolution with output length exactly `T * stride`.
///
/// Computed as zero-stuffing followed by an ordinary convolution with the
/// flipped kernel, which keeps the whole path differentiable.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    kernel: usize,
    padding: usize,
    flip_index: Tensor,
}

impl ConvTranspose1d {
    pub fn new(
        pb: &mut ParamBuilder,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        init: Init,
    ) -> Result<Self> {
        let device = pb.device();
        let flip: Vec<u32> = (0..kernel as u32).rev().collect();
        Ok(Self {
            weight: pb.get("weight", &[in_ch, out_ch, kernel], init)?,
            bias: pb.get("bias", &[out_ch], Init::Zeros)?,
            stride,
            kernel,
            padding: kernel.saturating_sub(stride) / 2,
            flip_index: Tensor::from_vec(flip, kernel, &device)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t) = x.dims3()?;
        let s = self.stride;
        let stuffed = if s > 1 {
            let zeros = Tensor::zeros((b, c, t, s - 1), x.dtype(), x.device())?;
            Tensor::cat(&[&x.unsqueeze(3)?, &zeros], 3)?
                .reshape((b, c, t * s))?
                .narrow(2, 0, (t - 1) * s + 1)?
        } else {
            x.clone()
        };
        let edge = self.kernel - 1 - self.padding;
        let padded = stuffed.pad_with_zeros(2, edge, edge)?;
        let w = self
            .weight
            .index_select(&self.flip_index, 2)?
            .transpose(0, 1)?
            .contiguous()?;
        let y = unfold_conv1d(&padded, &w, 0, 1, 1, 1)?.narrow(2, 0, t * s)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: pb.get("gamma", &[dim], Init::Const(1.0))?,
            beta: pb.get("beta", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    /// Normalizes over the last dimension.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(slope, 0.0)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.mul(&sigmoid(x)?)?)
}

/// Numerically stable softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Gated linear unit over dimension `dim` (first half * sigmoid(second half)).
pub fn glu(x: &Tensor, dim: usize) -> Result<Tensor> {
    let n = x.dim(dim)? / 2;
    let a = x.narrow(dim, 0, n)?;
    let g = x.narrow(dim, n, n)?;
    Ok(a.mul(&sigmoid(&g)?)?)
}

/// Reflect padding along the last dimension (differentiable via `index_select`).
pub fn reflect_pad_last(x: &Tensor, left: usize, right: usize) -> Result<Tensor> {
    let n = x.dim(D::Minus1)?;
    let idx: Vec<u32> = (0..left + n + right)
        .map(|i| reflect_index(i as isize - left as isize, n) as u32)
        .collect();
    let idx = Tensor::from_vec(idx, left + n + right, x.device())?;
    Ok(x.index_select(&idx, x.rank() - 1)?)
}

/// Euclidean norm of a set of gradients.
pub fn global_norm<'a>(grads: impl Iterator<Item = &'a Tensor>) -> Result<f64> {
    let mut acc = 0.0f64;
    for g in grads {
        acc += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    }
    Ok(acc.sqrt())
}

pub fn to_f32_vec(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?)
}

pub fn cpu() -> Device {
    Device::Cpu
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;

    fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
        to_f32_vec(&(a - b).unwrap().abs().unwrap()).unwrap().into_iter().fold(0.0, f32::max)
    }

    #[test]
    fn unfolded_conv_matches_direct_conv_forward() {
        let dev = Device::Cpu;
        for &(c_in, c_out, k, pad, stride, dil, groups) in
            &[(3, 4, 5, 2, 1, 1, 1), (4, 8, 3, 3, 1, 3, 1), (8, 8, 7, 3, 2, 1, 4), (2, 6, 4, 0, 3, 2, 2)]
        {
            let x = Tensor::randn(0f32, 1.0, (2, c_in, 23), &dev).unwrap();
            let w = Tensor::randn(0f32, 0.5, (c_out, c_in / groups, k), &dev).unwrap();
            let a = unfold_conv1d(&x, &w, pad, stride, dil, groups).unwrap();
            let b = x.conv1d(&w, pad, stride, dil, groups).unwrap();
            assert_eq!(a.dims(), b.dims());
            assert!(max_diff(&a, &b) < 1e-5);
        }
    }

    #[test]
    fn unfolded_conv_gradients_match_finite_differences() {
        let dev = Device::Cpu;
        for &(c_in, c_out, k, pad, stride, dil, groups) in &[(3, 4, 5, 2, 1, 1, 1), (4, 4, 3, 1, 2, 2, 2)] {
            let x = candle_core::Var::randn(0f32, 1.0, (2, c_in, 11), &dev).unwrap();
            let w = candle_core::Var::randn(0f32, 0.5, (c_out, c_in / groups, k), &dev).unwrap();
            let loss = |xv: &[f32], wv: &[f32]| -> f64 {
                let xt = Tensor::from_vec(xv.to_vec(), x.dims(), &dev).unwrap().to_dtype(DType::F64).unwrap();
                let wt = Tensor::from_vec(wv.to_vec(), w.dims(), &dev).unwrap().to_dtype(DType::F64).unwrap();
                let y = unfold_conv1d(&xt, &wt, pad, stride, dil, groups).unwrap();
                (y.sin().unwrap() * 3.0).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
            };
            // The f32 path uses the slice-copy gather, the f64 oracle path an index gather.
            let y = unfold_conv1d(&x, &w, pad, stride, dil, groups).unwrap();
            let g = (y.sin().unwrap() * 3.0).unwrap().sum_all().unwrap().backward().unwrap();
            let xv = to_f32_vec(&x).unwrap();
            let wv = to_f32_vec(&w).unwrap();
            let gx = to_f32_vec(g.get(x.as_tensor()).unwrap()).unwrap();
            let gw = to_f32_vec(g.get(w.as_tensor()).unwrap()).unwrap();
            let h = 1e-2f32;
            for i in 0..wv.len() {
                let (mut p, mut m) = (wv.clone(), wv.clone());
                p[i] += h;
                m[i] -= h;
                let fd = (loss(&xv, &p) - loss(&xv, &m)) / (2.0 * h as f64);
                assert!((fd - gw[i] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "w[{i}]: fd {fd} vs {}", gw[i]);
            }
            for i in 0..xv.len() {
                let (mut p, mut m) = (xv.clone(), xv.clone());
                p[i] += h;
                m[i] -= h;
                let fd = (loss(&p, &wv) - loss(&m, &wv)) / (2.0 * h as f64);
                assert!((fd - gx[i] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "x[{i}]: fd {fd} vs {}", gx[i]);
            }
        }
    }

    #[test]
    fn transposed_conv_matches_direct_scatter() {
        let mut store = ParamStore::new(3);
        let mut root = store.root();
        let up = ConvTranspose1d::new(&mut root.pp("up"), 2, 3, 10, 5, Init::Normal(0.1)).unwrap();
        let x = Tensor::from_vec(
            (0..2 * 4).map(|i| (i as f32 * 0.7).sin()).collect::<Vec<_>>(),
            (1, 2, 4),
            &Device::Cpu,
        )
        .unwrap();
        let y = up.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 3, 20]);

        // Direct definition: y[o, t*s + k - p] += x[i, t] * w[i, o, k].
        let w = up.weight.to_vec3::<f32>().unwrap();
        let xv = x.to_vec3::<f32>().unwrap();
        let mut want = vec![vec![0.0f32; 20]; 3];
        for i in 0..2 {
            for o in 0..3 {
                for t in 0..4 {
                    for k in 0..10 {
                        let pos = (t * 5 + k) as isize - 2;
                        if (0..20).contains(&pos) {
                            want[o][pos as usize] += xv[0][i][t] * w[i][o][k];
                        }
                    }
                }
            }
        }
        let got = y.to_vec3::<f32>().unwrap();
        for o in 0..3 {
            for j in 0..20 {
                assert!((got[0][o][j] - want[o][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn transposed_conv_supports_backward() {
        let mut store = ParamStore::new(1);
        let mut root = store.root();
        let up = ConvTranspose1d::new(&mut root.pp("up"), 2, 2, 4, 2, Init::Normal(0.1)).unwrap();
        let x = Tensor::ones((1, 2, 3), DType::F32, &Device::Cpu).unwrap();
        let loss = up.forward(&x).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        assert!(grads.get(&up.weight).is_some());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(vec![1.0f32, 2.0, 3.0, -1.0, 0.0, 50.0], (2, 3), &Device::Cpu)
            .unwrap();
        let s = softmax_last(&x).unwrap().sum(1).unwrap().to_vec1::<f32>().unwrap();
        for v in s {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_standardizes() {
        let mut store = ParamStore::new(0);
        let mut root = store.root();
        let ln = LayerNorm::new(&mut root.pp("ln"), 4).unwrap();
        let x = Tensor::from_vec(vec![1.0f32, 2.0, 3.0, 4.0], (1, 4), &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f32>().unwrap();
        let mean: f32 = y[0].iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let x = Tensor::ones((3, 5), DType::F32, &Device::Cpu).unwrap();
        let y = Ctx::eval().dropout(&x, 0.5).unwrap();
        assert_eq!(to_f32_vec(&y).unwrap(), vec![1.0; 15]);
        let a = to_f32_vec(&Ctx::train(4).dropout(&x, 0.5).unwrap()).unwrap();
        let b = to_f32_vec(&Ctx::train(4).dropout(&x, 0.5).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
