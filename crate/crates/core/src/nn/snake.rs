//! Tensor Snake activations (plain and speaker-adaptive), anti-aliased by
//! 2x oversampling around the nonlinearity.

use std::sync::Arc;

use candle_core::Tensor;

use crate::activations::DIVISOR_FLOOR;
use crate::dsp::resample::HalfbandKernels;
use crate::error::{Error, Result};
use crate::nn::kernels::anti_aliased_snake;
use crate::nn::layers::Linear;
use crate::nn::params::{Init, ParamBuilder};

/// Per-channel `log alpha` / `log beta` with an optional conditioning map.
#[derive(Debug, Clone)]
pub struct SnakeActivation {
    log_alpha: Tensor,
    log_beta: Tensor,
    cond: Option<Linear>,
    kernels: Arc<HalfbandKernels>,
}

impl SnakeActivation {
    /// `cond_dim = None` gives plain Snake; `Some(d)` adds `tanh(W s + b)`
    /// with `W` and `b` zero-initialized, so training starts from plain Snake.
    pub fn new(
        pb: &mut ParamBuilder,
        channels: usize,
        cond_dim: Option<usize>,
        kernels: Arc<HalfbandKernels>,
    ) -> Result<Self> {
        let cond = match cond_dim {
            Some(d) => Some(Linear::with_init(&mut pb.pp("cond"), d, channels, Init::Zeros, Init::Zeros)?),
            None => None,
        };
        Ok(Self {
            log_alpha: pb.get("log_alpha", &[channels], Init::Zeros)?,
            log_beta: pb.get("log_beta", &[channels], Init::Zeros)?,
            cond,
            kernels,
        })
    }

    pub fn is_adaptive(&self) -> bool {
        self.cond.is_some()
    }

    /// Per-row frequency and inverse magnitude, both `(batch, channels)`.
    pub fn row_parameters(&self, batch: usize, speaker: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let c = self.log_alpha.dim(0)?;
        let alpha = self.log_alpha.exp()?.unsqueeze(0)?;
        let beta = self.log_beta.exp()?.unsqueeze(0)?;
        match (&self.cond, speaker) {
            (Some(lin), Some(s)) => {
                if s.dims2()?.0 != batch {
                    return Err(Error::Dim(format!(
                        "speaker batch {} does not match activation batch {batch}",
                        s.dim(0)?
                    )));
                }
                let t = lin.forward(s)?.tanh()?;
                let freq = t.broadcast_add(&alpha)?;
                let raw = t.affine(0.5, 0.0)?.broadcast_add(&beta)?;
                Ok((freq, clamp_divisor(&raw)?.recip()?))
            }
            (Some(_), None) => Err(Error::Missing("speaker vector for adaptive Snake".into())),
            (None, _) => {
                let freq = alpha.broadcast_as((batch, c))?.contiguous()?;
                let inv = beta.maximum(DIVISOR_FLOOR)?.recip()?.broadcast_as((batch, c))?.contiguous()?;
                Ok((freq, inv))
            }
        }
    }

    /// `x` is `(batch, channels, time)`, `speaker` is `(batch, cond_dim)`.
    pub fn forward(&self, x: &Tensor, speaker: Option<&Tensor>) -> Result<Tensor> {
        let (b, _, _) = x.dims3()?;
        let (freq, inv) = self.row_parameters(b, speaker)?;
        anti_aliased_snake(x, &freq, &inv, &self.kernels)
    }
}

/// Sign-preserving clamp of `|d|` to at least the divisor floor. The gradient
/// is zero wherever the clamp is active.
pub fn clamp_divisor(d: &Tensor) -> Result<Tensor> {
    let keep = d.abs()?.ge(DIVISOR_FLOOR)?;
    let neg = d.lt(0.0)?;
    let pos_floor = d.ones_like()?.affine(DIVISOR_FLOOR, 0.0)?;
    let floor = neg.where_cond(&pos_floor.neg()?, &pos_floor)?;
    Ok(keep.where_cond(d, &floor)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{adaptive_snake, AdaptiveSnakeParams};
    use crate::dsp::filter::design_lowpass;
    use crate::nn::layers::to_f32_vec;
    use crate::nn::params::ParamStore;
    use candle_core::Device;

    #[test]
    fn divisor_clamp_keeps_sign() {
        let d = Tensor::new(&[0.5f32, -1e-12, 1e-12, 0.0, -2.0], &Device::Cpu).unwrap();
        let c = to_f32_vec(&clamp_divisor(&d).unwrap()).unwrap();
        assert_eq!(c[0], 0.5);
        assert_eq!(c[1], -1e-9);
        assert_eq!(c[2], 1e-9);
        assert_eq!(c[3], 1e-9);
        assert_eq!(c[4], -2.0);
    }

    #[test]
    fn adaptive_parameters_match_scalar_definition() {
        // Without the band-limiting, the fused op reduces to the pointwise map;
        // compare the per-row parameters it receives with the scalar reference
        // by evaluating both on a constant signal, where resampling is exact.
        let f = design_lowpass(0.4, 0.2, 60.0).unwrap();
        let k = Arc::new(HalfbandKernels::new(&f));
        let mut store = ParamStore::new(0);
        let act = {
            let mut root = store.root();
            SnakeActivation::new(&mut root.pp("act"), 3, Some(2), k).unwrap()
        };
        let w = vec![0.3f32, -0.2, 0.5, 0.1, -0.4, 0.9];
        let b = vec![0.05f32, -0.1, 0.2];
        store.get("act.cond.weight").unwrap().set(&Tensor::from_vec(w.clone(), (3, 2), &Device::Cpu).unwrap()).unwrap();
        store.get("act.cond.bias").unwrap().set(&Tensor::from_vec(b.clone(), 3, &Device::Cpu).unwrap()).unwrap();
        store.get("act.log_alpha").unwrap().set(&Tensor::new(&[0.1f32, -0.3, 0.2], &Device::Cpu).unwrap()).unwrap();

        let s = [0.7f32, -1.2];
        let x = Tensor::ones((1, 3, 40), candle_core::DType::F32, &Device::Cpu).unwrap().affine(0.8, 0.0).unwrap();
        let y = act
            .forward(&x, Some(&Tensor::from_vec(s.to_vec(), (1, 2), &Device::Cpu).unwrap()))
            .unwrap();
        let y = to_f32_vec(&y).unwrap();

        let mut p = AdaptiveSnakeParams::zero_init(3, 2);
        p.weight = w.iter().map(|&v| v as f64).collect();
        p.bias = b.iter().map(|&v| v as f64).collect();
        p.base.alpha = vec![0.1, -0.3, 0.2];
        let want = adaptive_snake(&[0.8; 3], &[0.7, -1.2], &p).unwrap();
        for c in 0..3 {
            // Interior samples are free of boundary effects.
            assert!((y[c * 40 + 20] as f64 - want[c]).abs() < 2e-3, "{} vs {}", y[c * 40 + 20], want[c]);
        }
    }

    #[test]
    fn adaptive_requires_speaker() {
        let f = design_lowpass(0.4, 0.2, 60.0).unwrap();
        let k = Arc::new(HalfbandKernels::new(&f));
        let mut store = ParamStore::new(0);
        let mut root = store.root();
        let act = SnakeActivation::new(&mut root.pp("a"), 2, Some(4), k).unwrap();
        let x = Tensor::zeros((1, 2, 8), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(act.forward(&x, None), Err(Error::Missing(_))));
    }
}
