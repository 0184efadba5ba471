//! Fused CPU kernel for the anti-aliased Snake nonlinearity.
//!
//! For every `(batch, channel)` row the kernel computes
//! `downsample2x(snake(upsample2x(x); freq, inv_mag))` where
//! `snake(u) = u + inv_mag * sin^2(freq * u)`. Frequency and inverse
//! magnitude are per-row scalars, so plain Snake and the speaker-adaptive
//! form share this kernel; only how `freq` and `inv_mag` are built differs.

use std::sync::Arc;

use candle_core::{CpuStorage, CustomOp3, Layout, Shape, Tensor};

use crate::dsp::resample::{fold_reflect_grad, reflect_pad, HalfbandKernels};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AntiAliasedSnake {
    kernels: Arc<HalfbandKernels>,
}

impl AntiAliasedSnake {
    pub fn new(kernels: Arc<HalfbandKernels>) -> Self {
        Self { kernels }
    }

    fn upsample_row(&self, x: &[f32], u: &mut [f32]) {
        let k = &self.kernels;
        let ext = reflect_pad(x, k.up_pad.0, k.up_pad.1);
        k.upsample_padded(&ext, x.len(), u);
    }

    fn forward_row(&self, x: &[f32], freq: f32, inv_mag: f32, out: &mut [f32]) {
        let n = x.len();
        let mut u = vec![0.0f32; 2 * n];
        self.upsample_row(x, &mut u);
        for v in u.iter_mut() {
            *v += inv_mag * sin_squared(freq * *v);
        }
        let pad = self.kernels.down_pad;
        let ext = reflect_pad(&u, pad, pad);
        self.kernels.downsample_padded(&ext, 2 * n, out);
    }

    /// Returns `(grad_x, grad_freq, grad_inv_mag)` for one row.
    fn backward_row(&self, x: &[f32], freq: f32, inv_mag: f32, grad: &[f32]) -> (Vec<f32>, f32, f32) {
        let n = x.len();
        let k = &self.kernels;
        let mut u = vec![0.0f32; 2 * n];
        self.upsample_row(x, &mut u);

        let mut gz_ext = vec![0.0f32; 2 * n + 2 * k.down_pad];
        k.downsample_adjoint(grad, &mut gz_ext);
        let mut gu = fold_reflect_grad(&gz_ext, k.down_pad, 2 * n);

        let (mut gf, mut gm) = (0.0f64, 0.0f64);
        for (g, &v) in gu.iter_mut().zip(&u) {
            let (s, c) = sin_cos(freq * v);
            let sin2 = 2.0 * s * c;
            gf += (*g * inv_mag * v * sin2) as f64;
            gm += (*g * s * s) as f64;
            *g *= 1.0 + inv_mag * freq * sin2;
        }

        let mut gx_ext = vec![0.0f32; n + k.up_pad.0 + k.up_pad.1];
        k.upsample_adjoint(&gu, n, &mut gx_ext);
        (fold_reflect_grad(&gx_ext, k.up_pad.0, n), gf as f32, gm as f32)
    }
}

/// Quadrant index and reduced argument in `[-pi/4, pi/4]`.
#[inline]
fn reduce(x: f32) -> (i32, f32) {
    let k = (x * std::f32::consts::FRAC_2_PI).round();
    (k as i32, (x as f64 - k as f64 * std::f64::consts::FRAC_PI_2) as f32)
}

#[inline]
fn sin_poly(r: f32) -> f32 {
    let r2 = r * r;
    r + r * r2 * (-1.0 / 6.0 + r2 * (1.0 / 120.0 + r2 * (-1.0 / 5040.0 + r2 * (1.0 / 362_880.0))))
}

#[inline]
fn cos_poly(r: f32) -> f32 {
    let r2 = r * r;
    1.0 + r2 * (-0.5 + r2 * (1.0 / 24.0 + r2 * (-1.0 / 720.0 + r2 * (1.0 / 40_320.0))))
}

/// `sin^2(x)`; the sign of the quadrant does not matter, only its parity.
#[inline]
pub(crate) fn sin_squared(x: f32) -> f32 {
    let (q, r) = reduce(x);
    let v = if q & 1 == 0 { sin_poly(r) } else { cos_poly(r) };
    v * v
}

#[inline]
pub(crate) fn sin_cos(x: f32) -> (f32, f32) {
    let (q, r) = reduce(x);
    let (s, c) = (sin_poly(r), cos_poly(r));
    match q & 3 {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

fn contiguous_f32<'a>(s: &'a CpuStorage, l: &Layout, what: &str) -> candle_core::Result<&'a [f32]> {
    let data = match s {
        CpuStorage::F32(v) => v.as_slice(),
        _ => candle_core::bail!("anti-aliased snake: {what} must be f32"),
    };
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("anti-aliased snake: {what} must be contiguous"),
    }
}

impl CustomOp3 for AntiAliasedSnake {
    fn name(&self) -> &'static str {
        "anti-aliased-snake"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, c, t) = l1.shape().dims3()?;
        let x = contiguous_f32(s1, l1, "input")?;
        let freq = contiguous_f32(s2, l2, "frequency")?;
        let inv_mag = contiguous_f32(s3, l3, "inverse magnitude")?;
        if freq.len() != b * c || inv_mag.len() != b * c {
            candle_core::bail!("anti-aliased snake: per-row parameters must have {} entries", b * c);
        }
        let mut out = vec![0.0f32; b * c * t];
        for (row, (xr, yr)) in x.chunks(t).zip(out.chunks_mut(t)).enumerate() {
            self.forward_row(xr, freq[row], inv_mag[row], yr);
        }
        Ok((CpuStorage::F32(out), l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        freq: &Tensor,
        inv_mag: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (b, c, t) = x.dims3()?;
        let xv = x.flatten_all()?.to_vec1::<f32>()?;
        let fv = freq.flatten_all()?.to_vec1::<f32>()?;
        let mv = inv_mag.flatten_all()?.to_vec1::<f32>()?;
        let gv = grad_res.flatten_all()?.to_vec1::<f32>()?;
        let mut gx = Vec::with_capacity(b * c * t);
        let mut gf = Vec::with_capacity(b * c);
        let mut gm = Vec::with_capacity(b * c);
        for row in 0..b * c {
            let r = row * t..(row + 1) * t;
            let (dx, df, dm) = self.backward_row(&xv[r.clone()], fv[row], mv[row], &gv[r]);
            gx.extend_from_slice(&dx);
            gf.push(df);
            gm.push(dm);
        }
        let dev = x.device();
        Ok((
            Some(Tensor::from_vec(gx, (b, c, t), dev)?),
            Some(Tensor::from_vec(gf, freq.shape(), dev)?),
            Some(Tensor::from_vec(gm, inv_mag.shape(), dev)?),
        ))
    }
}

/// Gathers strided, dilated windows: `(batch, channels, time)` to
/// `(batch, channels, kernel, out_len)` with
/// `out[.., .., j, i] = x[.., .., i * stride + j * dilation]`.
#[derive(Debug, Clone, Copy)]
pub struct Unfold {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub out_len: usize,
}

impl Unfold {
    fn check(&self, t: usize) -> candle_core::Result<()> {
        if self.out_len > 0 && (self.out_len - 1) * self.stride + (self.kernel - 1) * self.dilation >= t {
            candle_core::bail!("unfold: windows exceed {t} samples");
        }
        Ok(())
    }
}

impl candle_core::CustomOp1 for Unfold {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, c, t) = l.shape().dims3()?;
        self.check(t)?;
        let x = contiguous_f32(s, l, "unfold input")?;
        let (k, n) = (self.kernel, self.out_len);
        let mut out = vec![0.0f32; b * c * k * n];
        for (row, xr) in x.chunks(t).enumerate() {
            for j in 0..k {
                let dst = &mut out[(row * k + j) * n..(row * k + j + 1) * n];
                let off = j * self.dilation;
                if self.stride == 1 {
                    dst.copy_from_slice(&xr[off..off + n]);
                } else {
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d = xr[off + i * self.stride];
                    }
                }
            }
        }
        Ok((CpuStorage::F32(out), Shape::from((b, c, k, n))))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let (b, c, t) = x.dims3()?;
        let (k, n) = (self.kernel, self.out_len);
        let g = grad.contiguous()?.flatten_all()?.to_vec1::<f32>()?;
        let mut gx = vec![0.0f32; b * c * t];
        for (row, gr) in gx.chunks_mut(t).enumerate() {
            for j in 0..k {
                let src = &g[(row * k + j) * n..(row * k + j + 1) * n];
                let off = j * self.dilation;
                if self.stride == 1 {
                    for (d, s) in gr[off..off + n].iter_mut().zip(src) {
                        *d += s;
                    }
                } else {
                    for (i, s) in src.iter().enumerate() {
                        gr[off + i * self.stride] += s;
                    }
                }
            }
        }
        Ok(Some(Tensor::from_vec(gx, (b, c, t), x.device())?))
    }
}

/// Applies the fused kernel. `x` is `(batch, channels, time)`; `freq` and
/// `inv_mag` are `(batch, channels)`.
pub fn anti_aliased_snake(
    x: &Tensor,
    freq: &Tensor,
    inv_mag: &Tensor,
    kernels: &Arc<HalfbandKernels>,
) -> Result<Tensor> {
    let (b, c, _) = x.dims3()?;
    if freq.dims() != [b, c] || inv_mag.dims() != [b, c] {
        return Err(Error::Dim(format!(
            "snake parameters {:?}/{:?} do not match input {:?}",
            freq.dims(),
            inv_mag.dims(),
            x.dims()
        )));
    }
    Ok(x.contiguous()?.apply_op3(
        &freq.contiguous()?,
        &inv_mag.contiguous()?,
        AntiAliasedSnake::new(kernels.clone()),
    )?)
}
