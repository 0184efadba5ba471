//! Anti-aliased 2x resampling and arbitrary-rate conversion.
//!
//! Both 2x operations use "same" padding by reflection about the first and
//! last input samples. Upsampling is computed in polyphase form, which is
//! exactly zero-stuffing followed by convolution with `2 * taps`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::dsp::audio::Waveform;
use crate::dsp::filter::{bessel_i0, design_lowpass, kaiser_beta, FirFilter};
use crate::error::{Error, Result};

/// Filter used by the standalone 2x resamplers: -6 dB at half the new Nyquist,
/// full attenuation from 0.525 so tones up to 0.95 of the old Nyquist stay alias free.
pub fn default_resampler_filter() -> &'static FirFilter {
    static FILTER: OnceLock<FirFilter> = OnceLock::new();
    FILTER.get_or_init(|| design_lowpass(0.475, 0.05, 80.0).expect("static design is valid"))
}

/// Maps an out-of-range index onto `[0, n)` by mirroring about the end samples.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Copies `x` with `left`/`right` reflected samples on either side.
pub fn reflect_pad<T: Copy>(x: &[T], left: usize, right: usize) -> Vec<T> {
    let n = x.len();
    (0..left + n + right)
        .map(|i| x[reflect_index(i as isize - left as isize, n)])
        .collect()
}

/// Accumulates the gradient of a reflect-padded buffer back onto the source samples.
pub fn fold_reflect_grad(ext: &[f32], left: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n];
    for (i, &g) in ext.iter().enumerate() {
        out[reflect_index(i as isize - left as isize, n)] += g;
    }
    out
}

/// One phase of the polyphase upsampler: output sample `2n + p` is
/// `sum_i weights[i] * x[n + offset + i]`.
#[derive(Debug, Clone)]
pub struct UpPhase {
    pub offset: isize,
    pub weights: Vec<f32>,
}

/// Precomputed polyphase / decimation kernels for one low-pass filter.
#[derive(Debug, Clone)]
pub struct HalfbandKernels {
    pub phases: [UpPhase; 2],
    pub down: Vec<f32>,
    /// Reflect padding needed on the input of the upsampler (left, right).
    pub up_pad: (usize, usize),
    /// Reflect padding needed on the input of the decimator (each side).
    pub down_pad: usize,
}

impl HalfbandKernels {
    pub fn new(filter: &FirFilter) -> Self {
        let taps = filter.taps();
        let m = filter.center() as isize;
        let phase = |p: isize| {
            let mut pairs: Vec<(isize, f64)> = taps
                .iter()
                .enumerate()
                .filter(|(k, _)| (p + *k as isize - m).rem_euclid(2) == 0)
                .map(|(k, &h)| ((p + k as isize - m) / 2, 2.0 * h))
                .collect();
            pairs.sort_by_key(|(j, _)| *j);
            let offset = pairs.first().map(|(j, _)| *j).unwrap_or(0);
            let mut weights = vec![0.0f32; (pairs.last().unwrap().0 - offset + 1) as usize];
            for (j, w) in pairs {
                weights[(j - offset) as usize] = w as f32;
            }
            UpPhase { offset, weights }
        };
        let phases = [phase(0), phase(1)];
        let left = phases.iter().map(|p| (-p.offset).max(0)).max().unwrap() as usize;
        let right = phases
            .iter()
            .map(|p| (p.offset + p.weights.len() as isize - 1).max(0))
            .max()
            .unwrap() as usize;
        Self {
            phases,
            down: filter.taps_f32(),
            up_pad: (left, right),
            down_pad: filter.center(),
        }
    }

    /// Upsamples a reflect-padded input (`up_pad` applied) into `out` of length `2n`.
    pub fn upsample_padded(&self, ext: &[f32], n: usize, out: &mut [f32]) {
        let left = self.up_pad.0 as isize;
        for (p, phase) in self.phases.iter().enumerate() {
            let base = (left + phase.offset) as usize;
            let w = &phase.weights;
            for i in 0..n {
                let seg = &ext[base + i..base + i + w.len()];
                out[2 * i + p] = dot(w, seg);
            }
        }
    }

    /// Decimates a reflect-padded input (`down_pad` each side) of unpadded length `n`.
    pub fn downsample_padded(&self, ext: &[f32], n: usize, out: &mut [f32]) {
        let h = &self.down;
        for (j, o) in out.iter_mut().enumerate().take(n.div_ceil(2)) {
            *o = dot(h, &ext[2 * j..2 * j + h.len()]);
        }
    }

    /// Adjoint of [`Self::upsample_padded`]: scatters `grad_out` (length `2n`)
    /// into the gradient of the padded input.
    pub fn upsample_adjoint(&self, grad_out: &[f32], n: usize, grad_ext: &mut [f32]) {
        let left = self.up_pad.0 as isize;
        for (p, phase) in self.phases.iter().enumerate() {
            let base = (left + phase.offset) as usize;
            let w = &phase.weights;
            for i in 0..n {
                let g = grad_out[2 * i + p];
                if g == 0.0 {
                    continue;
                }
                let seg = &mut grad_ext[base + i..base + i + w.len()];
                for (s, &wk) in seg.iter_mut().zip(w) {
                    *s += g * wk;
                }
            }
        }
    }

    /// Adjoint of [`Self::downsample_padded`].
    pub fn downsample_adjoint(&self, grad_out: &[f32], grad_ext: &mut [f32]) {
        let h = &self.down;
        for (j, &g) in grad_out.iter().enumerate() {
            let seg = &mut grad_ext[2 * j..2 * j + h.len()];
            for (s, &hk) in seg.iter_mut().zip(h) {
                *s += g * hk;
            }
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent accumulators let the compiler vectorize the loop.
    let b = &b[..a.len()];
    let mut acc = [0.0f32; 8];
    let (ac, ar) = (a.chunks_exact(8), a.chunks_exact(8).remainder());
    let (bc, br) = (b.chunks_exact(8), b.chunks_exact(8).remainder());
    for (x, y) in ac.zip(bc) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for (x, y) in ar.iter().zip(br) {
        s += x * y;
    }
    s
}

/// Zero-stuffs by 2 and low-pass filters with `2 * taps`; output length `2N`.
pub fn upsample2x(x: &[f32], f: &FirFilter) -> Result<Vec<f32>> {
    if x.is_empty() {
        return Err(Error::EmptyInput("upsample2x input"));
    }
    let k = HalfbandKernels::new(f);
    let ext = reflect_pad(x, k.up_pad.0, k.up_pad.1);
    let mut out = vec![0.0; 2 * x.len()];
    k.upsample_padded(&ext, x.len(), &mut out);
    Ok(out)
}

/// Low-pass filters and keeps every second sample; output length `ceil(N/2)`.
pub fn downsample2x(x: &[f32], f: &FirFilter) -> Result<Vec<f32>> {
    if x.is_empty() {
        return Err(Error::EmptyInput("downsample2x input"));
    }
    let k = HalfbandKernels::new(f);
    let ext = reflect_pad(x, k.down_pad, k.down_pad);
    let mut out = vec![0.0; x.len().div_ceil(2)];
    k.downsample_padded(&ext, x.len(), &mut out);
    Ok(out)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Converts `w` to `target_rate`. Power-of-two ratios chain the 2x
/// resamplers; any other rational ratio uses Kaiser-windowed sinc interpolation.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    let src = w.sample_rate();
    if target_rate == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    if src == target_rate || w.is_empty() {
        return Waveform::new(w.samples().to_vec(), target_rate);
    }
    let filter = default_resampler_filter();
    let (hi, lo) = if src > target_rate {
        (src, target_rate)
    } else {
        (target_rate, src)
    };
    if hi % lo == 0 && (hi / lo).is_power_of_two() {
        let steps = (hi / lo).trailing_zeros();
        let mut x = w.samples().to_vec();
        for _ in 0..steps {
            x = if src > target_rate {
                downsample2x(&x, filter)?
            } else {
                upsample2x(&x, filter)?
            };
        }
        return Waveform::new(x, target_rate);
    }
    Waveform::new(resample_rational(w.samples(), src, target_rate), target_rate)
}

/// Band-limited interpolation for arbitrary rational rate changes.
fn resample_rational(x: &[f32], src: u32, dst: u32) -> Vec<f32> {
    let g = gcd(src as u64, dst as u64);
    let (up, down) = (dst as u64 / g, src as u64 / g);
    let out_len = ((x.len() as u64 * up).div_ceil(down)) as usize;
    // Cutoff relative to the source rate, with headroom for the transition band.
    let ratio = (dst as f64 / src as f64).min(1.0);
    let fc = 0.95 * ratio;
    let half_width = (8.0 / ratio).ceil() as isize;
    let beta = kaiser_beta(80.0);
    let i0b = bessel_i0(beta);
    let n = x.len() as isize;
    (0..out_len)
        .map(|j| {
            let t = j as f64 * down as f64 / up as f64;
            let center = t.floor() as isize;
            let mut acc = 0.0f64;
            for i in center - half_width + 1..=center + half_width {
                let d = t - i as f64;
                let r = d / half_width as f64;
                if r.abs() >= 1.0 {
                    continue;
                }
                let win = bessel_i0(beta * (1.0 - r * r).sqrt()) / i0b;
                let arg = PI * fc * d;
                let s = if arg == 0.0 { 1.0 } else { arg.sin() / arg };
                let xi = x[reflect_index(i, n as usize)] as f64;
                acc += xi * fc * s * win;
            }
            acc as f32
        })
        .collect()
}
