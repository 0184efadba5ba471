//! Differentiable log-mel spectrogram matching [`crate::dsp::MelAnalyzer`].

use std::f64::consts::PI;

use candle_core::{Device, Tensor};

use crate::dsp::mel::{analysis_window, mel_filterbank, num_frames, MelConfig};
use crate::dsp::resample::reflect_index;
use crate::error::{Error, Result};

/// Windowed DFT basis plus filterbank; input `(batch, samples)`, output
/// `(batch, n_mels, frames)`.
#[derive(Debug, Clone)]
pub struct MelTransform {
    cfg: MelConfig,
    /// `(n_fft, 2 * n_bins)`: cosine columns then sine columns.
    basis: Tensor,
    /// `(n_bins, n_mels)`.
    filterbank: Tensor,
}

impl MelTransform {
    pub fn new(cfg: &MelConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_fft;
        let bins = cfg.n_bins();
        let win = analysis_window(cfg);
        let mut basis = vec![0.0f32; n * 2 * bins];
        for (i, w) in win.iter().enumerate() {
            for k in 0..bins {
                let ang = 2.0 * PI * ((i * k) % n) as f64 / n as f64;
                basis[i * 2 * bins + k] = *w * ang.cos() as f32;
                basis[i * 2 * bins + bins + k] = -*w * ang.sin() as f32;
            }
        }
        let fb = mel_filterbank(cfg);
        let mut fb_t = vec![0.0f32; bins * cfg.n_mels];
        for m in 0..cfg.n_mels {
            for k in 0..bins {
                fb_t[k * cfg.n_mels + m] = fb[m * bins + k];
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            basis: Tensor::from_vec(basis, (n, 2 * bins), device)?,
            filterbank: Tensor::from_vec(fb_t, (bins, cfg.n_mels), device)?,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn forward(&self, wave: &Tensor) -> Result<Tensor> {
        let (b, n) = wave.dims2()?;
        if n == 0 {
            return Err(Error::EmptyInput("mel transform waveform"));
        }
        let cfg = &self.cfg;
        let frames = num_frames(n, cfg.hop);
        let pad = cfg.n_fft / 2;
        // Centered reflect padding and framing in one gather.
        let idx: Vec<u32> = (0..frames)
            .flat_map(|f| {
                (0..cfg.n_fft).map(move |i| reflect_index((f * cfg.hop + i) as isize - pad as isize, n) as u32)
            })
            .collect();
        let idx = Tensor::from_vec(idx, frames * cfg.n_fft, wave.device())?;
        let framed = wave.index_select(&idx, 1)?.reshape((b * frames, cfg.n_fft))?;
        let spec = framed.matmul(&self.basis)?;
        let bins = cfg.n_bins();
        let re = spec.narrow(1, 0, bins)?;
        let im = spec.narrow(1, bins, bins)?;
        let mag = (re.sqr()? + im.sqr()?)?.affine(1.0, 1e-10)?.sqrt()?;
        let mel = mag
            .matmul(&self.filterbank)?
            .maximum(cfg.log_floor)?
            .log()?;
        Ok(mel.reshape((b, frames, cfg.n_mels))?.transpose(1, 2)?.contiguous()?)
    }
}
