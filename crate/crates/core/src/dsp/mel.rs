//! Log-mel analysis.
//!
//! Frames are centered: the signal is reflect-padded by `n_fft / 2` on both
//! sides and frame `f` starts at `f * hop` in the padded signal. The frame
//! count is `ceil(num_samples / hop)`, so one frame corresponds to exactly
//! `hop` samples of audio.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dsp::audio::Waveform;
use crate::dsp::resample::reflect_pad;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub win: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            n_fft: 1024,
            hop: 240,
            win: 1024,
            n_mels: 80,
            fmin: 0.0,
            fmax: 12_000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop <= self.win && self.win <= self.n_fft) {
            return Err(Error::Config(format!(
                "mel requires hop <= win <= n_fft, got {} / {} / {}",
                self.hop, self.win, self.n_fft
            )));
        }
        if self.hop == 0 || self.n_mels == 0 {
            return Err(Error::Config("mel hop and n_mels must be positive".into()));
        }
        if self.fmax > self.sample_rate as f64 / 2.0 || self.fmin >= self.fmax {
            return Err(Error::Config(format!(
                "mel band [{}, {}] invalid for rate {}",
                self.fmin, self.fmax, self.sample_rate
            )));
        }
        if self.hop as u64 * 100 != self.sample_rate as u64 {
            return Err(Error::Config(format!(
                "hop {} is not a 10 ms frame at {} Hz",
                self.hop, self.sample_rate
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log floor must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn log_floor_value(&self) -> f32 {
        self.log_floor.ln() as f32
    }
}

/// Number of analysis frames for `n_samples` under the centered convention.
pub fn num_frames(n_samples: usize, hop: usize) -> usize {
    n_samples.div_ceil(hop)
}

/// Row-major `frames x n_mels` matrix of natural-log mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrames {
    values: Vec<f32>,
    n_frames: usize,
    n_mels: usize,
}

impl MelFrames {
    pub fn new(values: Vec<f32>, n_frames: usize, n_mels: usize) -> Result<Self> {
        if values.len() != n_frames * n_mels {
            return Err(Error::Dim(format!(
                "{} values for {n_frames} x {n_mels} mel frames",
                values.len()
            )));
        }
        Ok(Self {
            values,
            n_frames,
            n_mels,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_mels..(i + 1) * self.n_mels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks(self.n_mels)
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> MelFrames {
        MelFrames {
            values: self.values[start * self.n_mels..end * self.n_mels].to_vec(),
            n_frames: end - start,
            n_mels: self.n_mels,
        }
    }

    /// Time-averaged log-mel spectrum.
    pub fn mean_spectrum(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.n_mels];
        for row in self.rows() {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as f64;
            }
        }
        let n = self.n_frames.max(1) as f64;
        acc.iter().map(|a| a / n).collect()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    // Slaney scale: linear below 1 kHz, logarithmic above.
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        f_sp * mel
    }
}

/// Edge frequencies of the mel triangles: `n_mels + 2` points.
fn mel_edges(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Center frequency (Hz) of each mel filter.
pub fn mel_center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    mel_edges(cfg)[1..=cfg.n_mels].to_vec()
}

/// Area-normalized triangular filterbank, row-major `n_mels x n_bins`.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<f32> {
    let edges = mel_edges(cfg);
    let n_bins = cfg.n_bins();
    let mut fb = vec![0.0f32; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let enorm = 2.0 / (hi - lo);
        for k in 0..n_bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            let w = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0);
            fb[m * n_bins + k] = (w * enorm) as f32;
        }
    }
    fb
}

/// Periodic Hann window of length `win`, zero-padded and centered within `n_fft`.
pub fn analysis_window(cfg: &MelConfig) -> Vec<f32> {
    let mut w = vec![0.0f32; cfg.n_fft];
    let offset = (cfg.n_fft - cfg.win) / 2;
    for i in 0..cfg.win {
        w[offset + i] = (0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.win as f64).cos()) as f32;
    }
    w
}

/// Reusable analyzer holding the window, filterbank and FFT plan.
pub struct MelAnalyzer {
    cfg: MelConfig,
    window: Vec<f32>,
    filterbank: Vec<f32>,
    fft: Arc<dyn Fft<f32>>,
}

impl std::fmt::Debug for MelAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelAnalyzer").field("cfg", &self.cfg).finish()
    }
}

impl MelAnalyzer {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg: cfg.clone(),
            window: analysis_window(cfg),
            filterbank: mel_filterbank(cfg),
            fft: planner.plan_fft_forward(cfg.n_fft),
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn compute(&self, samples: &[f32]) -> Result<MelFrames> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("mel_spectrogram waveform"));
        }
        let cfg = &self.cfg;
        let pad = cfg.n_fft / 2;
        let padded = reflect_pad(samples, pad, pad);
        let n_frames = num_frames(samples.len(), cfg.hop);
        let n_bins = cfg.n_bins();
        let floor = cfg.log_floor as f32;
        let mut values = Vec::with_capacity(n_frames * cfg.n_mels);
        let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.n_fft];
        let mut mag = vec![0.0f32; n_bins];
        for f in 0..n_frames {
            let start = f * cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, m) in mag.iter_mut().enumerate() {
                *m = buf[k].norm();
            }
            for row in self.filterbank.chunks(n_bins) {
                let e: f32 = row.iter().zip(&mag).map(|(w, m)| w * m).sum();
                values.push(e.max(floor).ln());
            }
        }
        MelFrames::new(values, n_frames, cfg.n_mels)
    }
}

/// Centered STFT magnitude -> mel filterbank -> natural log with floor clipping.
pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig) -> Result<MelFrames> {
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::Config(format!(
            "waveform rate {} does not match mel config rate {}",
            w.sample_rate(),
            cfg.sample_rate
        )));
    }
    MelAnalyzer::new(cfg)?.compute(w.samples())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / 24_000.0).sin()) as f32)
                .collect(),
            24_000,
        )
        .unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        MelConfig::default().validate().unwrap();
        let bad = MelConfig {
            hop: 256,
            ..MelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn silence_hits_the_floor_everywhere() {
        let m = mel_spectrogram(&Waveform::silence(4800, 24_000), &MelConfig::default()).unwrap();
        let floor = (1e-5f64).ln() as f32;
        assert!(m.values().iter().all(|&v| v == floor));
    }

    #[test]
    fn one_second_gives_one_hundred_frames() {
        let m = mel_spectrogram(&tone(440.0, 24_000), &MelConfig::default()).unwrap();
        assert_eq!(m.n_frames(), 100);
        assert_eq!(m.n_mels(), 80);
    }

    #[test]
    fn short_inputs_still_frame_correctly() {
        let cfg = MelConfig::default();
        for n in [1usize, 3, 239, 240, 241, 600] {
            let m = mel_spectrogram(&tone(300.0, n), &cfg).unwrap();
            assert_eq!(m.n_frames(), n.div_ceil(240));
        }
    }

    #[test]
    fn tone_peaks_in_nearest_mel_band() {
        let cfg = MelConfig::default();
        let centers = mel_center_frequencies(&cfg);
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let m = mel_spectrogram(&tone(1000.0, 24_000), &cfg).unwrap();
        let spec = m.mean_spectrum();
        let argmax = spec
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn filterbank_rows_have_unit_area_in_hz() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank(&cfg);
        let df = cfg.sample_rate as f64 / cfg.n_fft as f64;
        for row in fb.chunks(cfg.n_bins()).skip(10) {
            let area: f64 = row.iter().map(|&w| w as f64 * df).sum();
            assert!((area - 1.0).abs() < 0.05, "area {area}");
        }
    }

    #[test]
    fn doubling_amplitude_never_lowers_unfloored_cells() {
        let cfg = MelConfig::default();
        let w = tone(333.0, 4800);
        let a = mel_spectrogram(&w, &cfg).unwrap();
        let b = mel_spectrogram(&w.scaled(2.0), &cfg).unwrap();
        let floor = cfg.log_floor_value();
        for (x, y) in a.values().iter().zip(b.values()) {
            if *x > floor {
                assert!(y >= x);
            }
        }
    }
}
