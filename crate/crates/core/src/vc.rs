//! Inference and objective evaluation: resynthesis, prompted conversion,
//! embedding cosine similarity and pitch correlation.

use std::path::Path;

use candle_core::Device;

use crate::checkpoint::Archive;
use crate::config::Config;
use crate::dsp::audio::Waveform;
use crate::dsp::mel::{mel_center_frequencies, mel_spectrogram};
use crate::dsp::pitch::{pitch_correlation, track_pitch};
use crate::dsp::resample::resample;
use crate::error::{Error, Result};
use crate::model::{Analysis, Vocoder};

/// A trained vocoder with the analysis it was trained against.
pub struct VoiceModel {
    pub cfg: Config,
    pub analysis: Analysis,
    pub vocoder: Vocoder,
}

impl VoiceModel {
    /// Loads the generator side of a training checkpoint.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let cfg = Config::parse(a.meta("config")?)?;
        let analysis = Analysis::from_archive(a, &cfg)?;
        let vocoder = Vocoder::new(&cfg, 0)?;
        vocoder.store.load(&a.with_prefix("g.", &Device::Cpu)?)?;
        Ok(Self { cfg, analysis, vocoder })
    }

    pub fn sample_rate(&self) -> u32 {
        self.cfg.mel.sample_rate
    }

    fn at_model_rate(&self, w: &Waveform) -> Result<Waveform> {
        if w.is_empty() {
            return Err(Error::EmptyInput("waveform"));
        }
        resample(w, self.sample_rate())
    }

    /// Re-renders `source`; the prompt defaults to the source itself.
    pub fn resynthesize(&self, source: &Waveform, prompt: Option<&Waveform>) -> Result<Waveform> {
        let source = self.at_model_rate(source)?;
        let prompt = match prompt {
            Some(p) => self.at_model_rate(p)?,
            None => source.clone(),
        };
        let tokens = self.analysis.tokens(&source)?;
        let frames = self.analysis.prompt(&prompt)?;
        let wave = self.vocoder.render(self.analysis.tokenizer.codebooks(), &tokens, &frames)?;
        if wave.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rendered waveform".into()));
        }
        Waveform::new(wave, self.sample_rate())
    }

    /// Content from `source`, voice from `reference`.
    pub fn convert(&self, source: &Waveform, reference: &Waveform) -> Result<Waveform> {
        let floor = self.cfg.vc.min_reference_s;
        if reference.duration_s() < floor {
            return Err(Error::TooShort(format!(
                "reference of {:.3} s is below the {floor} s floor",
                reference.duration_s()
            )));
        }
        self.resynthesize(source, Some(reference))
    }

    /// Pitch correlation between a source and its rendition, using the
    /// configured search range.
    pub fn pcorr(&self, source: &Waveform, converted: &Waveform) -> Result<f64> {
        eval_pcorr(source, converted, self.cfg.vc.f0_min, self.cfg.vc.f0_max)
    }
}

/// Cosine similarity of two speaker embeddings.
pub fn secs(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dim(format!("embeddings of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("embedding"));
    }
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::UndefinedMetric("zero-norm embedding".into()));
    }
    let c = ab / (aa.sqrt() * bb.sqrt());
    if !c.is_finite() {
        return Err(Error::NonFinite("embedding cosine".into()));
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// Pitch correlation over frames voiced in both signals.
pub fn eval_pcorr(source: &Waveform, converted: &Waveform, f0_min: f64, f0_max: f64) -> Result<f64> {
    let rate = source.sample_rate();
    let converted = resample(converted, rate)?;
    let a = track_pitch(source, f0_min, f0_max)?;
    let b = track_pitch(&converted, f0_min, f0_max)?;
    pitch_correlation(&a, &b)
}

/// Least-squares slope of the time-averaged log-mel spectrum against log
/// band frequency. More negative means a darker, steeper spectrum.
pub fn spectral_tilt(w: &Waveform, cfg: &Config) -> Result<f64> {
    let w = resample(w, cfg.mel.sample_rate)?;
    let mel = mel_spectrogram(&w, &cfg.mel)?;
    let spec = mel.mean_spectrum();
    let pts: Vec<(f64, f64)> = mel_center_frequencies(&cfg.mel)
        .into_iter()
        .zip(spec)
        .filter(|(f, _)| *f >= 50.0)
        .map(|(f, v)| (f.ln(), v))
        .collect();
    if pts.len() < 2 {
        return Err(Error::UndefinedMetric("fewer than two bands above 50 Hz".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_identities() {
        let v = [0.3f32, -1.2, 2.5, 0.01];
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        assert!((secs(&v, &v).unwrap() - 1.0).abs() <= 1e-9);
        assert!((secs(&v, &neg).unwrap() + 1.0).abs() <= 1e-9);
        assert!(secs(&[1.0, 0.0], &[0.0, 3.0]).unwrap().abs() <= 1e-9);
        assert!(matches!(secs(&v, &[0.0; 4]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(secs(&v, &[1.0; 3]), Err(Error::Dim(_))));
    }

    fn harmonic(tilt: f64, sr: u32) -> Waveform {
        let n = sr as usize;
        let s: Vec<f32> = (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                (1..90)
                    .map(|k| (k as f64).powf(-tilt) * (2.0 * std::f64::consts::PI * 120.0 * k as f64 * t).sin())
                    .sum::<f64>() as f32
                    * 0.2
            })
            .collect();
        Waveform::new(s, sr).unwrap()
    }

    #[test]
    fn steeper_rolloff_gives_lower_tilt() {
        let cfg = Config::desk();
        let bright = spectral_tilt(&harmonic(0.5, 24_000), &cfg).unwrap();
        let dark = spectral_tilt(&harmonic(2.0, 24_000), &cfg).unwrap();
        assert!(dark < bright, "dark {dark} bright {bright}");
    }

    #[test]
    fn pcorr_of_a_signal_with_itself_is_one() {
        let sr = 24_000;
        let s: Vec<f32> = (0..sr * 2)
            .map(|i| {
                let t = i as f64 / sr as f64;
                let w = 2.0 * std::f64::consts::PI * 1.5;
                // instantaneous frequency 150 + 40 sin(wt)
                let phase = 2.0 * std::f64::consts::PI * (150.0 * t - 40.0 / w * ((w * t).cos() - 1.0));
                (0.5 * phase.sin()) as f32
            })
            .collect();
        let w = Waveform::new(s, sr as u32).unwrap();
        assert!(eval_pcorr(&w, &w, 50.0, 600.0).unwrap() >= 0.999);
        let silent = Waveform::silence(sr, sr as u32);
        assert!(matches!(eval_pcorr(&silent, &silent, 50.0, 600.0), Err(Error::UndefinedMetric(_))));
    }
}
