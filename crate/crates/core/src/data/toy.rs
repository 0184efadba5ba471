//! Synthetic multi-speaker corpus of harmonic complexes.
//!
//! Each speaker has its own base pitch and spectral tilt (harmonic k scaled
//! by `k^-tilt`). Utterances are strings of "syllables" whose formant pair
//! is drawn from a small vowel set, separated by short near-silent gaps.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::example::FRAME_HOP;
use super::manifest::{Manifest, ManifestEntry};
use crate::dsp::audio::{write_wav, WavEncoding, Waveform};
use crate::error::{Error, Result};

const VOWELS: [(f64, f64); 5] = [(730.0, 1090.0), (270.0, 2290.0), (530.0, 1840.0), (570.0, 840.0), (300.0, 870.0)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpeaker {
    pub index: usize,
    pub f0_hz: f64,
    pub tilt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub n_speakers: usize,
    pub train_per_speaker: usize,
    pub heldout_per_speaker: usize,
    pub min_s: f64,
    pub max_s: f64,
    pub sample_rate: u32,
    pub min_tilt: f64,
    pub max_tilt: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            train_per_speaker: 8,
            heldout_per_speaker: 1,
            min_s: 2.0,
            max_s: 4.0,
            sample_rate: 24_000,
            min_tilt: 0.4,
            max_tilt: 2.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub id: String,
    pub speaker: usize,
    pub wave: Waveform,
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub speakers: Vec<ToySpeaker>,
    pub train: Vec<ToyUtterance>,
    pub heldout: Vec<ToyUtterance>,
}

/// Speakers with evenly spread tilts and base pitches in 95..=210 Hz, interleaved
/// so tilt and pitch are not monotonically related.
pub fn toy_speakers(cfg: &ToyConfig) -> Vec<ToySpeaker> {
    let n = cfg.n_speakers;
    (0..n)
        .map(|i| {
            let u = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            let p = ((i * 5) % n.max(1)) as f64 / n.max(1) as f64;
            ToySpeaker {
                index: i,
                f0_hz: 95.0 + 115.0 * p,
                tilt: cfg.min_tilt + (cfg.max_tilt - cfg.min_tilt) * u,
            }
        })
        .collect()
}

fn formant_gain(f: f64, (f1, f2): (f64, f64)) -> f64 {
    let bump = |c: f64, bw: f64| (-((f - c) / bw).powi(2)).exp();
    0.25 + bump(f1, 120.0) + 0.7 * bump(f2, 200.0)
}

fn ramp(pos: usize, len: usize, edge: usize) -> f64 {
    let d = pos.min(len - 1 - pos);
    if d >= edge {
        1.0
    } else {
        0.5 - 0.5 * (PI * d as f64 / edge as f64).cos()
    }
}

/// One utterance of exactly `frames` frames (`frames * 240` samples at 24 kHz).
pub fn synthesize<R: Rng>(spk: &ToySpeaker, frames: usize, sample_rate: u32, rng: &mut R) -> Result<Waveform> {
    if frames == 0 {
        return Err(Error::EmptyInput("toy utterance frames"));
    }
    let sr = sample_rate as f64;
    let n = frames * FRAME_HOP * sample_rate as usize / 24_000;
    let nyq_limit = 0.45 * sr;
    let mut out = vec![0.0f64; n];
    let vib_rate = rng.random_range(0.5..1.5);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let edge = (0.01 * sr) as usize;
    let mut pos = (rng.random_range(0.02..0.08) * sr) as usize;
    let mut phase = 0.0f64;
    while pos < n {
        let len = ((rng.random_range(0.15..0.35) * sr) as usize).min(n - pos);
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        let accent = rng.random_range(0.92..1.1);
        if len > 2 * edge {
            for j in 0..len {
                let i = pos + j;
                let t = i as f64 / sr;
                let f0 = spk.f0_hz
                    * accent
                    * (1.0 + 0.06 * (2.0 * PI * vib_rate * t + vib_phase).sin())
                    * (1.0 - 0.08 * i as f64 / n as f64);
                phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
                let k_max = (nyq_limit / f0) as usize;
                let (s1, c1) = phase.sin_cos();
                let (mut prev, mut cur) = (0.0, s1);
                let mut acc = 0.0;
                for k in 1..=k_max {
                    let fk = k as f64 * f0;
                    acc += (k as f64).powf(-spk.tilt) * formant_gain(fk, vowel) * cur;
                    let next = 2.0 * c1 * cur - prev;
                    prev = cur;
                    cur = next;
                }
                out[i] = acc * ramp(j, len, edge);
            }
        }
        pos += len + (rng.random_range(0.03..0.1) * sr) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let gain = rng.random_range(0.4..0.6) / peak;
    let samples = out.iter().map(|&v| (v * gain + rng.random_range(-1e-3..1e-3)) as f32).collect();
    Waveform::new(samples, sample_rate)
}

pub fn toy_corpus(cfg: &ToyConfig) -> Result<ToyCorpus> {
    if cfg.n_speakers == 0 || !(cfg.min_s > 0.0 && cfg.min_s <= cfg.max_s) {
        return Err(Error::Config("toy corpus needs speakers and 0 < min_s <= max_s".into()));
    }
    let speakers = toy_speakers(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let min_f = (cfg.min_s * 100.0).ceil() as usize;
    let max_f = (cfg.max_s * 100.0).floor() as usize;
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for spk in &speakers {
        for j in 0..cfg.train_per_speaker + cfg.heldout_per_speaker {
            let frames = rng.random_range(min_f..=max_f);
            let wave = synthesize(spk, frames, cfg.sample_rate, &mut rng)?;
            let held = j >= cfg.train_per_speaker;
            let u = ToyUtterance {
                id: format!("{}/spk{}_{:02}", if held { "heldout" } else { "train" }, spk.index, j),
                speaker: spk.index,
                wave,
            };
            if held {
                heldout.push(u);
            } else {
                train.push(u);
            }
        }
    }
    Ok(ToyCorpus { speakers, train, heldout })
}

/// Writes `train/*.wav` and `heldout/*.wav` under `dir` and returns their manifests.
pub fn write_toy_corpus(corpus: &ToyCorpus, dir: impl AsRef<Path>) -> Result<(Manifest, Manifest)> {
    let dir = dir.as_ref();
    let write = |utts: &[ToyUtterance]| -> Result<Manifest> {
        let mut entries = Vec::with_capacity(utts.len());
        for u in utts {
            let path = dir.join(format!("{}.wav", u.id));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            write_wav(&path, &u.wave, WavEncoding::Float32)?;
            entries.push(ManifestEntry {
                id: u.id.clone(),
                audio_path: path,
                duration_s: u.wave.duration_s(),
                tokens_path: None,
                prompt_path: None,
            });
        }
        Ok(Manifest { entries })
    };
    Ok((write(&corpus.train)?, write(&corpus.heldout)?))
}
