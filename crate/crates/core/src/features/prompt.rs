//! Prompt feature frames, the stand-in extractor and mean pooling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activations::SpeakerVector;
use crate::dsp::audio::Waveform;
use crate::dsp::mel::{MelAnalyzer, MelConfig};
use crate::error::{Error, Result};

/// `frames x dim` matrix of per-frame timbre features.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptFrames {
    values: Vec<f32>,
    dim: usize,
}

impl PromptFrames {
    pub fn new(values: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::Dim(format!("{} values do not form {dim}-dim frames", values.len())));
        }
        if values.is_empty() {
            return Err(Error::EmptyInput("prompt frames"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prompt frames".into()));
        }
        Ok(Self { values, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_frames(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<PromptFrames> {
        PromptFrames::new(self.values[start * self.dim..end * self.dim].to_vec(), self.dim)
    }

    /// Reorders frames by `order` (a permutation of `0..n_frames`).
    pub fn permuted(&self, order: &[usize]) -> Result<PromptFrames> {
        let mut v = Vec::with_capacity(self.values.len());
        for &i in order {
            v.extend_from_slice(self.frame(i));
        }
        PromptFrames::new(v, self.dim)
    }
}

/// Arithmetic mean over frames.
///
/// Frames are summed in ascending order of their bit patterns, so the result
/// does not depend on frame order at all, not even in the last bit.
pub fn mean_pool(p: &PromptFrames) -> Result<SpeakerVector> {
    let n = p.n_frames();
    if n == 0 {
        return Err(Error::EmptyInput("prompt for mean pooling"));
    }
    let mut out = Vec::with_capacity(p.dim());
    let mut column = vec![0.0f32; n];
    for d in 0..p.dim() {
        for (f, c) in column.iter_mut().enumerate() {
            *c = p.values[f * p.dim + d];
        }
        column.sort_by(f32::total_cmp);
        let sum: f64 = column.iter().map(|&v| v as f64).sum();
        out.push((sum / n as f64) as f32);
    }
    SpeakerVector::new(out)
}

/// Stand-in for a pretrained timbre encoder: log-mel frames times a fixed
/// random matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptExtractor {
    mel: MelConfig,
    /// `n_mels x dim`, row-major.
    projection: Vec<f32>,
    dim: usize,
}

impl PromptExtractor {
    pub fn new(mel: &MelConfig, dim: usize, seed: u64) -> Result<Self> {
        mel.validate()?;
        if dim == 0 {
            return Err(Error::Config("prompt dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / mel.n_mels as f32;
        let projection = (0..mel.n_mels * dim)
            .map(|_| std * super::standard_normal(&mut rng))
            .collect();
        Ok(Self { mel: mel.clone(), projection, dim })
    }

    pub fn from_parts(mel: &MelConfig, projection: Vec<f32>, dim: usize) -> Result<Self> {
        if projection.len() != mel.n_mels * dim {
            return Err(Error::Dim(format!(
                "projection has {} values, expected {} x {dim}",
                projection.len(),
                mel.n_mels
            )));
        }
        Ok(Self { mel: mel.clone(), projection, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    pub fn extract(&self, w: &Waveform) -> Result<PromptFrames> {
        let mel = MelAnalyzer::new(&self.mel)?.compute(w.samples())?;
        self.project(mel.values(), mel.n_mels())
    }

    /// Projects precomputed log-mel rows.
    pub fn project(&self, mel: &[f32], n_mels: usize) -> Result<PromptFrames> {
        if n_mels != self.mel.n_mels {
            return Err(Error::Dim(format!("expected {} mel bins, got {n_mels}", self.mel.n_mels)));
        }
        let frames = mel.len() / n_mels;
        let mut out = vec![0.0f32; frames * self.dim];
        for f in 0..frames {
            let row = &mel[f * n_mels..(f + 1) * n_mels];
            let dst = &mut out[f * self.dim..(f + 1) * self.dim];
            for (m, &v) in row.iter().enumerate() {
                let w = &self.projection[m * self.dim..(m + 1) * self.dim];
                for (o, &p) in dst.iter_mut().zip(w) {
                    *o += v * p;
                }
            }
        }
        PromptFrames::new(out, self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_constant_frames_is_the_frame() {
        let v = [0.25f32, -1.5, 3.0];
        let p = PromptFrames::new(v.repeat(7), 3).unwrap();
        assert_eq!(mean_pool(&p).unwrap().as_slice(), &v);
        let single = PromptFrames::new(v.to_vec(), 3).unwrap();
        assert_eq!(mean_pool(&single).unwrap().as_slice(), &v);
    }

    #[test]
    fn mean_is_bitwise_permutation_invariant() {
        let vals: Vec<f32> = (0..50 * 4).map(|i| ((i as f32) * 1.37).sin() * 1e3).collect();
        let p = PromptFrames::new(vals, 4).unwrap();
        let order: Vec<usize> = (0..50).rev().collect();
        let a = mean_pool(&p).unwrap();
        let b = mean_pool(&p.permuted(&order).unwrap()).unwrap();
        assert_eq!(
            a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn extractor_frames_follow_mel_frames() {
        let ex = PromptExtractor::new(&MelConfig::default(), 16, 1).unwrap();
        let w = Waveform::new(
            (0..24_000).map(|i| ((i as f32) * 0.05).sin() * 0.3).collect(),
            24_000,
        )
        .unwrap();
        let p = ex.extract(&w).unwrap();
        assert_eq!(p.n_frames(), 100);
        assert_eq!(p.dim(), 16);
    }
}
