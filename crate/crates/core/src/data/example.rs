//! Training examples: a prompt region for timbre, the rest for content and target.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::sampler::{sample_prompt_segment_with, PromptSegment, SamplerConfig};
use crate::dsp::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::{PromptFrames, TokenSeq};

/// Samples per 10 ms frame at 24 kHz.
pub const FRAME_HOP: usize = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// Reconstruct only frames outside the prompt region.
    #[default]
    Complement,
    /// Reconstruct the whole utterance.
    Full,
}

impl FromStr for TargetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complement" => Ok(Self::Complement),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown target mode {s:?} (complement | full)"))),
        }
    }
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Complement => "complement",
            Self::Full => "full",
        })
    }
}

/// An utterance with frame-aligned content tokens and prompt features.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub wave: Waveform,
    pub tokens: Option<TokenSeq>,
    pub prompt: Option<PromptFrames>,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.tokens.as_ref().map_or(0, TokenSeq::n_frames)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    pub content: TokenSeq,
    pub prompt: PromptFrames,
    /// Target samples, `content.n_frames() * FRAME_HOP` long.
    pub target: Vec<f32>,
    /// Frames `[start, end)` of the utterance covered by `content` and `target`.
    pub target_frames: (usize, usize),
    pub segment: PromptSegment,
}

impl TrainingExample {
    pub fn duration_s(&self) -> f64 {
        self.target.len() as f64 / (FRAME_HOP as f64 * 100.0)
    }
}

/// Target frames for a prompt segment over `d` frames. In complement mode this
/// is the longer of the two pieces left around the prompt (earlier piece on ties).
pub fn target_range(d: usize, seg: &PromptSegment, mode: TargetMode) -> (usize, usize) {
    match mode {
        TargetMode::Full => (0, d),
        TargetMode::Complement => {
            let before = seg.start;
            let after = d - seg.end();
            if before >= after {
                (0, seg.start)
            } else {
                (seg.end(), d)
            }
        }
    }
}

fn frame_samples(wave: &Waveform, start: usize, end: usize) -> Vec<f32> {
    let s = wave.samples();
    let mut out = vec![0.0f32; (end - start) * FRAME_HOP];
    let a = (start * FRAME_HOP).min(s.len());
    let b = (end * FRAME_HOP).min(s.len());
    out[..b - a].copy_from_slice(&s[a..b]);
    out
}

pub fn make_training_example<R: Rng>(
    utt: &Utterance,
    sampler: &SamplerConfig,
    mode: TargetMode,
    rng: &mut R,
) -> Result<TrainingExample> {
    let seg = sample_prompt_segment_with(utt.n_frames(), sampler, rng)?;
    example_for_segment(utt, seg, mode)
}

/// Splits `utt` around a fixed prompt segment.
pub fn example_for_segment(utt: &Utterance, seg: PromptSegment, mode: TargetMode) -> Result<TrainingExample> {
    let tokens = utt
        .tokens
        .as_ref()
        .ok_or_else(|| Error::Missing(format!("content tokens for {}", utt.id)))?;
    let prompt = utt
        .prompt
        .as_ref()
        .ok_or_else(|| Error::Missing(format!("prompt features for {}", utt.id)))?;
    let d = tokens.n_frames();
    if prompt.n_frames() != d {
        return Err(Error::Dim(format!(
            "{}: {} token frames vs {} prompt frames",
            utt.id,
            d,
            prompt.n_frames()
        )));
    }
    if seg.end() > d || seg.len == 0 {
        return Err(Error::OutOfRange(format!("prompt segment {seg:?} outside {d} frames")));
    }
    let (t0, t1) = target_range(d, &seg, mode);
    if t1 == t0 {
        return Err(Error::EmptyInput("target region"));
    }
    Ok(TrainingExample {
        id: utt.id.clone(),
        content: tokens.slice(t0, t1),
        prompt: prompt.slice(seg.start, seg.end())?,
        target: frame_samples(&utt.wave, t0, t1),
        target_frames: (t0, t1),
        segment: seg,
    })
}

/// Random window of `frames` frames from the target region; shorter targets are kept whole.
pub fn crop<R: Rng>(ex: &TrainingExample, frames: usize, rng: &mut R) -> TrainingExample {
    let n = ex.content.n_frames();
    if frames == 0 || n <= frames {
        return ex.clone();
    }
    let off = rng.random_range(0..=n - frames);
    TrainingExample {
        content: ex.content.slice(off, off + frames),
        target: ex.target[off * FRAME_HOP..(off + frames) * FRAME_HOP].to_vec(),
        target_frames: (ex.target_frames.0 + off, ex.target_frames.0 + off + frames),
        ..ex.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::super::sampler::Edge;
    use super::*;

    fn utt(d: usize) -> Utterance {
        let ids: Vec<u32> = (0..d as u32).flat_map(|f| [f, f + 10_000]).collect();
        let feats: Vec<f32> = (0..d).flat_map(|f| [f as f32, -(f as f32)]).collect();
        let samples: Vec<f32> = (0..d * FRAME_HOP).map(|i| (i / FRAME_HOP) as f32 * 1e-4).collect();
        Utterance {
            id: "u".into(),
            wave: Waveform::new(samples, 24_000).unwrap(),
            tokens: Some(TokenSeq::new(ids, 2).unwrap()),
            prompt: Some(PromptFrames::new(feats, 2).unwrap()),
        }
    }

    fn seg(start: usize, len: usize, edge: Edge) -> PromptSegment {
        PromptSegment { start, len, edge, offset: 0 }
    }

    #[test]
    fn begin_segment_leaves_tail_target() {
        let ex = example_for_segment(&utt(1000), seg(0, 400, Edge::Begin), TargetMode::Complement).unwrap();
        assert_eq!(ex.target_frames, (400, 1000));
        assert_eq!(ex.content.n_frames(), 600);
        assert_eq!(ex.target.len(), 144_000);
        assert_eq!(ex.prompt.n_frames(), 400);
        assert_eq!(ex.content.frame(0), &[400, 10_400]);
        assert!((ex.target[0] - 0.04).abs() < 1e-7);
    }

    #[test]
    fn end_segment_leaves_head_target() {
        let ex = example_for_segment(&utt(1000), seg(550, 450, Edge::End), TargetMode::Complement).unwrap();
        assert_eq!(ex.target_frames, (0, 550));
        let full = example_for_segment(&utt(1000), seg(550, 450, Edge::End), TargetMode::Full).unwrap();
        assert_eq!(full.target_frames, (0, 1000));
    }

    #[test]
    fn missing_features_are_reported() {
        let mut u = utt(700);
        u.prompt = None;
        let r = example_for_segment(&u, seg(0, 300, Edge::Begin), TargetMode::Complement);
        assert!(matches!(r, Err(Error::Missing(_))));
    }

    #[test]
    fn crop_keeps_alignment() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let ex = example_for_segment(&utt(1000), seg(0, 400, Edge::Begin), TargetMode::Complement).unwrap();
        let c = crop(&ex, 32, &mut rng);
        assert_eq!(c.content.n_frames(), 32);
        assert_eq!(c.target.len(), 32 * FRAME_HOP);
        let f0 = c.target_frames.0;
        assert_eq!(c.content.frame(0)[0] as usize, f0);
        assert!((c.target[0] - f0 as f32 * 1e-4).abs() < 1e-7);
    }
}
