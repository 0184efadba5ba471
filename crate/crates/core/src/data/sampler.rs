//! Prompt segment sampling near either end of an utterance.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Begin,
    End,
}

/// Frames `[start, start + len)` at 100 Hz.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptSegment {
    pub start: usize,
    pub len: usize,
    pub edge: Edge,
    pub offset: usize,
}

impl PromptSegment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Largest distance (frames) between the segment and its utterance edge.
    pub max_offset: usize,
    /// Shortest utterance (frames) the sampler accepts.
    pub min_total_frames: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { max_offset: 100, min_total_frames: 600 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        // o + L <= max_offset + D/2 <= D must hold for every admissible D.
        if self.min_total_frames < 2 * self.max_offset || self.min_total_frames < 3 {
            return Err(Error::Config(format!(
                "min_total_frames {} must be at least twice max_offset {} (and >= 3)",
                self.min_total_frames, self.max_offset
            )));
        }
        Ok(())
    }
}

pub fn sample_prompt_segment<R: Rng>(total_frames: usize, rng: &mut R) -> Result<PromptSegment> {
    sample_prompt_segment_with(total_frames, &SamplerConfig::default(), rng)
}

/// Length uniform on `[ceil(D/3), floor(D/2)]`, edge uniform, offset uniform on `[0, max_offset]`.
pub fn sample_prompt_segment_with<R: Rng>(
    total_frames: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<PromptSegment> {
    cfg.validate()?;
    let d = total_frames;
    if d < cfg.min_total_frames {
        return Err(Error::TooShort(format!(
            "utterance of {d} frames is below the {}-frame minimum for prompt sampling",
            cfg.min_total_frames
        )));
    }
    let len = rng.random_range(d.div_ceil(3)..=d / 2);
    let edge = if rng.random::<bool>() { Edge::Begin } else { Edge::End };
    let offset = rng.random_range(0..=cfg.max_offset);
    let start = match edge {
        Edge::Begin => offset,
        Edge::End => d - offset - len,
    };
    Ok(PromptSegment { start, len, edge, offset })
}
