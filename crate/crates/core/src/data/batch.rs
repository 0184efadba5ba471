//! Duration-budgeted batching with zero padding and validity masks.

use candle_core::{Device, Tensor};

use super::example::{TrainingExample, FRAME_HOP};
use crate::error::{Error, Result};
use crate::features::{embed_tokens, mean_pool, CodebookSet};

pub const DEFAULT_BATCH_SECONDS: f64 = 36.0;

/// Padded tensors for a group of examples. Masks hold 1 for real frames.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `(batch, frames, content_dim)`
    pub content: Tensor,
    /// `(batch, frames)`
    pub content_mask: Tensor,
    /// `(batch, prompt_frames, prompt_dim)`
    pub prompt: Tensor,
    /// `(batch, prompt_frames)`
    pub prompt_mask: Tensor,
    /// Mean-pooled prompt, `(batch, prompt_dim)`.
    pub speaker: Tensor,
    /// `(batch, frames * FRAME_HOP)`
    pub target: Tensor,
    pub frames: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.frames.iter().copied().max().unwrap_or(0)
    }

    pub fn total_duration_s(&self) -> f64 {
        self.frames.iter().sum::<usize>() as f64 / 100.0
    }
}

/// Groups example indices so each group's summed duration stays within `max_total_s`.
/// Longest first, each example goes to the first group with room.
pub fn pack_batches(durations: &[f64], max_total_s: f64) -> Result<Vec<Vec<usize>>> {
    if !(max_total_s > 0.0) {
        return Err(Error::Config(format!("batch budget {max_total_s} s must be positive")));
    }
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| durations[b].total_cmp(&durations[a]).then(a.cmp(&b)));
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in order {
        let d = durations[i];
        if d > max_total_s {
            return Err(Error::OutOfRange(format!(
                "example {i} lasts {d:.2} s, over the {max_total_s} s batch budget"
            )));
        }
        match groups.iter_mut().find(|(total, _)| total + d <= max_total_s) {
            Some((total, members)) => {
                *total += d;
                members.push(i);
            }
            None => groups.push((d, vec![i])),
        }
    }
    Ok(groups.into_iter().map(|(_, m)| m).collect())
}

fn mask(lens: &[usize], width: usize, device: &Device) -> Result<Tensor> {
    let v: Vec<f32> = lens
        .iter()
        .flat_map(|&n| (0..width).map(move |i| if i < n { 1.0 } else { 0.0 }))
        .collect();
    Ok(Tensor::from_vec(v, (lens.len(), width), device)?)
}

/// Pads and stacks examples into one batch.
pub fn collate(examples: &[&TrainingExample], codebooks: &CodebookSet, device: &Device) -> Result<Batch> {
    let b = examples.len();
    if b == 0 {
        return Err(Error::EmptyInput("batch examples"));
    }
    let frames: Vec<usize> = examples.iter().map(|e| e.content.n_frames()).collect();
    let p_frames: Vec<usize> = examples.iter().map(|e| e.prompt.n_frames()).collect();
    let t = *frames.iter().max().unwrap_or(&0);
    let p = *p_frames.iter().max().unwrap_or(&0);
    if t == 0 || p == 0 {
        return Err(Error::EmptyInput("batch frames"));
    }
    let dc = codebooks.content_dim();
    let dp = examples[0].prompt.dim();
    let mut content = vec![0.0f32; b * t * dc];
    let mut prompt = vec![0.0f32; b * p * dp];
    let mut speaker = Vec::with_capacity(b * dp);
    let mut target = vec![0.0f32; b * t * FRAME_HOP];
    for (i, e) in examples.iter().enumerate() {
        if e.prompt.dim() != dp {
            return Err(Error::Dim(format!("prompt dims {} and {dp} in one batch", e.prompt.dim())));
        }
        if e.target.len() != frames[i] * FRAME_HOP {
            return Err(Error::Dim(format!(
                "{}: {} target samples for {} frames",
                e.id,
                e.target.len(),
                frames[i]
            )));
        }
        let emb = embed_tokens(&e.content, codebooks)?;
        content[i * t * dc..i * t * dc + emb.len()].copy_from_slice(&emb);
        let pv = e.prompt.values();
        prompt[i * p * dp..i * p * dp + pv.len()].copy_from_slice(pv);
        speaker.extend_from_slice(mean_pool(&e.prompt)?.as_slice());
        let w = t * FRAME_HOP;
        target[i * w..i * w + e.target.len()].copy_from_slice(&e.target);
    }
    Ok(Batch {
        ids: examples.iter().map(|e| e.id.clone()).collect(),
        content: Tensor::from_vec(content, (b, t, dc), device)?,
        content_mask: mask(&frames, t, device)?,
        prompt: Tensor::from_vec(prompt, (b, p, dp), device)?,
        prompt_mask: mask(&p_frames, p, device)?,
        speaker: Tensor::from_vec(speaker, (b, dp), device)?,
        target: Tensor::from_vec(target, (b, t * FRAME_HOP), device)?,
        frames,
    })
}

/// Packs examples under `max_total_s` of target audio per batch and collates each group.
pub fn make_batches(
    examples: &[TrainingExample],
    max_total_s: f64,
    codebooks: &CodebookSet,
    device: &Device,
) -> Result<Vec<Batch>> {
    let durations: Vec<f64> = examples.iter().map(TrainingExample::duration_s).collect();
    pack_batches(&durations, max_total_s)?
        .into_iter()
        .map(|g| {
            let members: Vec<&TrainingExample> = g.iter().map(|&i| &examples[i]).collect();
            collate(&members, codebooks, device)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::sampler::{Edge, PromptSegment};
    use super::*;
    use crate::features::{PromptFrames, TokenSeq};
    use crate::nn::layers::to_f32_vec;

    #[test]
    fn packing_examples() {
        assert_eq!(pack_batches(&[10.0, 10.0, 10.0], 36.0).unwrap().len(), 1);
        assert_eq!(pack_batches(&[20.0, 20.0], 36.0).unwrap().len(), 2);
        assert!(pack_batches(&[37.0], 36.0).is_err());
        for g in pack_batches(&[7.0, 30.0, 5.5, 12.0, 19.0, 6.0, 6.0], 36.0).unwrap() {
            assert!(g.len() >= 1);
        }
    }

    fn example(frames: usize, prompt_frames: usize) -> TrainingExample {
        TrainingExample {
            id: format!("e{frames}"),
            content: TokenSeq::new(vec![1; frames], 1).unwrap(),
            prompt: PromptFrames::new(vec![0.5; prompt_frames * 3], 3).unwrap(),
            target: vec![0.1; frames * FRAME_HOP],
            target_frames: (0, frames),
            segment: PromptSegment { start: 0, len: prompt_frames, edge: Edge::Begin, offset: 0 },
        }
    }

    #[test]
    fn masks_mark_exactly_the_padding() {
        let cb = CodebookSet::new(vec![vec![1.0; 2 * 4]], 4).unwrap();
        let (a, b) = (example(5, 2), example(3, 4));
        let batch = collate(&[&a, &b], &cb, &Device::Cpu).unwrap();
        assert_eq!(batch.content.dims(), &[2, 5, 4]);
        assert_eq!(
            to_f32_vec(&batch.content_mask).unwrap(),
            vec![1., 1., 1., 1., 1., 1., 1., 1., 0., 0.]
        );
        assert_eq!(to_f32_vec(&batch.prompt_mask).unwrap(), vec![1., 1., 0., 0., 1., 1., 1., 1.]);
        let t = to_f32_vec(&batch.target).unwrap();
        assert_eq!(t[5 * FRAME_HOP + 3 * FRAME_HOP - 1], 0.1);
        assert_eq!(t[5 * FRAME_HOP + 3 * FRAME_HOP], 0.0);
    }
}
