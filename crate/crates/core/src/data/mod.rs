//! Manifests, prompt sampling, training examples, batching and the toy corpus.

pub mod batch;
pub mod example;
pub mod manifest;
pub mod sampler;
pub mod toy;

pub use batch::{collate, make_batches, pack_batches, Batch, DEFAULT_BATCH_SECONDS};
pub use example::{crop, example_for_segment, make_training_example, target_range, TargetMode, TrainingExample, Utterance, FRAME_HOP};
pub use manifest::{build_manifest, Manifest, ManifestEntry};
pub use sampler::{sample_prompt_segment, sample_prompt_segment_with, Edge, PromptSegment, SamplerConfig};
pub use toy::{synthesize, toy_corpus, toy_speakers, write_toy_corpus, ToyConfig, ToyCorpus, ToySpeaker, ToyUtterance};
