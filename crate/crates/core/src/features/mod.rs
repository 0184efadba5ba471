//! Content tokens, prompt features and their file formats.

pub mod io;
pub mod kmeans;
pub mod prompt;
pub mod tokenizer;
pub mod tokens;

pub use io::{read_feature_file, read_token_file, write_feature_file, write_token_file, FeatureMatrix};
pub use kmeans::{kmeans, KMeans};
pub use prompt::{mean_pool, PromptExtractor, PromptFrames};
pub use tokenizer::{SyntheticTokenizer, TokenizerConfig};
pub use tokens::{embed_tokens, CodebookSet, TokenSeq};

pub(crate) use crate::nn::params::standard_normal;
