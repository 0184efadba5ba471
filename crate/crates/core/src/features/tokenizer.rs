//! Stand-in content tokenizer: band-split log-mel frames quantized by k-means.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::audio::Waveform;
use crate::dsp::mel::{MelAnalyzer, MelConfig, MelFrames};
use crate::error::{Error, Result};
use crate::features::kmeans::{kmeans, KMeans};
use crate::features::tokens::{CodebookSet, TokenSeq};

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerConfig {
    pub groups: usize,
    pub codebook_size: usize,
    pub content_dim: usize,
    pub max_iter: usize,
    /// Subtract each utterance's mean log-mel spectrum before quantizing, so
    /// tokens describe relative spectral shape rather than static timbre.
    pub mean_normalize: bool,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            groups: 2,
            codebook_size: 320,
            content_dim: 512,
            max_iter: 100,
            mean_normalize: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTokenizer {
    mel: MelConfig,
    mean_normalize: bool,
    /// Mel-bin range `[start, end)` of each group.
    bands: Vec<(usize, usize)>,
    quantizers: Vec<KMeans>,
    codebooks: CodebookSet,
}

/// Splits `n` bins into `groups` contiguous bands whose widths differ by at most one.
pub fn band_split(n: usize, groups: usize) -> Vec<(usize, usize)> {
    (0..groups)
        .map(|g| (g * n / groups, (g + 1) * n / groups))
        .collect()
}

fn normalized_rows(mel: &MelFrames, mean_normalize: bool) -> Vec<f32> {
    if !mean_normalize {
        return mel.values().to_vec();
    }
    let mean = mel.mean_spectrum();
    mel.rows()
        .flat_map(|r| r.iter().zip(&mean).map(|(v, m)| (*v as f64 - m) as f32).collect::<Vec<_>>())
        .collect()
}

fn band_rows(rows: &[f32], n_mels: usize, band: (usize, usize)) -> Vec<f32> {
    rows.chunks(n_mels)
        .flat_map(|r| r[band.0..band.1].iter().copied())
        .collect()
}

impl SyntheticTokenizer {
    pub fn fit(corpus: &[Waveform], mel: &MelConfig, cfg: &TokenizerConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("tokenizer corpus"));
        }
        let analyzer = MelAnalyzer::new(mel)?;
        let mut rows = Vec::new();
        for w in corpus {
            rows.extend(normalized_rows(&analyzer.compute(w.samples())?, cfg.mean_normalize));
        }
        Self::fit_rows(&rows, mel, cfg)
    }

    /// Fits from already normalized log-mel rows (`frames x n_mels`).
    pub fn fit_rows(rows: &[f32], mel: &MelConfig, cfg: &TokenizerConfig) -> Result<Self> {
        if cfg.groups == 0 || cfg.groups > mel.n_mels {
            return Err(Error::Config(format!("{} token groups for {} mel bins", cfg.groups, mel.n_mels)));
        }
        if cfg.content_dim % cfg.groups != 0 {
            return Err(Error::Config(format!(
                "content dim {} is not divisible by {} groups",
                cfg.content_dim, cfg.groups
            )));
        }
        let frames = rows.len() / mel.n_mels;
        if frames < cfg.codebook_size {
            return Err(Error::TooShort(format!(
                "{frames} frames cannot fit a codebook of {}",
                cfg.codebook_size
            )));
        }
        let bands = band_split(mel.n_mels, cfg.groups);
        let code_dim = cfg.content_dim / cfg.groups;
        let mut quantizers = Vec::with_capacity(cfg.groups);
        let mut tables = Vec::with_capacity(cfg.groups);
        for (g, &band) in bands.iter().enumerate() {
            let pts = band_rows(rows, mel.n_mels, band);
            let width = band.1 - band.0;
            let q = kmeans(&pts, width, cfg.codebook_size, cfg.max_iter, cfg.seed.wrapping_add(g as u64))?;
            // Code vectors: centroids through a fixed random projection.
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x5eed_0000 + g as u64));
            let scale = 1.0 / (width as f32).sqrt();
            let proj: Vec<f32> = (0..width * code_dim)
                .map(|_| scale * super::standard_normal(&mut rng))
                .collect();
            let mut table = vec![0.0f32; cfg.codebook_size * code_dim];
            for c in 0..cfg.codebook_size {
                let cen = q.centroid(c);
                let dst = &mut table[c * code_dim..(c + 1) * code_dim];
                for (i, &v) in cen.iter().enumerate() {
                    for (o, &p) in dst.iter_mut().zip(&proj[i * code_dim..(i + 1) * code_dim]) {
                        *o += v * p;
                    }
                }
            }
            quantizers.push(q);
            tables.push(table);
        }
        Ok(Self {
            mel: mel.clone(),
            mean_normalize: cfg.mean_normalize,
            bands,
            quantizers,
            codebooks: CodebookSet::new(tables, code_dim)?,
        })
    }

    pub fn from_parts(
        mel: &MelConfig,
        mean_normalize: bool,
        quantizers: Vec<KMeans>,
        codebooks: CodebookSet,
    ) -> Result<Self> {
        let bands = band_split(mel.n_mels, quantizers.len());
        for (q, b) in quantizers.iter().zip(&bands) {
            if q.dim != b.1 - b.0 {
                return Err(Error::Format(format!(
                    "quantizer width {} does not match band width {}",
                    q.dim,
                    b.1 - b.0
                )));
            }
        }
        if codebooks.groups() != quantizers.len() {
            return Err(Error::Format("codebook and quantizer group counts differ".into()));
        }
        Ok(Self { mel: mel.clone(), mean_normalize, bands, quantizers, codebooks })
    }

    pub fn mel_config(&self) -> &MelConfig {
        &self.mel
    }

    pub fn mean_normalize(&self) -> bool {
        self.mean_normalize
    }

    pub fn groups(&self) -> usize {
        self.quantizers.len()
    }

    pub fn quantizers(&self) -> &[KMeans] {
        &self.quantizers
    }

    pub fn codebooks(&self) -> &CodebookSet {
        &self.codebooks
    }

    pub fn tokenize(&self, w: &Waveform) -> Result<TokenSeq> {
        let mel = MelAnalyzer::new(&self.mel)?.compute(w.samples())?;
        self.tokenize_mel(&mel)
    }

    pub fn tokenize_mel(&self, mel: &MelFrames) -> Result<TokenSeq> {
        if mel.n_mels() != self.mel.n_mels {
            return Err(Error::Dim(format!("expected {} mel bins, got {}", self.mel.n_mels, mel.n_mels())));
        }
        let rows = normalized_rows(mel, self.mean_normalize);
        let mut ids = Vec::with_capacity(mel.n_frames() * self.groups());
        for r in rows.chunks(self.mel.n_mels) {
            for (q, b) in self.quantizers.iter().zip(&self.bands) {
                ids.push(q.assign(&r[b.0..b.1]) as u32);
            }
        }
        TokenSeq::new(ids, self.groups())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f32, amp: f32, n: usize) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * std::f32::consts::PI * freq * i as f32 / 24_000.0).sin())
                .collect(),
            24_000,
        )
        .unwrap()
    }

    fn small_cfg(k: usize) -> TokenizerConfig {
        TokenizerConfig {
            codebook_size: k,
            content_dim: 64,
            ..TokenizerConfig::default()
        }
    }

    #[test]
    fn constant_corpus_uses_one_id_per_group() {
        let w = Waveform::new(vec![0.3; 12_000], 24_000).unwrap();
        let tok = SyntheticTokenizer::fit(&[w.clone(), w.clone()], &MelConfig::default(), &small_cfg(4)).unwrap();
        let t = tok.tokenize(&w).unwrap();
        for f in 0..t.n_frames() {
            assert_eq!(t.frame(f), t.frame(0));
        }
    }

    #[test]
    fn one_second_gives_one_hundred_frames_in_range() {
        let corpus = vec![tone(200.0, 0.3, 24_000), tone(1500.0, 0.2, 24_000)];
        let tok = SyntheticTokenizer::fit(&corpus, &MelConfig::default(), &small_cfg(8)).unwrap();
        let t = tok.tokenize(&corpus[0]).unwrap();
        assert_eq!(t.n_frames(), 100);
        assert!(t.ids().iter().all(|&i| i < 8));
        assert_eq!(t, tok.tokenize(&corpus[0]).unwrap());
    }

    #[test]
    fn fewer_frames_than_codes_is_an_error() {
        let corpus = vec![tone(200.0, 0.3, 2400)];
        assert!(SyntheticTokenizer::fit(&corpus, &MelConfig::default(), &small_cfg(64)).is_err());
    }

    #[test]
    fn fitting_is_deterministic() {
        let corpus = vec![tone(300.0, 0.3, 12_000), tone(700.0, 0.2, 12_000)];
        let a = SyntheticTokenizer::fit(&corpus, &MelConfig::default(), &small_cfg(6)).unwrap();
        let b = SyntheticTokenizer::fit(&corpus, &MelConfig::default(), &small_cfg(6)).unwrap();
        assert_eq!(a, b);
    }
}
