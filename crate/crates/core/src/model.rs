//! Model bundles: feature analysis, the prompted vocoder, and its critics.

use candle_core::{Device, Tensor};

use crate::checkpoint::Archive;
use crate::config::Config;
use crate::disc::{DiscOutputs, Discriminators};
use crate::dsp::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::{
    embed_tokens, mean_pool, CodebookSet, KMeans, PromptExtractor, PromptFrames, SyntheticTokenizer, TokenSeq,
};
use crate::frontend::{Frontend, FrontendOutput};
use crate::generator::Generator;
use crate::nn::layers::Ctx;
use crate::nn::params::ParamStore;

/// Content tokenizer and prompt feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub tokenizer: SyntheticTokenizer,
    pub extractor: PromptExtractor,
}

impl Analysis {
    pub fn fit(corpus: &[Waveform], cfg: &Config) -> Result<Self> {
        Ok(Self {
            tokenizer: SyntheticTokenizer::fit(corpus, &cfg.mel, &cfg.tokenizer)?,
            extractor: PromptExtractor::new(&cfg.mel, cfg.prompt.dim, cfg.prompt.seed)?,
        })
    }

    pub fn tokens(&self, w: &Waveform) -> Result<TokenSeq> {
        self.tokenizer.tokenize(w)
    }

    pub fn prompt(&self, w: &Waveform) -> Result<PromptFrames> {
        self.extractor.extract(w)
    }

    pub fn to_archive(&self, a: &mut Archive) -> Result<()> {
        let tok = &self.tokenizer;
        let cb = tok.codebooks();
        for (g, q) in tok.quantizers().iter().enumerate() {
            a.insert(format!("tokenizer.centroids.{g}"), vec![q.k, q.dim], q.centroids.clone())?;
            a.insert(format!("tokenizer.codes.{g}"), vec![cb.codebook_size(g), cb.code_dim()], cb.table(g).to_vec())?;
        }
        let n_mels = tok.mel_config().n_mels;
        a.insert(
            "prompt.projection",
            vec![n_mels, self.extractor.dim()],
            self.extractor.projection().to_vec(),
        )?;
        a.meta.insert("tokenizer.groups".into(), tok.groups().to_string());
        a.meta.insert("tokenizer.mean_normalize".into(), tok.mean_normalize().to_string());
        Ok(())
    }

    pub fn from_archive(a: &Archive, cfg: &Config) -> Result<Self> {
        let groups: usize = a
            .meta("tokenizer.groups")?
            .parse()
            .map_err(|_| Error::Format("tokenizer.groups metadata".into()))?;
        let mean_normalize = a.meta("tokenizer.mean_normalize")? == "true";
        let mut quantizers = Vec::with_capacity(groups);
        let mut tables = Vec::with_capacity(groups);
        let mut code_dim = 0;
        for g in 0..groups {
            let c = a.get(&format!("tokenizer.centroids.{g}"))?;
            let t = a.get(&format!("tokenizer.codes.{g}"))?;
            if c.shape.len() != 2 || t.shape.len() != 2 {
                return Err(Error::Format(format!("tokenizer group {g} tables must be 2-d")));
            }
            quantizers.push(KMeans { centroids: c.data.clone(), k: c.shape[0], dim: c.shape[1], iterations: 0 });
            tables.push(t.data.clone());
            code_dim = t.shape[1];
        }
        let tokenizer =
            SyntheticTokenizer::from_parts(&cfg.mel, mean_normalize, quantizers, CodebookSet::new(tables, code_dim)?)?;
        let p = a.get("prompt.projection")?;
        if p.shape.len() != 2 {
            return Err(Error::Format("prompt projection must be 2-d".into()));
        }
        let extractor = PromptExtractor::from_parts(&cfg.mel, p.data.clone(), p.shape[1])?;
        Ok(Self { tokenizer, extractor })
    }
}

/// Frontend plus generator, with their parameters in one store.
pub struct Vocoder {
    pub store: ParamStore,
    pub frontend: Frontend,
    pub generator: Generator,
}

/// Output of one vocoder pass.
pub struct VocoderOutput {
    pub wave: Tensor,
    pub frontend: FrontendOutput,
}

impl Vocoder {
    pub fn new(cfg: &Config, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let (frontend, generator) = {
            let mut root = store.root();
            let f = Frontend::new(&mut root.pp("frontend"), &cfg.frontend)?;
            let g = Generator::new(&mut root.pp("generator"), &cfg.generator)?;
            (f, g)
        };
        Ok(Self { store, frontend, generator })
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// `content (B,T,Dc)`, `prompt (B,P,Dp)`, `speaker (B,Dp)`.
    pub fn forward(
        &self,
        content: &Tensor,
        content_mask: Option<&Tensor>,
        prompt: &Tensor,
        prompt_mask: &Tensor,
        speaker: &Tensor,
        ctx: &Ctx,
    ) -> Result<VocoderOutput> {
        let fo = self.frontend.forward(content, content_mask, prompt, prompt_mask, ctx)?;
        let wave = self.generator.forward(&fo.hidden, Some(speaker))?;
        Ok(VocoderOutput { wave, frontend: fo })
    }

    /// Single-utterance inference: tokens from the source, timbre from the prompt.
    pub fn render(&self, codebooks: &CodebookSet, tokens: &TokenSeq, prompt: &PromptFrames) -> Result<Vec<f32>> {
        let dev = self.device().clone();
        let t = tokens.n_frames();
        if t == 0 || prompt.n_frames() == 0 {
            return Err(Error::EmptyInput("tokens or prompt frames"));
        }
        let content = Tensor::from_vec(embed_tokens(tokens, codebooks)?, (1, t, codebooks.content_dim()), &dev)?;
        let p = Tensor::from_vec(prompt.values().to_vec(), (1, prompt.n_frames(), prompt.dim()), &dev)?;
        let pm = Tensor::ones((1, prompt.n_frames()), candle_core::DType::F32, &dev)?;
        let s = mean_pool(prompt)?;
        let s = Tensor::from_vec(s.into_inner(), (1, prompt.dim()), &dev)?;
        let out = self.forward(&content, None, &p, &pm, &s, &Ctx::eval())?;
        Ok(out.wave.squeeze(0)?.to_vec1::<f32>()?)
    }
}

/// Multi-period and multi-scale discriminators.
pub struct Critic {
    pub store: ParamStore,
    pub discs: Discriminators,
}

impl Critic {
    pub fn new(cfg: &Config, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let discs = Discriminators::new(&mut store.root().pp("disc"), &cfg.disc)?;
        Ok(Self { store, discs })
    }

    pub fn forward(&self, wave: &Tensor) -> Result<DiscOutputs> {
        self.discs.forward(wave)
    }
}
