//! Flat `section.key = value` configuration covering every module.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::{SamplerConfig, TargetMode};
use crate::disc::{DiscConfig, LossWeights};
use crate::dsp::mel::MelConfig;
use crate::error::{Error, Result};
use crate::features::TokenizerConfig;
use crate::frontend::FrontendConfig;
use crate::generator::{ActivationKind, Architecture, GeneratorConfig};

/// Text form of a single config value.
pub trait KvValue: Sized {
    fn to_kv(&self) -> String;
    fn from_kv(s: &str) -> Result<Self>;
}

macro_rules! kv_via_str {
    ($($t:ty),*) => {$(
        impl KvValue for $t {
            fn to_kv(&self) -> String {
                self.to_string()
            }
            fn from_kv(s: &str) -> Result<Self> {
                <$t as FromStr>::from_str(s.trim())
                    .map_err(|e| Error::Config(format!("cannot parse {s:?}: {e}")))
            }
        }
    )*};
}

kv_via_str!(usize, u32, u64, f32, f64, bool, String, ActivationKind, Architecture, TargetMode);

impl<T: KvValue> KvValue for Vec<T> {
    fn to_kv(&self) -> String {
        self.iter().map(KvValue::to_kv).collect::<Vec<_>>().join(",")
    }
    fn from_kv(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(T::from_kv).collect()
    }
}

/// A group of keys sharing one prefix.
pub trait KvSection {
    fn entries(&self) -> Vec<(&'static str, String)>;
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
}

macro_rules! kv_section {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl KvSection for $ty {
            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), KvValue::to_kv(&self.$field))),*]
            }
            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = KvValue::from_kv(value)
                            .map_err(|e| Error::Config(format!("{key}: {e}")))?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptConfig {
    pub dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub min_s: f64,
    pub max_s: f64,
    pub max_offset: usize,
    pub min_total_frames: usize,
    pub target: TargetMode,
    pub batch_seconds: f64,
    /// Upper bound on examples per batch; 0 leaves only the duration budget.
    pub batch_size: usize,
    /// Training crop length in frames; 0 trains on whole target regions.
    pub segment_frames: usize,
}

impl DataConfig {
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig { max_offset: self.max_offset, min_total_frames: self.min_total_frames }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    /// Steps between learning-rate decays; 0 decays once per pass over the training set.
    pub decay_every: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcConfig {
    pub min_reference_s: f64,
    pub f0_min: f64,
    pub f0_max: f64,
}

kv_section!(MelConfig { sample_rate, n_fft, hop, win, n_mels, fmin, fmax, log_floor });
kv_section!(TokenizerConfig { groups, codebook_size, content_dim, max_iter, mean_normalize, seed });
kv_section!(PromptConfig { dim, seed });
kv_section!(FrontendConfig {
    content_dim, prompt_dim, attn_dim, n_heads, n_blocks, ffn_dim, conv_kernel,
    prenet_dims, prenet_kernel, rel_clip, dropout, n_mels,
});
kv_section!(GeneratorConfig {
    in_dim, base_channels, upsample_factors, upsample_kernels, amp_kernel_sizes, amp_dilations,
    amp_layers, activation, architecture, cond_dim, aa_cutoff, aa_transition, aa_atten_db,
});
kv_section!(DiscConfig {
    mpd_periods, mpd_channels, msd_scales, msd_channels, msd_kernels, msd_strides, msd_groups,
});
kv_section!(LossWeights { adv, feat_match, mel, aux_mel, aux_warmup_steps });
kv_section!(DataConfig {
    min_s, max_s, max_offset, min_total_frames, target, batch_seconds, batch_size, segment_frames,
});
kv_section!(TrainConfig {
    steps, lr_g, lr_d, beta1, beta2, weight_decay, lr_decay, decay_every, seed, checkpoint_every,
    deterministic,
});
kv_section!(VcConfig { min_reference_s, f0_min, f0_max });

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub preset: String,
    pub mel: MelConfig,
    pub tokenizer: TokenizerConfig,
    pub prompt: PromptConfig,
    pub frontend: FrontendConfig,
    pub generator: GeneratorConfig,
    pub disc: DiscConfig,
    pub loss: LossWeights,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub vc: VcConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self::desk()
    }
}

impl Config {
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            mel: MelConfig::default(),
            tokenizer: TokenizerConfig::default(),
            prompt: PromptConfig { dim: 1024, seed: 1 },
            frontend: FrontendConfig::paper(),
            generator: GeneratorConfig::paper(),
            disc: DiscConfig::paper(),
            loss: LossWeights::default(),
            data: DataConfig {
                min_s: 6.0,
                max_s: 30.0,
                max_offset: 100,
                min_total_frames: 600,
                target: TargetMode::Complement,
                batch_seconds: 36.0,
                batch_size: 0,
                segment_frames: 0,
            },
            train: TrainConfig {
                steps: 1_000_000,
                lr_g: 2e-4,
                lr_d: 2e-4,
                beta1: 0.8,
                beta2: 0.99,
                weight_decay: 0.01,
                lr_decay: 0.999,
                decay_every: 0,
                seed: 0,
                checkpoint_every: 10_000,
                deterministic: false,
            },
            vc: VcConfig { min_reference_s: 1.0, f0_min: 50.0, f0_max: 600.0 },
        }
    }

    /// Small model and toy-corpus data settings that train on a CPU.
    pub fn desk() -> Self {
        let p = Self::paper();
        Self {
            preset: "desk".into(),
            tokenizer: TokenizerConfig { codebook_size: 64, content_dim: 128, max_iter: 50, ..p.tokenizer },
            prompt: PromptConfig { dim: 64, seed: 1 },
            frontend: FrontendConfig::desk(),
            generator: GeneratorConfig::desk(),
            disc: DiscConfig::desk(),
            data: DataConfig {
                min_s: 2.0,
                min_total_frames: 200,
                batch_size: 2,
                segment_frames: 32,
                ..p.data
            },
            train: TrainConfig { steps: 2000, checkpoint_every: 500, deterministic: true, ..p.train },
            ..p
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (paper | desk)"))),
        }
    }

    fn sections(&self) -> Vec<(&'static str, &dyn KvSection)> {
        vec![
            ("mel", &self.mel),
            ("tokenizer", &self.tokenizer),
            ("prompt", &self.prompt),
            ("frontend", &self.frontend),
            ("generator", &self.generator),
            ("disc", &self.disc),
            ("loss", &self.loss),
            ("data", &self.data),
            ("train", &self.train),
            ("vc", &self.vc),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("key {key:?} lacks a section prefix")))?;
        let target: &mut dyn KvSection = match section {
            "mel" => &mut self.mel,
            "tokenizer" => &mut self.tokenizer,
            "prompt" => &mut self.prompt,
            "frontend" => &mut self.frontend,
            "generator" => &mut self.generator,
            "disc" => &mut self.disc,
            "loss" => &mut self.loss,
            "data" => &mut self.data,
            "train" => &mut self.train,
            "vc" => &mut self.vc,
            _ => return Err(Error::Config(format!("unknown section {section:?}"))),
        };
        target.set(field, value).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{section}.{m}")),
            other => other,
        })
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn dump(&self) -> String {
        let mut out = format!("preset = {}\n", self.preset);
        for (name, sec) in self.sections() {
            for (k, v) in sec.entries() {
                let _ = writeln!(out, "{name}.{k} = {v}");
            }
        }
        out
    }

    /// Parses `key = value` lines (`#` comments allowed). A `preset` line, if
    /// present, must come first and selects the base the other lines override.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Option<Config> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                if cfg.is_some() {
                    return Err(Error::Config(format!("line {}: preset must precede other keys", n + 1)));
                }
                cfg = Some(Self::preset(v)?);
                continue;
            }
            cfg.get_or_insert_with(Self::desk)
                .set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        let cfg = cfg.unwrap_or_else(Self::desk);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Checks each section and the dimensions that must agree across modules.
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.frontend.validate()?;
        self.generator.validate()?;
        self.disc.validate()?;
        self.loss.validate()?;
        self.data.sampler().validate()?;
        let checks = [
            (self.tokenizer.content_dim, self.frontend.content_dim, "tokenizer.content_dim", "frontend.content_dim"),
            (self.prompt.dim, self.frontend.prompt_dim, "prompt.dim", "frontend.prompt_dim"),
            (self.prompt.dim, self.generator.cond_dim, "prompt.dim", "generator.cond_dim"),
            (self.frontend.attn_dim, self.generator.in_dim, "frontend.attn_dim", "generator.in_dim"),
            (self.mel.n_mels, self.frontend.n_mels, "mel.n_mels", "frontend.n_mels"),
            (self.mel.hop, self.generator.hop(), "mel.hop", "generator upsampling product"),
        ];
        for (a, b, na, nb) in checks {
            if a != b {
                return Err(Error::Config(format!("{na} = {a} but {nb} = {b}")));
            }
        }
        if self.tokenizer.groups == 0 || self.tokenizer.content_dim % self.tokenizer.groups != 0 {
            return Err(Error::Config("tokenizer.content_dim must split evenly across groups".into()));
        }
        let t = &self.train;
        if t.steps == 0 || !(t.lr_g > 0.0) || !(t.lr_d > 0.0) {
            return Err(Error::Config("train.steps must be >= 1 and learning rates > 0".into()));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.lr_decay > 0.0 && t.lr_decay <= 1.0) {
            return Err(Error::Config("betas must lie in [0, 1) and lr_decay in (0, 1]".into()));
        }
        if !(self.data.batch_seconds > 0.0) || !(self.data.min_s <= self.data.max_s) {
            return Err(Error::Config("data.batch_seconds must be > 0 and min_s <= max_s".into()));
        }
        if !(self.vc.min_reference_s >= 0.0) {
            return Err(Error::Config("vc.min_reference_s must be >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_consistent() {
        Config::paper().validate().unwrap();
        Config::desk().validate().unwrap();
    }

    #[test]
    fn dump_parses_back() {
        for cfg in [Config::paper(), Config::desk()] {
            assert_eq!(Config::parse(&cfg.dump()).unwrap(), cfg);
        }
    }

    #[test]
    fn overrides_and_errors() {
        let c = Config::parse("preset = desk\ngenerator.activation = snake # ablation\ntrain.steps = 5\n").unwrap();
        assert_eq!(c.generator.activation, ActivationKind::Snake);
        assert_eq!(c.train.steps, 5);
        assert!(Config::parse("train.nope = 1").is_err());
        assert!(Config::parse("train.steps = x").is_err());
        assert!(Config::parse("prompt.dim = 32").is_err());
        assert!(Config::parse("train.steps = 2\npreset = paper").is_err());
    }
}
