//! Waveform generator: transposed-convolution upsampling with AMP residual
//! blocks whose Snake activations can be conditioned on a speaker vector.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use candle_core::Tensor;

use crate::dsp::filter::design_lowpass;
use crate::dsp::resample::HalfbandKernels;
use crate::error::{Error, Result};
use crate::frontend::{Frontend, FrontendConfig};
use crate::nn::layers::{leaky_relu, Conv1d, ConvSpec, ConvTranspose1d};
use crate::nn::params::{Init, ParamBuilder, ParamStore};
use crate::nn::snake::SnakeActivation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    AdaptiveSnake,
    Snake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    BigVgan,
    HifiGan,
}

impl FromStr for ActivationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive_snake" => Ok(Self::AdaptiveSnake),
            "snake" => Ok(Self::Snake),
            _ => Err(Error::Config(format!("unknown activation {s:?} (adaptive_snake | snake)"))),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AdaptiveSnake => "adaptive_snake",
            Self::Snake => "snake",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bigvgan" => Ok(Self::BigVgan),
            "hifigan" => Ok(Self::HifiGan),
            _ => Err(Error::Config(format!("unknown architecture {s:?} (bigvgan | hifigan)"))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BigVgan => "bigvgan",
            Self::HifiGan => "hifigan",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub in_dim: usize,
    pub base_channels: usize,
    pub upsample_factors: Vec<usize>,
    pub upsample_kernels: Vec<usize>,
    pub amp_kernel_sizes: Vec<usize>,
    pub amp_dilations: Vec<usize>,
    /// Activation/convolution pairs per (kernel, dilation) entry: 1 keeps only
    /// the dilated convolution, 2 follows it with an undilated one.
    pub amp_layers: usize,
    pub activation: ActivationKind,
    pub architecture: Architecture,
    pub cond_dim: usize,
    /// Anti-aliasing low-pass used around every Snake.
    pub aa_cutoff: f64,
    pub aa_transition: f64,
    pub aa_atten_db: f64,
}

impl GeneratorConfig {
    pub fn paper() -> Self {
        Self {
            in_dim: 184,
            base_channels: 512,
            upsample_factors: vec![8, 5, 3, 2],
            upsample_kernels: vec![16, 10, 6, 4],
            amp_kernel_sizes: vec![3, 7, 11],
            amp_dilations: vec![1, 3, 5],
            amp_layers: 2,
            activation: ActivationKind::AdaptiveSnake,
            architecture: Architecture::BigVgan,
            cond_dim: 1024,
            aa_cutoff: 0.4,
            aa_transition: 0.2,
            aa_atten_db: 60.0,
        }
    }

    pub fn desk() -> Self {
        Self {
            in_dim: 64,
            base_channels: 64,
            amp_layers: 1,
            cond_dim: 64,
            aa_transition: 0.35,
            aa_atten_db: 50.0,
            ..Self::paper()
        }
    }

    pub fn hop(&self) -> usize {
        self.upsample_factors.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.upsample_factors.is_empty() || self.upsample_factors.len() != self.upsample_kernels.len() {
            return Err(Error::Config("upsample factors and kernels must be non-empty and equally long".into()));
        }
        for (&u, &k) in self.upsample_factors.iter().zip(&self.upsample_kernels) {
            if u == 0 || k < u {
                return Err(Error::Config(format!(
                    "upsample kernel {k} is shorter than its factor {u}"
                )));
            }
        }
        if self.base_channels >> self.upsample_factors.len() == 0 {
            return Err(Error::Config(format!(
                "base_channels {} cannot halve {} times",
                self.base_channels,
                self.upsample_factors.len()
            )));
        }
        if self.amp_kernel_sizes.is_empty()
            || self.amp_dilations.is_empty()
            || self.amp_kernel_sizes.iter().any(|k| k % 2 == 0)
        {
            return Err(Error::Config("AMP kernels must be odd and dilations non-empty".into()));
        }
        if !(1..=2).contains(&self.amp_layers) {
            return Err(Error::Config(format!("amp_layers must be 1 or 2, got {}", self.amp_layers)));
        }
        if self.cond_dim == 0 || self.in_dim == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        Ok(())
    }

    fn uses_speaker(&self) -> bool {
        self.architecture == Architecture::BigVgan && self.activation == ActivationKind::AdaptiveSnake
    }
}

#[derive(Debug, Clone)]
enum Act {
    Snake(SnakeActivation),
    Leaky(f64),
}

impl Act {
    fn forward(&self, x: &Tensor, s: Option<&Tensor>) -> Result<Tensor> {
        match self {
            Act::Snake(a) => a.forward(x, s),
            Act::Leaky(slope) => leaky_relu(x, *slope),
        }
    }
}

#[derive(Debug, Clone)]
struct ResLayer {
    pairs: Vec<(Act, Conv1d)>,
}

#[derive(Debug, Clone)]
struct Stage {
    up: ConvTranspose1d,
    blocks: Vec<Vec<ResLayer>>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    conv_pre: Conv1d,
    stages: Vec<Stage>,
    act_post: Act,
    conv_post: Conv1d,
}

impl Generator {
    pub fn new(pb: &mut ParamBuilder, cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let filter = design_lowpass(cfg.aa_cutoff, cfg.aa_transition, cfg.aa_atten_db)?;
        let kernels = Arc::new(HalfbandKernels::new(&filter));
        let make_act = |pb: &mut ParamBuilder, ch: usize, slope: f64| -> Result<Act> {
            Ok(match cfg.architecture {
                Architecture::HifiGan => Act::Leaky(slope),
                Architecture::BigVgan => {
                    let cond = (cfg.activation == ActivationKind::AdaptiveSnake).then_some(cfg.cond_dim);
                    Act::Snake(SnakeActivation::new(pb, ch, cond, kernels.clone())?)
                }
            })
        };

        let conv_pre = Conv1d::kaiming(&mut pb.pp("conv_pre"), cfg.in_dim, cfg.base_channels, ConvSpec::same(7, 1))?;
        let mut stages = Vec::with_capacity(cfg.upsample_factors.len());
        let mut ch = cfg.base_channels;
        for (i, (&u, &k)) in cfg.upsample_factors.iter().zip(&cfg.upsample_kernels).enumerate() {
            let mut sp = pb.pp(format!("stage{i}"));
            let out = ch / 2;
            let bound = 1.0 / ((ch * k / u) as f32).sqrt();
            let up = ConvTranspose1d::new(&mut sp.pp("up"), ch, out, k, u, Init::Uniform(bound))?;
            let mut blocks = Vec::with_capacity(cfg.amp_kernel_sizes.len());
            for (j, &ks) in cfg.amp_kernel_sizes.iter().enumerate() {
                let mut bp = sp.pp(format!("amp{j}"));
                let mut layers = Vec::with_capacity(cfg.amp_dilations.len());
                for (l, &d) in cfg.amp_dilations.iter().enumerate() {
                    let mut lp = bp.pp(format!("layer{l}"));
                    let mut pairs = Vec::with_capacity(cfg.amp_layers);
                    for m in 0..cfg.amp_layers {
                        let dil = if m == 0 { d } else { 1 };
                        let act = make_act(&mut lp.pp(format!("act{m}")), out, 0.1)?;
                        let conv = Conv1d::hifi(&mut lp.pp(format!("conv{m}")), out, out, ConvSpec::same(ks, dil))?;
                        pairs.push((act, conv));
                    }
                    layers.push(ResLayer { pairs });
                }
                blocks.push(layers);
            }
            stages.push(Stage { up, blocks });
            ch = out;
        }
        let act_post = make_act(&mut pb.pp("act_post"), ch, 0.01)?;
        let conv_post = Conv1d::kaiming(&mut pb.pp("conv_post"), ch, 1, ConvSpec::same(7, 1))?;
        Ok(Self { cfg: cfg.clone(), conv_pre, stages, act_post, conv_post })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// `hidden` is `(batch, frames, in_dim)`; `speaker` is `(batch, cond_dim)`
    /// and is required when the activations are adaptive. Returns
    /// `(batch, frames * hop)` samples in `[-1, 1]`.
    pub fn forward(&self, hidden: &Tensor, speaker: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, d) = hidden.dims3()?;
        if d != self.cfg.in_dim {
            return Err(Error::Dim(format!("generator input dim {d}, expected {}", self.cfg.in_dim)));
        }
        if t == 0 {
            return Err(Error::EmptyInput("generator frames"));
        }
        let s = if self.cfg.uses_speaker() {
            let s = speaker.ok_or_else(|| Error::Missing("speaker vector for the generator".into()))?;
            if s.dims() != [b, self.cfg.cond_dim] {
                return Err(Error::Dim(format!(
                    "speaker vector shape {:?}, expected [{b}, {}]",
                    s.dims(),
                    self.cfg.cond_dim
                )));
            }
            Some(s)
        } else {
            None
        };
        let hifi = self.cfg.architecture == Architecture::HifiGan;
        let mut x = self.conv_pre.forward(&hidden.transpose(1, 2)?.contiguous()?)?;
        for stage in &self.stages {
            if hifi {
                x = leaky_relu(&x, 0.1)?;
            }
            x = stage.up.forward(&x)?;
            let mut acc: Option<Tensor> = None;
            for block in &stage.blocks {
                let mut y = x.clone();
                for layer in block {
                    let mut r = y.clone();
                    for (act, conv) in &layer.pairs {
                        r = conv.forward(&act.forward(&r, s)?)?;
                    }
                    y = (y + r)?;
                }
                acc = Some(match acc {
                    Some(a) => (a + y)?,
                    None => y,
                });
            }
            x = acc.expect("at least one AMP block").affine(1.0 / stage.blocks.len() as f64, 0.0)?;
        }
        let x = self.conv_post.forward(&self.act_post.forward(&x, s)?)?;
        Ok(x.tanh()?.squeeze(1)?)
    }
}

/// Trainable scalars of the frontend (including the prompt prenet) plus the generator.
pub fn count_params(frontend: &FrontendConfig, generator: &GeneratorConfig) -> Result<usize> {
    let mut store = ParamStore::shapes_only();
    {
        let mut root = store.root();
        Frontend::new(&mut root.pp("frontend"), frontend)?;
        Generator::new(&mut root.pp("generator"), generator)?;
    }
    Ok(store.num_params())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::to_f32_vec;
    use candle_core::{DType, Device};

    fn tiny(act: ActivationKind, arch: Architecture) -> GeneratorConfig {
        GeneratorConfig {
            in_dim: 6,
            base_channels: 16,
            cond_dim: 3,
            activation: act,
            architecture: arch,
            amp_kernel_sizes: vec![3, 5],
            amp_dilations: vec![1, 3],
            ..GeneratorConfig::desk()
        }
    }

    fn hidden(t: usize) -> Tensor {
        Tensor::from_vec(
            (0..t * 6).map(|i| ((i as f32) * 0.37).sin()).collect::<Vec<_>>(),
            (1, t, 6),
            &Device::Cpu,
        )
        .unwrap()
    }

    #[test]
    fn output_length_is_frames_times_hop() {
        let mut store = ParamStore::new(0);
        let g = Generator::new(&mut store.root(), &tiny(ActivationKind::AdaptiveSnake, Architecture::BigVgan)).unwrap();
        let s = Tensor::ones((1, 3), DType::F32, &Device::Cpu).unwrap();
        for t in [1, 3] {
            let y = g.forward(&hidden(t), Some(&s)).unwrap();
            assert_eq!(y.dims(), &[1, t * 240]);
            assert!(to_f32_vec(&y).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn zero_conditioning_matches_plain_snake() {
        let mut sa = ParamStore::new(5);
        let a = Generator::new(&mut sa.root(), &tiny(ActivationKind::AdaptiveSnake, Architecture::BigVgan)).unwrap();
        let mut sb = ParamStore::new(5);
        let b = Generator::new(&mut sb.root(), &tiny(ActivationKind::Snake, Architecture::BigVgan)).unwrap();
        // Same draws: conditioning maps are zero-initialized and consume no randomness.
        let s = Tensor::new(&[[0.3f32, -2.0, 1.0]], &Device::Cpu).unwrap();
        let ya = to_f32_vec(&a.forward(&hidden(4), Some(&s)).unwrap()).unwrap();
        let yb = to_f32_vec(&b.forward(&hidden(4), None).unwrap()).unwrap();
        for (x, y) in ya.iter().zip(&yb) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn hifigan_variant_runs_without_speaker() {
        let mut store = ParamStore::new(0);
        let g = Generator::new(&mut store.root(), &tiny(ActivationKind::AdaptiveSnake, Architecture::HifiGan)).unwrap();
        assert_eq!(g.forward(&hidden(2), None).unwrap().dims(), &[1, 480]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = tiny(ActivationKind::Snake, Architecture::BigVgan);
        c.upsample_kernels = vec![16, 10, 6];
        assert!(c.validate().is_err());
        let mut c = tiny(ActivationKind::Snake, Architecture::BigVgan);
        c.amp_kernel_sizes = vec![4];
        assert!(c.validate().is_err());
    }
}

