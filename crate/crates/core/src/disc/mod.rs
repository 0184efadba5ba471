//! Multi-period and multi-scale waveform discriminators.

pub mod losses;

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::layers::{leaky_relu, reflect_pad_last, Conv1d, ConvSpec};
use crate::nn::params::ParamBuilder;

pub use losses::{
    aux_weight, feature_matching_loss, lsgan_d_loss, lsgan_g_loss, mel_l1, mel_l1_frames, LossWeights,
};

const SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscConfig {
    pub mpd_periods: Vec<usize>,
    pub mpd_channels: Vec<usize>,
    pub msd_scales: usize,
    pub msd_channels: Vec<usize>,
    pub msd_kernels: Vec<usize>,
    pub msd_strides: Vec<usize>,
    pub msd_groups: Vec<usize>,
}

impl DiscConfig {
    pub fn paper() -> Self {
        Self {
            mpd_periods: vec![2, 3, 5, 7, 11],
            mpd_channels: vec![32, 128, 512, 1024, 1024],
            msd_scales: 3,
            msd_channels: vec![128, 128, 256, 512, 1024, 1024, 1024],
            msd_kernels: vec![15, 41, 41, 41, 41, 41, 5],
            msd_strides: vec![1, 2, 2, 4, 4, 1, 1],
            msd_groups: vec![1, 4, 16, 16, 16, 16, 1],
        }
    }

    pub fn desk() -> Self {
        Self {
            mpd_channels: vec![8, 16, 32, 32],
            msd_channels: vec![8, 16, 16, 32, 32],
            msd_kernels: vec![15, 21, 21, 21, 5],
            msd_strides: vec![1, 2, 4, 4, 1],
            msd_groups: vec![1, 4, 4, 4, 1],
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mpd_periods.is_empty() || self.mpd_channels.is_empty() || self.mpd_periods.contains(&0) {
            return Err(Error::Config("multi-period discriminator needs positive periods and channels".into()));
        }
        let n = self.msd_channels.len();
        if n == 0 || self.msd_kernels.len() != n || self.msd_strides.len() != n || self.msd_groups.len() != n {
            return Err(Error::Config("multi-scale channel/kernel/stride/group lists must align".into()));
        }
        if self.msd_scales == 0 {
            return Err(Error::Config("multi-scale discriminator needs at least one scale".into()));
        }
        Ok(())
    }
}

/// Scores and intermediate feature maps, one entry per sub-discriminator.
#[derive(Debug, Clone)]
pub struct DiscOutputs {
    pub scores: Vec<Tensor>,
    pub feats: Vec<Vec<Tensor>>,
}

impl DiscOutputs {
    fn extend(&mut self, other: DiscOutputs) {
        self.scores.extend(other.scores);
        self.feats.extend(other.feats);
    }
}

fn run_stack(convs: &[Conv1d], post: &Conv1d, x: Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    let mut feats = Vec::with_capacity(convs.len() + 1);
    let mut x = x;
    for c in convs {
        x = leaky_relu(&c.forward(&x)?, SLOPE)?;
        feats.push(x.clone());
    }
    let score = post.forward(&x)?;
    feats.push(score.clone());
    Ok((score, feats))
}

#[derive(Debug, Clone)]
struct PeriodDisc {
    period: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

/// Pads on the right by reflection to a multiple of `period` and folds the
/// period into the batch: `(batch, samples)` to `(batch * period, 1, samples / period)`.
pub fn fold_period(wave: &Tensor, period: usize) -> Result<Tensor> {
    let (b, n) = wave.dims2()?;
    let pad = (period - n % period) % period;
    let x = if pad > 0 { reflect_pad_last(wave, 0, pad)? } else { wave.clone() };
    let rows = (n + pad) / period;
    Ok(x.reshape((b, rows, period))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b * period, 1, rows))?)
}

impl PeriodDisc {
    fn new(pb: &mut ParamBuilder, period: usize, channels: &[usize]) -> Result<Self> {
        let mut convs = Vec::with_capacity(channels.len());
        let mut c_in = 1;
        for (i, &c) in channels.iter().enumerate() {
            let last = i + 1 == channels.len();
            let spec = ConvSpec {
                kernel: 5,
                stride: if last { 1 } else { 3 },
                dilation: 1,
                groups: 1,
                padding: Some(2),
            };
            convs.push(Conv1d::kaiming(&mut pb.pp(format!("conv{i}")), c_in, c, spec)?);
            c_in = c;
        }
        let post = Conv1d::kaiming(&mut pb.pp("post"), c_in, 1, ConvSpec::same(3, 1))?;
        Ok(Self { period, convs, post })
    }

    fn forward(&self, wave: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        run_stack(&self.convs, &self.post, fold_period(wave, self.period)?)
    }
}

#[derive(Debug, Clone)]
pub struct MultiPeriodDisc {
    subs: Vec<PeriodDisc>,
}

impl MultiPeriodDisc {
    pub fn new(pb: &mut ParamBuilder, cfg: &DiscConfig) -> Result<Self> {
        let subs = cfg
            .mpd_periods
            .iter()
            .map(|&p| PeriodDisc::new(&mut pb.pp(format!("p{p}")), p, &cfg.mpd_channels))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { subs })
    }

    pub fn forward(&self, wave: &Tensor) -> Result<DiscOutputs> {
        let mut out = DiscOutputs { scores: vec![], feats: vec![] };
        for s in &self.subs {
            let (score, feats) = s.forward(wave)?;
            out.scores.push(score);
            out.feats.push(feats);
        }
        Ok(out)
    }
}

/// Averages neighbouring pairs; odd lengths repeat the last sample, giving `ceil(N/2)`.
pub fn halve_rate(wave: &Tensor) -> Result<Tensor> {
    let (b, n) = wave.dims2()?;
    let x = if n % 2 == 1 { wave.pad_with_same(1, 0, 1)? } else { wave.clone() };
    let half = n.div_ceil(2);
    Ok(x.reshape((b, half, 2))?.mean(2)?)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone)]
struct ScaleDisc {
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl ScaleDisc {
    fn new(pb: &mut ParamBuilder, cfg: &DiscConfig) -> Result<Self> {
        let mut convs = Vec::with_capacity(cfg.msd_channels.len());
        let mut c_in = 1;
        for (i, &c) in cfg.msd_channels.iter().enumerate() {
            let k = cfg.msd_kernels[i];
            let groups = gcd(gcd(cfg.msd_groups[i].max(1), c_in), c);
            let spec = ConvSpec {
                kernel: k,
                stride: cfg.msd_strides[i],
                dilation: 1,
                groups,
                padding: Some((k - 1) / 2),
            };
            convs.push(Conv1d::kaiming(&mut pb.pp(format!("conv{i}")), c_in, c, spec)?);
            c_in = c;
        }
        let post = Conv1d::kaiming(&mut pb.pp("post"), c_in, 1, ConvSpec::same(3, 1))?;
        Ok(Self { convs, post })
    }
}

#[derive(Debug, Clone)]
pub struct MultiScaleDisc {
    subs: Vec<ScaleDisc>,
}

impl MultiScaleDisc {
    pub fn new(pb: &mut ParamBuilder, cfg: &DiscConfig) -> Result<Self> {
        let subs = (0..cfg.msd_scales)
            .map(|i| ScaleDisc::new(&mut pb.pp(format!("s{i}")), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { subs })
    }

    pub fn forward(&self, wave: &Tensor) -> Result<DiscOutputs> {
        let mut out = DiscOutputs { scores: vec![], feats: vec![] };
        let mut x = wave.clone();
        for (i, s) in self.subs.iter().enumerate() {
            if i > 0 {
                x = halve_rate(&x)?;
            }
            let (score, feats) = run_stack(&s.convs, &s.post, x.unsqueeze(1)?)?;
            out.scores.push(score);
            out.feats.push(feats);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Discriminators {
    pub mpd: MultiPeriodDisc,
    pub msd: MultiScaleDisc,
}

impl Discriminators {
    pub fn new(pb: &mut ParamBuilder, cfg: &DiscConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            mpd: MultiPeriodDisc::new(&mut pb.pp("mpd"), cfg)?,
            msd: MultiScaleDisc::new(&mut pb.pp("msd"), cfg)?,
        })
    }

    /// `wave` is `(batch, samples)`.
    pub fn forward(&self, wave: &Tensor) -> Result<DiscOutputs> {
        if wave.dims2()?.1 == 0 {
            return Err(Error::EmptyInput("discriminator waveform"));
        }
        let mut out = self.mpd.forward(wave)?;
        out.extend(self.msd.forward(wave)?);
        Ok(out)
    }
}
