//! Snake and speaker-adaptive Snake activations.
//!
//! `snake(x) = x + sin^2(alpha x) / beta`, applied per channel. The adaptive
//! variant shifts both the frequency and the magnitude by a conditioning
//! vector `t = tanh(W s + b)` derived from a speaker vector `s`:
//!
//! ```text
//! f(x, s) = x + sin^2((alpha + t) x) / (beta + t / 2)
//! ```
//!
//! Everything in this module is plain `f64` arithmetic with closed-form
//! gradients; the tensor kernels used by the generator are checked against it.

use crate::error::{Error, Result};

/// Magnitude floor applied to the Snake divisor.
pub const DIVISOR_FLOOR: f64 = 1e-9;

/// Mean-pooled prompt features used to condition the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVector(Vec<f32>);

impl SpeakerVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("speaker vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("speaker vector".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// Per-channel Snake parameters. With `log_scale` the stored values are
/// `ln(alpha)` and `ln(beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnakeParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub log_scale: bool,
}

impl SnakeParams {
    /// alpha = beta = 1 on every channel.
    pub fn identity_init(channels: usize) -> Self {
        Self {
            alpha: vec![0.0; channels],
            beta: vec![0.0; channels],
            log_scale: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha_at(&self, c: usize) -> f64 {
        if self.log_scale {
            self.alpha[c].exp()
        } else {
            self.alpha[c]
        }
    }

    pub fn beta_at(&self, c: usize) -> f64 {
        if self.log_scale {
            self.beta[c].exp()
        } else {
            self.beta[c]
        }
    }
}

/// Snake parameters plus the conditioning map `W` (channels x d, row-major) and bias `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSnakeParams {
    pub base: SnakeParams,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub cond_dim: usize,
}

impl AdaptiveSnakeParams {
    /// Zero conditioning: starts out exactly as plain Snake.
    pub fn zero_init(channels: usize, cond_dim: usize) -> Self {
        Self {
            base: SnakeParams::identity_init(channels),
            weight: vec![0.0; channels * cond_dim],
            bias: vec![0.0; channels],
            cond_dim,
        }
    }

    pub fn channels(&self) -> usize {
        self.base.channels()
    }
}

#[inline]
pub fn snake_scalar(x: f64, alpha: f64, beta: f64) -> f64 {
    let s = (alpha * x).sin();
    x + s * s / beta.max(DIVISOR_FLOOR)
}

/// Replaces divisors smaller than the floor in magnitude by `+-floor`, keeping the sign.
#[inline]
pub fn clamp_divisor(d: f64) -> f64 {
    if d.abs() >= DIVISOR_FLOOR {
        d
    } else if d < 0.0 {
        -DIVISOR_FLOOR
    } else {
        DIVISOR_FLOOR
    }
}

#[inline]
pub fn adaptive_snake_scalar(x: f64, alpha: f64, beta: f64, t: f64) -> f64 {
    let s = ((alpha + t) * x).sin();
    x + s * s / clamp_divisor(beta + 0.5 * t)
}

/// Partial derivatives of [`adaptive_snake_scalar`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarGrad {
    pub dx: f64,
    pub dalpha: f64,
    pub dbeta: f64,
    pub dt: f64,
}

pub fn adaptive_snake_scalar_grad(x: f64, alpha: f64, beta: f64, t: f64) -> ScalarGrad {
    let freq = alpha + t;
    let raw = beta + 0.5 * t;
    let d = clamp_divisor(raw);
    let (s, c) = (freq * x).sin_cos();
    let s2 = s * s;
    let sin2 = 2.0 * s * c;
    // Inside the clamp the divisor is constant.
    let dd = if raw.abs() >= DIVISOR_FLOOR { 1.0 } else { 0.0 };
    let dfreq = x * sin2 / d;
    let dmag = -s2 / (d * d) * dd;
    ScalarGrad {
        dx: 1.0 + freq * sin2 / d,
        dalpha: dfreq,
        dbeta: dmag,
        dt: dfreq + 0.5 * dmag,
    }
}

fn check_layout(x: &[f64], channels: usize) -> Result<usize> {
    if channels == 0 || x.len() % channels != 0 {
        return Err(Error::Dim(format!(
            "{} samples do not split into {channels} channels",
            x.len()
        )));
    }
    Ok(x.len() / channels)
}

/// Plain Snake on a row-major `channels x time` buffer.
pub fn snake(x: &[f64], p: &SnakeParams) -> Result<Vec<f64>> {
    let t = check_layout(x, p.channels())?;
    Ok(x.chunks(t.max(1))
        .enumerate()
        .flat_map(|(c, row)| {
            let (a, b) = (p.alpha_at(c), p.beta_at(c));
            row.iter().map(move |&v| snake_scalar(v, a, b))
        })
        .collect())
}

/// `tanh(W s + b)`, one value per channel.
pub fn condition_transform(s: &[f64], weight: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let channels = bias.len();
    if weight.len() != channels * s.len() || s.is_empty() {
        return Err(Error::Dim(format!(
            "conditioning map has {} weights for {} channels and a {}-dim speaker vector",
            weight.len(),
            channels,
            s.len()
        )));
    }
    Ok(weight
        .chunks(s.len())
        .zip(bias)
        .map(|(row, b)| (row.iter().zip(s).map(|(w, v)| w * v).sum::<f64>() + b).tanh())
        .collect())
}

/// Adaptive Snake on a row-major `channels x time` buffer.
pub fn adaptive_snake(x: &[f64], s: &[f64], p: &AdaptiveSnakeParams) -> Result<Vec<f64>> {
    if s.len() != p.cond_dim {
        return Err(Error::Dim(format!(
            "speaker vector has dim {}, expected {}",
            s.len(),
            p.cond_dim
        )));
    }
    let t_len = check_layout(x, p.channels())?;
    let t = condition_transform(s, &p.weight, &p.bias)?;
    Ok(x.chunks(t_len.max(1))
        .enumerate()
        .flat_map(|(c, row)| {
            let (a, b, tc) = (p.base.alpha_at(c), p.base.beta_at(c), t[c]);
            row.iter().map(move |&v| adaptive_snake_scalar(v, a, b, tc))
        })
        .collect())
}

/// Gradients of `sum(grad_out * adaptive_snake(x, s, p))` with respect to every input.
/// Parameter gradients are with respect to the stored values (log scale if enabled).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSnakeGrads {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn adaptive_snake_vjp(
    x: &[f64],
    s: &[f64],
    p: &AdaptiveSnakeParams,
    grad_out: &[f64],
) -> Result<AdaptiveSnakeGrads> {
    if grad_out.len() != x.len() {
        return Err(Error::Dim("gradient and input lengths differ".into()));
    }
    if s.len() != p.cond_dim {
        return Err(Error::Dim(format!(
            "speaker vector has dim {}, expected {}",
            s.len(),
            p.cond_dim
        )));
    }
    let channels = p.channels();
    let t_len = check_layout(x, channels)?;
    let t = condition_transform(s, &p.weight, &p.bias)?;
    let mut g = AdaptiveSnakeGrads {
        x: vec![0.0; x.len()],
        s: vec![0.0; s.len()],
        alpha: vec![0.0; channels],
        beta: vec![0.0; channels],
        weight: vec![0.0; p.weight.len()],
        bias: vec![0.0; channels],
    };
    for c in 0..channels {
        let (a, b, tc) = (p.base.alpha_at(c), p.base.beta_at(c), t[c]);
        let mut dt = 0.0;
        for i in c * t_len..(c + 1) * t_len {
            let sg = adaptive_snake_scalar_grad(x[i], a, b, tc);
            g.x[i] = grad_out[i] * sg.dx;
            g.alpha[c] += grad_out[i] * sg.dalpha;
            g.beta[c] += grad_out[i] * sg.dbeta;
            dt += grad_out[i] * sg.dt;
        }
        if p.base.log_scale {
            g.alpha[c] *= a;
            g.beta[c] *= b;
        }
        let dz = dt * (1.0 - tc * tc);
        g.bias[c] = dz;
        for (j, sj) in s.iter().enumerate() {
            g.weight[c * p.cond_dim + j] = dz * sj;
            g.s[j] += dz * p.weight[c * p.cond_dim + j];
        }
    }
    Ok(g)
}
