//! Least-squares adversarial losses, feature matching and mel L1.

use candle_core::Tensor;

use crate::dsp::mel::MelFrames;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub adv: f64,
    pub feat_match: f64,
    pub mel: f64,
    pub aux_mel: f64,
    pub aux_warmup_steps: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 1.0,
            feat_match: 2.0,
            mel: 45.0,
            aux_mel: 60.0,
            aux_warmup_steps: 2000,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("adv", self.adv),
            ("feat_match", self.feat_match),
            ("mel", self.mel),
            ("aux_mel", self.aux_mel),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Auxiliary mel weight: active strictly before the warmup boundary.
pub fn aux_weight(step: u64, w: &LossWeights) -> f64 {
    if step < w.aux_warmup_steps {
        w.aux_mel
    } else {
        0.0
    }
}

fn scalar_sum(terms: Vec<Tensor>) -> Result<Tensor> {
    let mut it = terms.into_iter();
    let first = it.next().ok_or(Error::EmptyInput("loss terms"))?;
    it.try_fold(first, |acc, t| Ok((acc + t)?))
}

fn check_pair(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dim(format!("{what}: shapes {:?} and {:?} differ", a.dims(), b.dims())));
    }
    Ok(())
}

/// `sum_k mean((real_k - 1)^2) + mean(fake_k^2)`.
pub fn lsgan_d_loss(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(Error::Dim(format!("{} real vs {} fake score maps", real.len(), fake.len())));
    }
    let terms = real
        .iter()
        .zip(fake)
        .map(|(r, f)| {
            let lr = r.affine(1.0, -1.0)?.sqr()?.mean_all()?;
            let lf = f.sqr()?.mean_all()?;
            Ok((lr + lf)?)
        })
        .collect::<Result<Vec<_>>>()?;
    scalar_sum(terms)
}

/// `sum_k mean((fake_k - 1)^2)`.
pub fn lsgan_g_loss(fake: &[Tensor]) -> Result<Tensor> {
    let terms = fake
        .iter()
        .map(|f| Ok(f.affine(1.0, -1.0)?.sqr()?.mean_all()?))
        .collect::<Result<Vec<_>>>()?;
    scalar_sum(terms)
}

/// Per layer mean |real - fake|, averaged over layers, summed over sub-discriminators.
/// Real features are treated as constants.
pub fn feature_matching_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(Error::Dim(format!("{} real vs {} fake feature lists", real.len(), fake.len())));
    }
    let mut terms = Vec::with_capacity(real.len());
    for (rs, fs) in real.iter().zip(fake) {
        if rs.len() != fs.len() || rs.is_empty() {
            return Err(Error::Dim(format!("{} real vs {} fake feature layers", rs.len(), fs.len())));
        }
        let mut layer_terms = Vec::with_capacity(rs.len());
        for (r, f) in rs.iter().zip(fs) {
            check_pair(r, f, "feature matching")?;
            layer_terms.push((r.detach() - f)?.abs()?.mean_all()?);
        }
        terms.push(scalar_sum(layer_terms)?.affine(1.0 / rs.len() as f64, 0.0)?);
    }
    scalar_sum(terms)
}

/// Mean absolute difference of two equally shaped mel tensors.
pub fn mel_l1(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_pair(pred, target, "mel L1")?;
    Ok((pred - target)?.abs()?.mean_all()?)
}

pub fn mel_l1_frames(pred: &MelFrames, target: &MelFrames) -> Result<f64> {
    if pred.n_frames() != target.n_frames() || pred.n_mels() != target.n_mels() {
        return Err(Error::Dim(format!(
            "mel shapes {}x{} and {}x{} differ",
            pred.n_frames(),
            pred.n_mels(),
            target.n_frames(),
            target.n_mels()
        )));
    }
    let n = pred.values().len().max(1) as f64;
    Ok(pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum::<f64>()
        / n)
}
