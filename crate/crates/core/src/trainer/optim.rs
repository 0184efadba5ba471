//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::nn::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Completed updates.
    pub t: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps: 1e-8, weight_decay, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Applies one update to every variable in `store` that received a gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let eps = self.eps as f32;
        for (name, var) in store.vars() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let g = g.flatten_all()?.to_vec1::<f32>()?;
            let mut p = var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] = p[i] * decay - step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
            var.set(&Tensor::from_vec(p, var.dims(), var.device())?)?;
        }
        Ok(())
    }

    pub fn to_archive(&self, prefix: &str, a: &mut Archive) -> Result<()> {
        for (k, m) in &self.m {
            a.insert(format!("{prefix}m.{k}"), vec![m.len()], m.clone())?;
            a.insert(format!("{prefix}v.{k}"), vec![m.len()], self.v[k].clone())?;
        }
        a.meta.insert(format!("{prefix}t"), self.t.to_string());
        Ok(())
    }

    pub fn load_archive(&mut self, prefix: &str, a: &Archive) -> Result<()> {
        self.t = a
            .meta(&format!("{prefix}t"))?
            .parse()
            .map_err(|_| Error::Format(format!("{prefix}t metadata")))?;
        self.m.clear();
        self.v.clear();
        let mp = format!("{prefix}m.");
        let vp = format!("{prefix}v.");
        for (k, t) in &a.tensors {
            if let Some(rest) = k.strip_prefix(&mp) {
                self.m.insert(rest.to_string(), t.data.clone());
            } else if let Some(rest) = k.strip_prefix(&vp) {
                self.v.insert(rest.to_string(), t.data.clone());
            }
        }
        if self.m.keys().ne(self.v.keys()) {
            return Err(Error::Format(format!("{prefix} first and second moments cover different tensors")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut store = ParamStore::new(0);
        let w = store.root().get("w", &[3], Init::Const(1.0)).unwrap();
        let target = Tensor::new(&[2f32, 0.0, 1.0], &candle_core::Device::Cpu).unwrap();
        let loss = (&w - &target).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = AdamW::new(0.8, 0.99, 0.0);
        opt.step(&store, &grads, 0.1).unwrap();
        let after = store.get("w").unwrap().as_tensor().to_vec1::<f32>().unwrap();
        assert!((after[0] - 1.1).abs() < 1e-5);
        assert!((after[1] - 0.9).abs() < 1e-5);
        // Zero gradient: Adam's update is 0/(0+eps).
        assert!((after[2] - 1.0).abs() < 1e-6);
    }
}
