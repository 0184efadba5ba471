//! Named, seeded parameter storage.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f32),
    Normal(f32),
    /// Uniform on `[-bound, bound]`.
    Uniform(f32),
}

/// Owns every trainable variable of one model, keyed by dotted name.
///
/// Initialization draws from a single ChaCha stream in construction order,
/// so the same seed and architecture always produce the same weights.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    device: Device,
    /// Skip random draws (used when only shapes matter, e.g. parameter counting).
    zeros_only: bool,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("num_tensors", &self.vars.len())
            .field("num_params", &self.num_params())
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: Device::Cpu,
            zeros_only: false,
        }
    }

    /// A store that allocates zero tensors without consuming randomness.
    pub fn shapes_only() -> Self {
        Self {
            zeros_only: true,
            ..Self::new(0)
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> ParamBuilder<'_> {
        ParamBuilder {
            store: self,
            prefix: String::new(),
        }
    }

    fn create(&mut self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if self.zeros_only {
            vec![0.0; n]
        } else {
            match init {
                Init::Zeros => vec![0.0; n],
                Init::Const(c) => vec![c; n],
                Init::Uniform(b) => (0..n).map(|_| self.rng.random_range(-b..=b)).collect(),
                Init::Normal(std) => (0..n).map(|_| std * standard_normal(&mut self.rng)).collect(),
            }
        };
        let t = Tensor::from_vec(data, shape, &self.device)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn num_params_with_prefix(&self, prefix: &str) -> usize {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Copies of every tensor, detached from the graph.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Overwrites every variable from `tensors`, which must cover the store exactly.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }
}

pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f32 {
    // Box-Muller; the second variate is discarded to keep the stream simple.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random::<f64>();
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

/// Scoped view that prefixes parameter names.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl ParamBuilder<'_> {
    pub fn pp(&mut self, name: impl AsRef<str>) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        ParamBuilder {
            store: self.store,
            prefix,
        }
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.create(full, shape, init)
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let build = |seed| {
            let mut s = ParamStore::new(seed);
            let mut r = s.root();
            let mut a = r.pp("a");
            let t = a.get("w", &[3, 4], Init::Normal(0.1)).unwrap();
            t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        };
        assert_eq!(build(7), build(7));
        assert_ne!(build(7), build(8));
    }

    #[test]
    fn names_are_scoped_and_unique() {
        let mut s = ParamStore::new(0);
        {
            let mut r = s.root();
            let mut blk = r.pp("blk");
            blk.pp("conv").get("weight", &[2], Init::Zeros).unwrap();
            assert!(blk.pp("conv").get("weight", &[2], Init::Zeros).is_err());
        }
        assert!(s.get("blk.conv.weight").is_some());
        assert_eq!(s.num_params(), 2);
    }
}
