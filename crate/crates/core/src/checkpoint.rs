//! Named f32 tensors plus string metadata in a safetensors file.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};

pub const SCHEMA: &str = "promptvoc-checkpoint/1";

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub tensors: BTreeMap<String, ArchiveTensor>,
    pub meta: BTreeMap<String, String>,
}

fn fmt_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("checkpoint: {e}"))
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Dim(format!("{name}: shape {shape:?} for {} values", data.len())));
        }
        self.tensors.insert(name, ArchiveTensor { shape, data });
        Ok(())
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: &Tensor) -> Result<()> {
        let data = t.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?;
        self.insert(name, t.dims().to_vec(), data)
    }

    /// Stores every tensor of `map` under `prefix`.
    pub fn insert_all(&mut self, prefix: &str, map: &BTreeMap<String, Tensor>) -> Result<()> {
        for (k, t) in map {
            self.insert_tensor(format!("{prefix}{k}"), t)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ArchiveTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
    }

    pub fn tensor(&self, name: &str, device: &Device) -> Result<Tensor> {
        let a = self.get(name)?;
        Ok(Tensor::from_vec(a.data.clone(), a.shape.clone(), device)?)
    }

    /// Tensors whose names start with `prefix`, keyed by the remainder.
    pub fn with_prefix(&self, prefix: &str, device: &Device) -> Result<BTreeMap<String, Tensor>> {
        self.tensors
            .iter()
            .filter_map(|(k, a)| k.strip_prefix(prefix).map(|rest| (rest.to_string(), a)))
            .map(|(k, a)| Ok((k, Tensor::from_vec(a.data.clone(), a.shape.clone(), device)?)))
            .collect()
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks metadata {key}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = self
            .tensors
            .iter()
            .map(|(k, a)| (k.clone(), a.data.iter().flat_map(|v| v.to_le_bytes()).collect(), a.shape.clone()))
            .collect();
        let views = bytes
            .iter()
            .map(|(k, b, s)| Ok((k.clone(), TensorView::new(Dtype::F32, s.clone(), b).map_err(fmt_err)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut meta: HashMap<String, String> = self.meta.clone().into_iter().collect();
        meta.insert("schema".into(), SCHEMA.into());
        safetensors::serialize(views, Some(meta)).map_err(fmt_err)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let st = SafeTensors::deserialize(buf).map_err(fmt_err)?;
        let (_, header) = SafeTensors::read_metadata(buf).map_err(fmt_err)?;
        let meta: BTreeMap<String, String> = header.metadata().clone().unwrap_or_default().into_iter().collect();
        match meta.get("schema") {
            Some(s) if s == SCHEMA => {}
            other => return Err(Error::Format(format!("checkpoint schema {other:?}, expected {SCHEMA}"))),
        }
        let mut out = Archive { tensors: BTreeMap::new(), meta };
        out.meta.remove("schema");
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(Error::Format(format!("tensor {name} is {:?}, expected F32", view.dtype())));
            }
            let data = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.tensors.insert(name, ArchiveTensor { shape: view.shape().to_vec(), data });
        }
        Ok(out)
    }

    /// Writes to a sibling temporary file first so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::Missing(format!("checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut a = Archive::new();
        a.insert("w", vec![2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 1e-40]).unwrap();
        a.insert("b", vec![0], vec![]).unwrap();
        a.meta.insert("step".into(), "7".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.safetensors");
        a.save(&p).unwrap();
        let b = Archive::load(&p).unwrap();
        assert_eq!(a.meta, b.meta);
        for (k, t) in &a.tensors {
            let u = &b.tensors[k];
            assert_eq!(t.shape, u.shape);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&t.data), bits(&u.data));
        }
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        assert!(matches!(Archive::from_bytes(b"garbage"), Err(Error::Format(_))));
        assert!(a_shape_mismatch().is_err());
    }

    fn a_shape_mismatch() -> Result<()> {
        Archive::new().insert("x", vec![3], vec![1.0])
    }
}
