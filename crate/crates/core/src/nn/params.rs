use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NvcError, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform with variance 1/fan_in.
    Lecun { fan_in: usize },
    /// Uniform with variance 2/fan_in, for layers followed by a rectifier.
    He { fan_in: usize },
    Zeros,
    Const(f32),
    Uniform(f32, f32),
}

/// Named, seeded parameters. Names are dot-separated paths whose first
/// segment is the coding part that owns the parameter.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { vars: BTreeMap::new(), rng: ChaCha8Rng::seed_from_u64(seed), device: Device::Cpu }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> ParamPath<'_> {
        ParamPath { store: self, prefix: String::new() }
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Variables whose top-level part is one of `parts`.
    pub fn vars_in(&self, parts: &[&str]) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| parts.contains(&top_level(k)))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn count_in(&self, part: &str) -> usize {
        self.vars.iter().filter(|(k, _)| top_level(k) == part).map(|(_, v)| v.elem_count()).sum()
    }

    pub fn total(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Order-sensitive FNV-1a hash over the names and raw f32 bits of one
    /// part's parameters.
    pub fn checksum(&self, part: &str) -> Result<u64> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: &[u8]| {
            for &x in b {
                h ^= x as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (k, v) in self.vars.iter().filter(|(k, _)| top_level(k) == part) {
            eat(k.as_bytes());
            for x in v.flatten_all()?.to_vec1::<f32>()? {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        Ok(h)
    }

    pub fn save(&self, path: &Path, metadata: BTreeMap<String, String>) -> Result<()> {
        let data: Vec<(String, Vec<u8>, Vec<usize>)> = self
            .vars
            .iter()
            .map(|(k, t)| {
                let v = t.flatten_all()?.to_vec1::<f32>()?;
                let bytes = v.iter().flat_map(|x| x.to_le_bytes()).collect();
                Ok((k.clone(), bytes, t.dims().to_vec()))
            })
            .collect::<Result<_>>()?;
        let views = data
            .iter()
            .map(|(k, b, s)| {
                safetensors::tensor::TensorView::new(safetensors::Dtype::F32, s.clone(), b)
                    .map(|v| (k.as_str(), v))
                    .map_err(|e| NvcError::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: std::collections::HashMap<String, String> = metadata.into_iter().collect();
        safetensors::serialize_to_file(views, Some(meta), path).map_err(|e| NvcError::Checkpoint(e.to_string()))?;
        Ok(())
    }

    /// Overwrites every variable from a file and returns its metadata. The
    /// file must hold exactly this store's names and shapes.
    pub fn load(&mut self, path: &Path) -> Result<BTreeMap<String, String>> {
        if !path.exists() {
            return Err(NvcError::MissingCheckpoint(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| NvcError::Checkpoint(e.to_string()))?;
        let st = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| NvcError::Checkpoint(e.to_string()))?;
        let names: Vec<String> = st.names().into_iter().map(|s| s.to_string()).collect();
        if names.len() != self.vars.len() {
            return Err(NvcError::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {}",
                names.len(),
                self.vars.len()
            )));
        }
        for (k, var) in &self.vars {
            let view = st.tensor(k).map_err(|_| NvcError::Checkpoint(format!("missing tensor `{k}`")))?;
            if view.shape() != var.dims() || view.dtype() != safetensors::Dtype::F32 {
                return Err(NvcError::Checkpoint(format!("tensor `{k}` has shape {:?}", view.shape())));
            }
            let vals: Vec<f32> = view.data().chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            var.set(&Tensor::from_vec(vals, var.dims(), &self.device)?)?;
        }
        Ok(meta.metadata().clone().unwrap_or_default().into_iter().collect())
    }

    /// Copies values of every variable present in `other` under the same
    /// name and shape.
    pub fn copy_from(&self, other: &ParamStore) -> Result<usize> {
        let mut n = 0;
        for (k, v) in &self.vars {
            if let Some(o) = other.vars.get(k) {
                if o.dims() == v.dims() {
                    v.set(o.as_tensor())?;
                    n += 1;
                }
            }
        }
        Ok(n)
    }
}

fn top_level(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// A prefix inside a [`ParamStore`] used while building layers.
pub struct ParamPath<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl ParamPath<'_> {
    pub fn pp(&mut self, name: impl AsRef<str>) -> ParamPath<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        ParamPath { store: self.store, prefix }
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }

    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = format!("{}.{}", self.prefix, name);
        if self.store.vars.contains_key(&full) {
            return Err(NvcError::Checkpoint(format!("parameter `{full}` defined twice")));
        }
        let n: usize = shape.iter().product();
        let rng = &mut self.store.rng;
        let values: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(a, b) => (0..n).map(|_| rng.random_range(a..b)).collect(),
            Init::Lecun { fan_in } => {
                let bound = (3.0 / fan_in.max(1) as f32).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::He { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f32).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.store.device)?;
        let var = Var::from_tensor(&t.to_dtype(DType::F32)?)?;
        let out = var.as_tensor().clone();
        self.store.vars.insert(full, var);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(seed: u64) -> ParamStore {
        let mut s = ParamStore::new(seed);
        let mut r = s.root();
        r.pp("tcm").pp("conv").var("weight", &[4, 2, 3, 3], Init::Lecun { fan_in: 18 }).unwrap();
        r.pp("tcm").pp("conv").var("bias", &[4], Init::Zeros).unwrap();
        r.pp("intra").var("w", &[3], Init::Const(0.5)).unwrap();
        s
    }

    #[test]
    fn seeded_and_counted() {
        let (a, b, c) = (build(1), build(1), build(2));
        assert_eq!(a.checksum("tcm").unwrap(), b.checksum("tcm").unwrap());
        assert_ne!(a.checksum("tcm").unwrap(), c.checksum("tcm").unwrap());
        assert_eq!(a.count_in("tcm"), 76);
        assert_eq!(a.total(), 79);
        assert!(a.vars().contains_key("tcm.conv.weight"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        let mut r = s.root();
        r.pp("a").var("w", &[1], Init::Zeros).unwrap();
        assert!(r.pp("a").var("w", &[1], Init::Zeros).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.safetensors");
        let a = build(3);
        let meta = BTreeMap::from([("k".to_string(), "v".to_string())]);
        a.save(&p, meta.clone()).unwrap();
        let mut b = build(4);
        assert_eq!(b.load(&p).unwrap(), meta);
        assert_eq!(a.checksum("tcm").unwrap(), b.checksum("tcm").unwrap());
        assert!(matches!(b.load(&dir.path().join("none")), Err(NvcError::MissingCheckpoint(_))));
    }
}
