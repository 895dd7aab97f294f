//! Named parameter arrays with gradient accumulators, plus the checkpoint
//! file format (manifest + raw little-endian arrays).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::array::{Dtype, Element, NdArray};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ATPCHKPT";
const FORMAT_VERSION: u32 = 1;

/// Unique-named parameter arrays. Gradients accumulate alongside with
/// matching shapes.
#[derive(Clone, Default)]
pub struct ParameterStore<E: Element> {
    params: BTreeMap<String, NdArray<E>>,
    grads: BTreeMap<String, NdArray<E>>,
}

impl<E: Element> ParameterStore<E> {
    pub fn new() -> Self {
        ParameterStore { params: BTreeMap::new(), grads: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: NdArray<E>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::invalid("ParameterStore::insert", format!("duplicate name {name}")));
        }
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&NdArray<E>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid("ParameterStore::get", format!("unknown name {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut NdArray<E>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::invalid("ParameterStore::get", format!("unknown name {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    /// Names in deterministic (sorted) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NdArray<E>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        self.grads.clear();
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: NdArray<E>) -> Result<()> {
        let p = self.get(name)?;
        if p.shape() != grad.shape() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                lhs: p.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        match self.grads.get_mut(name) {
            Some(acc) => acc.add_assign(&grad)?,
            None => {
                self.grads.insert(name.to_string(), grad);
            }
        }
        Ok(())
    }

    /// Accumulated gradient, zeros if nothing accumulated.
    pub fn grad(&self, name: &str) -> Result<NdArray<E>> {
        let p = self.get(name)?;
        Ok(match self.grads.get(name) {
            Some(g) => g.clone(),
            None => NdArray::zeros(p.shape()),
        })
    }

    pub fn scale_grads(&mut self, factor: E) {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Global L2 norm of all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        let mut acc = 0.0;
        for g in self.grads.values() {
            for v in g.data() {
                let x = v.as_f64();
                acc += x * x;
            }
        }
        acc.sqrt()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        let elem_size = match E::DTYPE {
            Dtype::F32 => 4u64,
            Dtype::F64 => 8u64,
        };
        for (name, arr) in &self.params {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: arr.shape().to_vec(),
                dtype: E::DTYPE,
                offset,
                len: arr.len() as u64,
            });
            offset += arr.len() as u64 * elem_size;
        }
        let manifest = serde_json::to_vec(&Manifest { entries })?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(manifest.len() as u64).to_le_bytes())?;
        f.write_all(&manifest)?;
        for arr in self.params.values() {
            match E::DTYPE {
                Dtype::F32 => {
                    for v in arr.data() {
                        f.write_all(&(v.as_f64() as f32).to_le_bytes())?;
                    }
                }
                Dtype::F64 => {
                    for v in arr.data() {
                        f.write_all(&v.as_f64().to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Load a checkpoint, converting dtype if it differs from `E`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let mut buf4 = [0u8; 4];
        f.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut buf8 = [0u8; 8];
        f.read_exact(&mut buf8)?;
        let manifest_len = u64::from_le_bytes(buf8) as usize;
        let mut mbytes = vec![0u8; manifest_len];
        f.read_exact(&mut mbytes)?;
        let manifest: Manifest = serde_json::from_slice(&mbytes)?;
        let mut data = Vec::new();
        f.read_to_end(&mut data)?;

        let mut store = ParameterStore::new();
        for e in &manifest.entries {
            let elem_size = match e.dtype {
                Dtype::F32 => 4usize,
                Dtype::F64 => 8usize,
            };
            let start = e.offset as usize;
            let end = start + e.len as usize * elem_size;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("entry {} out of bounds", e.name)));
            }
            let raw = &data[start..end];
            let values: Vec<E> = match e.dtype {
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| E::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                    .collect(),
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| E::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
            };
            store.insert(&e.name, NdArray::new(e.shape.clone(), values)?)?;
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: Dtype,
    offset: u64,
    len: u64,
}
