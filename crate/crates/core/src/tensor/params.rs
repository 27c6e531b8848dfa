//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian): magic `SCTG`,
//! version u32, parameter count u32, then per parameter in sorted name
//! order: name length u32, name bytes, rank u32, dims u32 each, raw f64
//! values.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Tape, Tensor, Var};
use crate::error::{Result, SctgError};

const MAGIC: &[u8; 4] = b"SCTG";
const VERSION: u32 = 1;

/// Parameters keyed by dotted name, iterated in sorted order for
/// deterministic updates and serialization.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    items: BTreeMap<String, Tensor>,
}

/// Tape handles for every parameter bound in one forward pass.
pub struct BoundParams {
    map: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.items.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.items
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.items
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.items.get(name)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.items.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.items.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.items.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.items.keys().map(String::as_str)
    }

    /// Register every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        let mut map = BTreeMap::new();
        for (name, t) in &self.items {
            map.insert(name.clone(), tape.leaf_tensor(t)?);
        }
        Ok(BoundParams { map })
    }

    /// Bind only the parameters under one name prefix; enough for
    /// decode-only passes.
    pub fn bind_prefix(&self, tape: &mut Tape, prefix: &str) -> Result<BoundParams> {
        let mut map = BTreeMap::new();
        for (name, t) in &self.items {
            if name.starts_with(prefix) {
                map.insert(name.clone(), tape.leaf_tensor(t)?);
            }
        }
        Ok(BoundParams { map })
    }

    /// Copy tape gradients back into the `grad` field of each bound
    /// parameter. Parameters untouched by the loss get zero gradients.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &BoundParams) {
        for (name, var) in bound.iter() {
            let t = self.items.get_mut(name).expect("bound name in store");
            t.grad = Some(match tape.grad(var) {
                Some(g) => g.to_vec(),
                None => vec![0.0; t.numel()],
            });
        }
    }

    pub fn zero_grads(&mut self) {
        for t in self.items.values_mut() {
            t.grad = None;
        }
    }

    /// Freeze or thaw every parameter under a name prefix. Frozen
    /// parameters take no gradients and are skipped by the optimizer.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (name, t) in self.items.iter_mut() {
            if name.starts_with(prefix) {
                t.requires_grad = trainable;
            }
        }
    }

    // ── Checkpoint io ────────────────────────────────────────────────

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.items.len() as u32).to_le_bytes())?;
        for (name, t) in &self.items {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = CountingReader::new(BufReader::new(file));

        let mut magic = [0u8; 4];
        r.read_exact_at(&mut magic)?;
        if &magic != MAGIC {
            return Err(SctgError::Format {
                offset: 0,
                msg: format!("bad magic {magic:?}, expected {MAGIC:?}"),
            });
        }
        let version = r.read_u32()?;
        if version != VERSION {
            return Err(SctgError::Format {
                offset: 4,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let count = r.read_u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = r.read_u32()? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact_at(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes).map_err(|_| SctgError::Format {
                offset: r.offset,
                msg: "parameter name is not utf-8".into(),
            })?;
            let rank = r.read_u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(r.read_f64()?);
            }
            let mut t = Tensor::new(data, &shape)?;
            t.requires_grad = true;
            store.insert(name, t);
        }
        Ok(store)
    }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    fn read_exact_at(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| SctgError::Format {
            offset: self.offset,
            msg: format!("truncated: wanted {} more bytes", buf.len()),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}
