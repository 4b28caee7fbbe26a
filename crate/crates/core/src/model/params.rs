//! Named parameter arrays, seeded initialization, and the checkpoint
//! container.
//!
//! Checkpoint layout (little-endian, versioned):
//!
//! ```text
//! magic   8 bytes  "MVLMCKPT"
//! u32     format version (1)
//! u32     meta length, then meta JSON ({"model": ModelConfig, "extra": {…}})
//! u32     array count
//! per array:
//!   u16   name length, then name bytes (UTF-8)
//!   u32   rows, u32 cols
//!   f64[] rows*cols values, little-endian
//! ```
//!
//! Serialization is bit-exact: save -> load -> save reproduces the same
//! bytes, and the SHA-256 of the container serves as the checkpoint digest.

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

const MAGIC: &[u8; 8] = b"MVLMCKPT";
const FORMAT_VERSION: u32 = 1;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    #[serde(default)]
    extra: HashMap<String, String>,
}

/// The full set of model parameters in declaration order.
#[derive(Debug, Clone)]
pub struct Parameters {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
    extra: HashMap<String, String>,
}

impl Parameters {
    /// Seeded Gaussian init (std 0.02) for weights and embeddings; biases and
    /// layer-norm shifts start at zero, layer-norm scales at one.
    pub fn init(config: &ModelConfig) -> Result<Parameters> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let shapes = config.param_shapes();
        let mut names = Vec::with_capacity(shapes.len());
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, rows, cols) in shapes {
            let t = if name.ends_with(".g") {
                Tensor::from_vec(rows, cols, vec![1.0; rows * cols])
            } else if is_bias(&name) {
                Tensor::zeros(rows, cols)
            } else {
                let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
                Tensor::from_vec(rows, cols, data)
            };
            names.push(name);
            tensors.push(t);
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(Parameters {
            config: config.clone(),
            names,
            tensors,
            index,
            extra: HashMap::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn idx(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.idx(name)]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    pub fn set_extra(&mut self, key: &str, value: &str) {
        self.extra.insert(key.to_string(), value.to_string());
    }

    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extra.get(key).map(|s| s.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = CheckpointMeta {
            model: self.config.clone(),
            extra: self.extra.clone(),
        };
        let meta_json = serde_json::to_vec(&meta).expect("meta serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta_json);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols as u32).to_le_bytes());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Parameters> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        meta.model.validate()?;
        let n = r.u32()? as usize;
        let expected = meta.model.param_shapes();
        if n != expected.len() {
            return Err(Error::Checkpoint(format!(
                "array count {n} does not match config ({} expected)",
                expected.len()
            )));
        }
        let mut names = Vec::with_capacity(n);
        let mut tensors = Vec::with_capacity(n);
        for (exp_name, exp_r, exp_c) in expected {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("non-utf8 array name".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            if name != exp_name || rows != exp_r || cols != exp_c {
                return Err(Error::Checkpoint(format!(
                    "array {name} ({rows}x{cols}) does not match expected {exp_name} ({exp_r}x{exp_c})"
                )));
            }
            let raw = r.take(rows * cols * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            names.push(name);
            tensors.push(Tensor::from_vec(rows, cols, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(Parameters {
            config: meta.model,
            names,
            tensors,
            index,
            extra: meta.extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Parameters> {
        Parameters::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized container, hex-encoded.
    pub fn digest(&self) -> String {
        crate::util::sha256_hex(&self.to_bytes())
    }
}

fn is_bias(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or("");
    matches!(last, "b" | "b1" | "b2" | "bq" | "bk" | "bv" | "bo")
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
