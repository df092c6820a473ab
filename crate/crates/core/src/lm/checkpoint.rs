//! Checkpoint container shared by published models, user models and
//! private adapter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "IFPCKPT\0"
//! version      u32       1
//! header_len   u32
//! header       JSON      {"config": ModelConfig, "metadata": {string: string}}
//! n_tensors    u32
//! per tensor:  u32 name_len, name (UTF-8), u32 rank, rank × u64 dims,
//!              prod(dims) × f32 row-major
//! checksum     32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Metadata keys are sorted, so encoding is a pure function of the
//! contents and `encode(decode(bytes)) == bytes`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelParameters};
use crate::train::adapter::FAdapter;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"IFPCKPT\0";
const VERSION: u32 = 1;

pub const ADAPTER_A: &str = "adapter.A";
pub const ADAPTER_B: &str = "adapter.B";

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<StoredTensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    metadata: BTreeMap<String, String>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated container".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn from_params(params: &ModelParameters<f32>, metadata: BTreeMap<String, String>) -> Self {
        let tensors = params
            .named()
            .into_iter()
            .map(|(name, _, view)| StoredTensor {
                name,
                shape: view.shape().to_vec(),
                data: view.iter().copied().collect(),
            })
            .collect();
        Self { config: params.config.clone(), metadata, tensors }
    }

    pub fn from_adapter(adapter: &FAdapter<f32>, config: &ModelConfig, metadata: BTreeMap<String, String>) -> Self {
        let tensors = vec![
            StoredTensor {
                name: ADAPTER_A.into(),
                shape: adapter.a.shape().to_vec(),
                data: adapter.a.iter().copied().collect(),
            },
            StoredTensor {
                name: ADAPTER_B.into(),
                shape: adapter.b.shape().to_vec(),
                data: adapter.b.iter().copied().collect(),
            },
        ];
        Self { config: config.clone(), metadata, tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn has_tensor_prefix(&self, prefix: &str) -> bool {
        self.tensors.iter().any(|t| t.name.starts_with(prefix))
    }

    pub fn to_params(&self) -> Result<ModelParameters<f32>> {
        self.config.validate()?;
        let mut params = ModelParameters::<f32>::zeros(&self.config);
        let names = ModelParameters::<f32>::tensor_names(&self.config);
        if names.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "config implies {} tensors, container holds {}",
                names.len(),
                self.tensors.len()
            )));
        }
        for (((name, _), mut dst), stored) in names.iter().zip(params.views_mut()).zip(&self.tensors) {
            if &stored.name != name {
                return Err(Error::Format(format!("expected tensor {name}, found {}", stored.name)));
            }
            if dst.shape() != stored.shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {:?}, found {:?}",
                    dst.shape(),
                    stored.shape
                )));
            }
            let src = ArrayD::from_shape_vec(IxDyn(&stored.shape), stored.data.clone())
                .map_err(|e| Error::Format(e.to_string()))?;
            dst.assign(&src);
        }
        Ok(params)
    }

    pub fn to_adapter(&self) -> Result<FAdapter<f32>> {
        let get = |name: &str| -> Result<Array2<f32>> {
            let t = self.tensor(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            if t.shape.len() != 2 {
                return Err(Error::ShapeMismatch(format!("{name} must be a matrix")));
            }
            Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone()).map_err(|e| Error::Format(e.to_string()))
        };
        let adapter = FAdapter { a: get(ADAPTER_A)?, b: get(ADAPTER_B)? };
        adapter.check()?;
        Ok(adapter)
    }

    /// Serializes to the documented byte layout.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header { config: self.config.clone(), metadata: self.metadata.clone() })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: shape {:?} holds {} values, found {}",
                    t.name,
                    t.shape,
                    expected,
                    t.data.len()
                )));
            }
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 + 32 {
            return Err(Error::Format("container too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::ChecksumMismatch);
        }
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(StoredTensor { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after tensors".into()));
        }
        Ok(Self { config: header.config, metadata: header.metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    /// Writes with owner-only permissions (private artifacts).
    pub fn save_private(&self, path: &Path) -> Result<()> {
        write_private(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// SHA-256 of the encoded container.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.encode()?)))
    }
}

/// Creates or truncates `path` with mode 0600 on Unix.
pub fn write_private(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        f.set_permissions(fs::Permissions::from_mode(0o600))?;
    }
    f.write_all(bytes)?;
    Ok(())
}
