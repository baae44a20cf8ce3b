//! Self-describing binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "CAVECKPT"
//! version      u32       FORMAT_VERSION
//! kind         str       model kind tag
//! seed         u64
//! epochs       u32
//! config_hash  u64       FNV-1a over the metadata entries
//! n_meta       u32       then n_meta × (key: str, value: str)
//! n_blocks     u32       then n_blocks × block
//! block        name: str, rank: u32, dims: rank × u64, payload: f64 × Π dims
//! str          u32 byte length followed by UTF-8 bytes
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CAVECKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub tensor: Tensor,
}

impl Block {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub seed: u64,
    pub epochs: u32,
    pub config_hash: u64,
    pub meta: Vec<(String, String)>,
    pub blocks: Vec<Block>,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Checkpoint {
    pub fn new(kind: &str, seed: u64, epochs: u32, meta: Vec<(String, String)>, blocks: Vec<Block>) -> Self {
        let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        Self {
            kind: kind.to_string(),
            seed,
            epochs,
            config_hash: fnv1a(text.as_bytes()),
            meta,
            blocks,
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint `{}` lacks `{key}`", self.kind)))?;
        raw.parse()
            .map_err(|_| Error::InvalidArgument(format!("checkpoint `{}`: bad value for `{key}`: {raw}", self.kind)))
    }

    pub fn block(&self, name: &str) -> Result<&Tensor> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| &b.tensor)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint `{}` lacks block `{name}`", self.kind)))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epochs.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            put_str(&mut out, &b.name);
            out.extend_from_slice(&(b.tensor.shape().len() as u32).to_le_bytes());
            for &d in b.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in b.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let kind = r.string()?;
        let seed = r.u64()?;
        let epochs = r.u32()?;
        let config_hash = r.u64()?;
        let n_meta = r.u32()?;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            meta.push((r.string()?, r.string()?));
        }
        let n_blocks = r.u32()?;
        let mut blocks = Vec::new();
        for _ in 0..n_blocks {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::format(path, "checkpoint", "block too large"))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let tensor = Tensor::new(dims, data).map_err(|e| Error::format(path, "checkpoint", e.to_string()))?;
            blocks.push(Block { name, tensor });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "checkpoint", "trailing bytes"));
        }
        Ok(Self {
            kind,
            seed,
            epochs,
            config_hash,
            meta,
            blocks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(self.path, "checkpoint", "invalid UTF-8"))
    }
}
