//! Versioned binary container for model parameters.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CSCD" | u32 schema version | u32 block count | blocks...
//! block  = u16 name length | name (UTF-8) | u8 tag | payload
//! tag 0  = f32 tensor: u32 rank | u32 dims[rank] | f32 data[prod(dims)]
//! tag 1  = JSON text:  u32 byte length | bytes
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"CSCD";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Tensor { dims: Vec<usize>, data: Vec<f32> },
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelFile {
    pub blocks: Vec<(String, Block)>,
}

impl ModelFile {
    pub fn push_tensor(&mut self, name: &str, dims: &[usize], data: Vec<f32>) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.blocks.push((name.to_string(), Block::Tensor { dims: dims.to_vec(), data }));
    }

    pub fn push_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string(value).map_err(|e| Error::ModelFormat(e.to_string()))?;
        self.blocks.push((name.to_string(), Block::Json(text)));
        Ok(())
    }

    fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
            .ok_or_else(|| Error::ModelFormat(format!("missing block {name:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f32])> {
        match self.block(name)? {
            Block::Tensor { dims, data } => Ok((dims, data)),
            Block::Json(_) => Err(Error::ModelFormat(format!("block {name:?} is not a tensor"))),
        }
    }

    pub fn json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        match self.block(name)? {
            Block::Json(text) => serde_json::from_str(text)
                .map_err(|e| Error::ModelFormat(format!("block {name:?}: {e}"))),
            Block::Tensor { .. } => Err(Error::ModelFormat(format!("block {name:?} is not JSON"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_version(SCHEMA_VERSION)
    }

    fn to_bytes_with_version(&self, version: u32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, block) in &self.blocks {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match block {
                Block::Tensor { dims, data } => {
                    out.push(0);
                    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
                    for &d in dims {
                        out.extend_from_slice(&(d as u32).to_le_bytes());
                    }
                    for &v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Block::Json(text) => {
                    out.push(1);
                    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
                    out.extend_from_slice(text.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::ModelFormat("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != SCHEMA_VERSION {
            return Err(Error::ModelVersion { found: version, expected: SCHEMA_VERSION });
        }
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::ModelFormat("block name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let block = match tag {
                0 => {
                    let rank = r.u32()? as usize;
                    let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                    let n: usize = dims.iter().product();
                    let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::ModelFormat("tensor too large".into()))?)?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    Block::Tensor { dims, data }
                }
                1 => {
                    let len = r.u32()? as usize;
                    let text = String::from_utf8(r.take(len)?.to_vec())
                        .map_err(|_| Error::ModelFormat("JSON block is not UTF-8".into()))?;
                    Block::Json(text)
                }
                t => return Err(Error::ModelFormat(format!("unknown block tag {t}"))),
            };
            blocks.push((name, block));
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat("trailing bytes after last block".into()));
        }
        Ok(ModelFile { blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::ModelFormat(format!("truncated file at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
