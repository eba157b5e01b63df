//! Checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic          8 bytes  "OHPLCKPT"
//! version        u32      1
//! arch_hash      u64      hash of the architecture descriptor
//! config_hash    u64      hash of the training config (0 = unset)
//! descriptor     u32 length + UTF-8 bytes
//! meta_count     u32
//!   key          u16 length + UTF-8 bytes
//!   value        f64
//! tensor_count   u32
//!   name         u16 length + UTF-8 bytes
//!   ndim         u32
//!   dims         u32 × ndim
//!   offset       u64      element offset into the payload
//!   len          u64      element count
//! payload        f32 × total elements, row-major per tensor
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"OHPLCKPT";
pub const VERSION: u32 = 1;

/// First 8 bytes of SHA-256, little-endian.
pub fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub descriptor: String,
    pub config_hash: u64,
    pub meta: Vec<(String, f64)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn arch_hash(&self) -> u64 {
        hash64(self.descriptor.as_bytes())
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.arch_hash().to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&(self.descriptor.len() as u32).to_le_bytes());
        out.extend_from_slice(self.descriptor.as_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            out.extend_from_slice(&(k.len() as u16).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
            offset += t.data.len() as u64;
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
        }
        let arch_hash = r.u64()?;
        let config_hash = r.u64()?;
        let dlen = r.u32()? as usize;
        let descriptor = r.string(dlen)?;
        if hash64(descriptor.as_bytes()) != arch_hash {
            return Err(Error::CorruptCheckpoint("descriptor does not match its hash".into()));
        }
        let n_meta = r.u32()? as usize;
        let mut meta = Vec::with_capacity(n_meta.min(1024));
        for _ in 0..n_meta {
            let klen = r.u16()? as usize;
            let k = r.string(klen)?;
            meta.push((k, r.f64()?));
        }
        let n_tensors = r.u32()? as usize;
        let mut dir = Vec::with_capacity(n_tensors.min(1024));
        for _ in 0..n_tensors {
            let nlen = r.u16()? as usize;
            let name = r.string(nlen)?;
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::CorruptCheckpoint(format!("tensor `{name}` has rank {ndim}")));
            }
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            let len = r.u64()? as usize;
            if shape.iter().product::<usize>() != len {
                return Err(Error::CorruptCheckpoint(format!("tensor `{name}` shape/length disagree")));
            }
            dir.push((name, shape, offset, len));
        }
        let payload = &bytes[r.pos..];
        let total: usize = dir.iter().map(|d| d.3).sum();
        if payload.len() != total * 4 {
            return Err(Error::CorruptCheckpoint(format!(
                "payload has {} bytes, directory needs {}",
                payload.len(),
                total * 4
            )));
        }
        let tensors = dir
            .into_iter()
            .map(|(name, shape, offset, len)| {
                let end = offset.checked_add(len).filter(|&e| e <= total).ok_or_else(|| {
                    Error::CorruptCheckpoint(format!("tensor `{name}` outside payload"))
                })?;
                let data = payload[offset * 4..end * 4]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                Ok(NamedTensor { name, shape, data })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint {
            descriptor,
            config_hash,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint("truncated header".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("invalid UTF-8 in header".into()))
    }
}
