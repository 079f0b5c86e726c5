//! Binary container for named tensors plus a JSON manifest.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "INSRTCK1"
//! u64       manifest length M
//! M bytes   manifest, UTF-8 JSON
//! u32       tensor count T
//! T times:
//!   u32       name length L
//!   L bytes   name, UTF-8
//!   u32       rank R
//!   R x u64   dims
//!   N x f64   values, row-major, N = product of dims (1 for rank 0)
//! ```
//!
//! Nothing follows the last tensor.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"INSRTCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn encode_container(manifest: &serde_json::Value, tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let manifest = serde_json::to_vec(manifest).expect("json value serializes");
    let mut out = Vec::with_capacity(
        32 + manifest.len() + tensors.iter().map(|(_, t)| t.numel() * 8 + 64).sum::<usize>(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_container(bytes: &[u8], path: &Path) -> Result<Container> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a tensor container (bad magic)"));
    }
    let mlen = r.u64()? as usize;
    let manifest = serde_json::from_slice(r.take(mlen)?)
        .map_err(|e| Error::format(path, format!("manifest: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(path, e.to_string()))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(Container { manifest, tensors })
}

pub fn write_container(
    path: &Path,
    manifest: &serde_json::Value,
    tensors: &[(&str, &Tensor)],
) -> Result<()> {
    fs::write(path, encode_container(manifest, tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, path)
}
