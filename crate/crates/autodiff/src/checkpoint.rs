//! Flat binary tensor container.
//!
//! Layout: magic `EMOC`, `u32` format version, `u32` record count, then
//! exactly that many records and nothing after them. Each record is `u32` name length, UTF-8 name, `u32` rank, `rank` x `u64` dims,
//! and the payload as little-endian `f64`.

use std::fs;
use std::path::Path;

use crate::error::{AutodiffError, Result};
use crate::params::Module;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EMOC";
pub const FORMAT_VERSION: u32 = 2;

pub fn encode(records: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
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
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(AutodiffError::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = r.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| AutodiffError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(
            n.checked_mul(8)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("tensor {name} is too large")))?,
            "payload",
        )?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| AutodiffError::Checkpoint(format!("tensor {name}: {e}")))?;
        records.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(AutodiffError::Checkpoint(format!(
            "{} trailing bytes after the last record",
            bytes.len() - r.pos
        )));
    }
    Ok(records)
}

pub fn write(path: &Path, records: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode(records)).map_err(|source| AutodiffError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|source| AutodiffError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

pub fn save_module(path: &Path, module: &dyn Module) -> Result<()> {
    write(path, &module.named_params())
}

/// Copies records into `module`, requiring identical names, order and shapes.
pub fn load_into(module: &mut dyn Module, records: &[(String, Tensor)]) -> Result<()> {
    let expected = module.named_params();
    if expected.len() != records.len() {
        return Err(AutodiffError::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            records.len(),
            expected.len()
        )));
    }
    for ((en, et), (rn, rt)) in expected.iter().zip(records) {
        if en != rn || et.shape() != rt.shape() {
            return Err(AutodiffError::Checkpoint(format!(
                "expected {en} {:?}, found {rn} {:?}",
                et.shape(),
                rt.shape()
            )));
        }
    }
    let mut idx = 0;
    module.visit_mut("", &mut |_, t| {
        *t = records[idx].1.clone();
        idx += 1;
    });
    Ok(())
}
