//! Binary checkpoint of a [`ParamStore`] plus a JSON metadata blob.
//!
//! Layout, all integers little-endian:
//! `b"ILSLAMCK"`, `u32` version, `u64` metadata length, metadata bytes,
//! `u64` store step, `u64` tensor count, then per tensor: `u32` name length,
//! name bytes, `u64` rows, `u64` cols, `u64` steps, then `rows*cols` `f64`
//! each for value, first moment and second moment.

use std::io::{Read, Write};
use std::path::Path;

use super::params::{Param, ParamStore};
use super::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ILSLAMCK";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(store: &ParamStore, meta: &serde_json::Value) -> Vec<u8> {
    let meta = serde_json::to_vec(meta).expect("JSON values always serialize");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&store.step.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rows as u64).to_le_bytes());
        out.extend_from_slice(&(p.value.cols as u64).to_le_bytes());
        out.extend_from_slice(&p.steps.to_le_bytes());
        for t in [&p.value, &p.m, &p.v] {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Parse("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Parse("checkpoint length overflow".into()))
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Parse("checkpoint tensor too large".into()))?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Parse("checkpoint tensor too large".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::from_vec(rows, cols, data))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = c.len()?;
    let meta = serde_json::from_slice(c.take(meta_len)?)
        .map_err(|e| Error::Parse(format!("checkpoint metadata: {e}")))?;
    let step = c.u64()?;
    let count = c.len()?;
    let mut params = Vec::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Parse("checkpoint tensor name is not UTF-8".into()))?
            .to_string();
        let (rows, cols) = (c.len()?, c.len()?);
        let steps = c.u64()?;
        let value = c.tensor(rows, cols)?;
        let m = c.tensor(rows, cols)?;
        let v = c.tensor(rows, cols)?;
        params.push(Param {
            name,
            grad: Tensor::zeros(rows, cols),
            value,
            m,
            v,
            steps,
        });
    }
    if c.pos != buf.len() {
        return Err(Error::Parse("trailing bytes after checkpoint".into()));
    }
    Ok((ParamStore::from_parts(params, step), meta))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(store, meta))
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}
