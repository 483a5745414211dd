//! `SPNT` parameter container.
//!
//! Layout, all integers little-endian: magic `SPNT`, `u32` version, then per
//! tensor `u32` name length, UTF-8 name, `u32` rank, `u64` extents, and the
//! values as `f64`. Buffers and trainable tensors are stored alike; a
//! leading `u8` flag per record keeps them apart on load.

use std::io::{Read, Write};

use crate::error::{CoreError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPNT";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in store.iter() {
        let trainable = store.is_trainable(name).expect("name from iter");
        out.push(u8::from(trainable));
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CoreError::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(CoreError::Checkpoint("bad magic".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(CoreError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut store = ParamStore::new();
    while c.pos < bytes.len() {
        let trainable = c.take(1, "record flag")?[0] != 0;
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| CoreError::Checkpoint("name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank).map(|_| c.u64("extent").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(8).ok_or_else(|| CoreError::Checkpoint("size overflow".into()))?, "values")?;
        let data = raw.chunks_exact(8).map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap()))).collect();
        let t = Tensor::new(&shape, data).map_err(|e| CoreError::Checkpoint(format!("{name}: {e}")))?;
        if trainable {
            store.add(&name, t)?;
        } else {
            store.add_buffer(&name, t)?;
        }
    }
    Ok(store)
}

pub fn write<T: Scalar, W: Write>(store: &ParamStore<T>, mut w: W) -> std::io::Result<()> {
    w.write_all(&encode(store))
}

pub fn read<T: Scalar, R: Read>(mut r: R) -> Result<ParamStore<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
    decode(&buf)
}

/// Copies values of `src` into `dst` by name; shapes must agree.
pub fn restore_into<T: Scalar>(dst: &mut ParamStore<T>, src: &ParamStore<T>) -> Result<()> {
    for (name, t) in src.iter() {
        let target = dst.get_mut(name)?;
        if target.shape() != t.shape() {
            return Err(CoreError::Shape { op: "restore", left: target.shape().to_vec(), right: t.shape().to_vec() });
        }
        target.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}
