//! Binary checkpoint: `"KDST1"` followed by records of
//! `u32 name_len | name (UTF-8) | u32 rank | u32 dims[rank] | f32 payload`,
//! all little-endian, until end of file.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{ParamStore, Tensor};

pub const MAGIC: &[u8; 5] = b"KDST1";

pub fn encode<'a>(records: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(n * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    let bytes = encode(store.iter());
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Overwrites every parameter of `store` from records with matching names and shapes.
pub fn load_into(store: &mut ParamStore, records: &[(String, Tensor)]) -> Result<()> {
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let (_, t) = records
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        let dst = store.get_mut(id);
        if dst.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} in file, {:?} in model",
                t.shape(),
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

pub const MATRIX_MAGIC: &[u8; 4] = b"KDMX";

/// Bytes of the header written by [`save_matrix`].
pub const MATRIX_HEADER: usize = 12;

/// A rank-2 tensor as `"KDMX" | u32 rows | u32 cols | f32 payload` (little-endian).
pub fn save_matrix(path: &Path, t: &Tensor) -> Result<()> {
    let (rows, cols) = t.dims2()?;
    let mut out = Vec::with_capacity(MATRIX_HEADER + t.len() * 4);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MATRIX_HEADER || &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a matrix file", path.display())));
    }
    let mut r = Reader { buf: &bytes, pos: 4 };
    let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
    let payload = r.take(rows * cols * 4)?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{}: trailing bytes", path.display())));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&[rows, cols], data)
}
