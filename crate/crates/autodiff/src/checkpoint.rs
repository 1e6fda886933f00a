//! Binary parameter files.
//!
//! Layout (little endian): magic `PCKP`, format version `u32`, entry count
//! `u32`, then per entry: name length `u32`, UTF-8 name, trainable flag `u8`,
//! rank `u32`, dims `u64` each, then the values as `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub trainable: bool,
    pub tensor: Tensor<f32>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), reason: reason.into() }
}

pub fn save<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let value = store.value(id);
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(store.is_trainable(id) as u8);
        buf.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for &d in value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in value.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(corrupt(self.path, "unexpected end of file"));
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

pub fn read(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let mut bytes = Vec::new();
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file).read_to_end(&mut bytes).map_err(io_err(path))?;
    let mut c = Cursor { bytes: &bytes, pos: 0, path };
    if c.take(4)? != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(corrupt(path, format!("unsupported format version {version}")));
    }
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| corrupt(path, "parameter name is not UTF-8"))?
            .to_string();
        let trainable = match c.take(1)?[0] {
            0 => false,
            1 => true,
            f => return Err(corrupt(path, format!("bad trainable flag {f} for {name}"))),
        };
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| corrupt(path, "shape overflow"))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| corrupt(path, format!("{name}: {e}")))?;
        entries.push(CheckpointEntry { name, trainable, tensor });
    }
    if c.pos != bytes.len() {
        return Err(corrupt(path, "trailing bytes after last entry"));
    }
    Ok(entries)
}

/// Overwrites the values of `store` from a file with the same names and shapes.
pub fn load_into<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let entries = read(path)?;
    if entries.len() != store.len() {
        return Err(corrupt(path, format!("{} entries, model has {}", entries.len(), store.len())));
    }
    for e in entries {
        let id = store.id(&e.name).ok_or_else(|| corrupt(path, format!("unknown parameter {}", e.name)))?;
        if store.value(id).shape() != e.tensor.shape() {
            return Err(corrupt(
                path,
                format!("{}: shape {:?}, model has {:?}", e.name, e.tensor.shape(), store.value(id).shape()),
            ));
        }
        *store.value_mut(id) = e.tensor.cast();
    }
    Ok(())
}
