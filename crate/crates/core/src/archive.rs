//! Container for named `f64` arrays with a JSON metadata header.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "DSHARCH1"
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (object, keys sorted)
//! array_count  u32
//! per array:
//!   name_len   u16
//!   name       name_len bytes of UTF-8
//!   ndim       u8
//!   dims       ndim × u64
//!   values     prod(dims) × f64
//! ```
//!
//! Arrays are written in name order, so equal contents produce equal bytes.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use ndarray::IxDyn;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"DSHARCH1";

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub header: Value,
    pub arrays: ParamSet,
}

impl Archive {
    pub fn new(header: Value, arrays: ParamSet) -> Self {
        Self { header, arrays }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let header = serde_json::to_vec(&self.header).expect("json header");
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in self.arrays.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.as_standard_layout().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::MalformedFile("bad archive magic".into()));
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        read_exact(&mut r, &mut header)?;
        let header: Value = serde_json::from_slice(&header)
            .map_err(|e| Error::MalformedFile(format!("archive header: {e}")))?;
        let count = read_u32(&mut r)?;
        let mut arrays = ParamSet::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::MalformedFile("array name is not UTF-8".into()))?;
            let mut ndim = [0u8; 1];
            read_exact(&mut r, &mut ndim)?;
            let mut dims = Vec::with_capacity(ndim[0] as usize);
            for _ in 0..ndim[0] {
                dims.push(read_u64(&mut r)? as usize);
            }
            let n: usize = dims.iter().product();
            if n.saturating_mul(8) > bytes.len() {
                return Err(Error::MalformedFile(format!("array {name} is truncated")));
            }
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            let t = Tensor::from_shape_vec(IxDyn(&dims), values).expect("dims match count");
            arrays.insert(name, t);
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::MalformedFile("trailing bytes after archive".into()));
        }
        Ok(Self { header, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_exact(r: &mut Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::MalformedFile("unexpected end of archive".into()))
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
