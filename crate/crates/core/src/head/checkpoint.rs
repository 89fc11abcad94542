//! Head checkpoints.
//!
//! ```text
//! b"VLHEAD\0\0"                       magic
//! version: u32 (= 1), tensors: u32 (= 4)
//! per tensor: name_len: u32, name bytes, rows: u64, cols: u64
//! payload: each tensor's f64 values, row-major, in table order
//! checksum: SHA-256 of everything above
//! ```
//!
//! Tensors are `w_proj` (D x H), `b_proj` (1 x H), `w_cls` (H x V),
//! `b_cls` (1 x V). Integers and floats are little-endian.

use std::path::Path;

use super::HeadParams;
use crate::error::{Error, Result};
use crate::io::{self, Reader};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VLHEAD\0\0";
const VERSION: u32 = 1;
const NAMES: [&str; 4] = ["w_proj", "b_proj", "w_cls", "b_cls"];

fn shapes(p: &HeadParams) -> [(usize, usize); 4] {
    let (d, h, v) = (p.input_dim(), p.hidden_dim(), p.num_classes());
    [(d, h), (1, h), (h, v), (1, v)]
}

pub fn write_checkpoint(params: &HeadParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(NAMES.len() as u32).to_le_bytes());
    for (name, (r, c)) in NAMES.iter().zip(shapes(params)) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(r as u64).to_le_bytes());
        buf.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for v in params.to_flat() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let sum = io::checksum(&buf);
    buf.extend_from_slice(&sum);
    buf
}

/// Decode a checkpoint. With `expect = Some((D, H, V))` the shape table must match.
pub fn read_checkpoint(bytes: &[u8], expect: Option<(usize, usize, usize)>) -> Result<HeadParams> {
    let body = io::verify_trailing_checksum(bytes)?;
    let mut r = Reader::new(body);
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a head checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    if r.u32()? as usize != NAMES.len() {
        return Err(Error::Format("unexpected tensor count".into()));
    }
    let mut table = Vec::with_capacity(NAMES.len());
    for expected in NAMES {
        let len = r.u32()? as usize;
        let name = r.take(len)?;
        if name != expected.as_bytes() {
            return Err(Error::Format(format!("expected tensor `{expected}`")));
        }
        table.push((r.u64()? as usize, r.u64()? as usize));
    }
    let (d, h) = table[0];
    let v = table[2].1;
    if table != [(d, h), (1, h), (h, v), (1, v)] {
        return Err(Error::Format(format!("inconsistent shape table {table:?}")));
    }
    if let Some(exp) = expect {
        if exp != (d, h, v) {
            return Err(Error::Shape(format!("checkpoint is {:?}, expected {exp:?}", (d, h, v))));
        }
    }
    let n = d * h + h + h * v + v;
    let flat = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if !r.is_done() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    HeadParams::from_flat(d, h, v, &flat)
}

pub fn save_checkpoint(params: &HeadParams, path: &Path) -> Result<()> {
    io::write_bytes_atomic(path, &write_checkpoint(params))
}

pub fn load_checkpoint(path: &Path, expect: Option<(usize, usize, usize)>) -> Result<HeadParams> {
    read_checkpoint(&io::read_bytes(path)?, expect)
}
