//! Embedding sidecar files.
//!
//! Text (`EMB v1`):
//!
//! ```text
//! EMB v1 <N> <D> <normalized:0|1>
//! <id>\t<f64>,<f64>,...      (N lines, D values each)
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so save/load is
//! bit-exact.
//!
//! Binary (`EMBB v1`), all integers and floats little-endian:
//!
//! ```text
//! b"EMBB v1\n"                    8 bytes
//! N: u64, D: u64, normalized: u64 (0 or 1)
//! offsets: (N + 1) x u64          byte offsets of each id in the id blob
//! id blob: concatenated UTF-8 ids
//! payload: N * D x f64            row-major
//! checksum: SHA-256 of everything above, 32 bytes
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::io::{self, Reader};
use crate::linalg::Matrix;

pub const TEXT_MAGIC: &str = "EMB v1";
pub const BINARY_MAGIC: &[u8; 8] = b"EMBB v1\n";

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(Error::Format(format!("id {id:?} cannot be stored in a sidecar")));
    }
    Ok(())
}

pub fn write_text<W: Write>(m: &EmbeddingMatrix, mut out: W) -> Result<()> {
    let io_err = |e| Error::io("<embeddings>", e);
    writeln!(out, "{TEXT_MAGIC} {} {} {}", m.len(), m.dim(), u8::from(m.normalized)).map_err(io_err)?;
    let mut line = String::new();
    for (id, row) in m.ids.iter().zip(m.data.rows()) {
        check_id(id)?;
        line.clear();
        line.push_str(id);
        line.push('\t');
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:?}"));
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_text<R: BufRead>(input: R, expect_dim: Option<usize>) -> Result<EmbeddingMatrix> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io("<embeddings>", e))?,
        None => return Err(Error::Format("empty embedding file".into())),
    };
    let bad_header = || Error::Format(format!("malformed header {header:?}"));
    let rest = header.strip_prefix(TEXT_MAGIC).ok_or_else(bad_header)?;
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let [n, d, flag] = fields[..] else { return Err(bad_header()) };
    let n: usize = n.parse().map_err(|_| bad_header())?;
    let d: usize = d.parse().map_err(|_| bad_header())?;
    let normalized = match flag {
        "0" => false,
        "1" => true,
        _ => return Err(bad_header()),
    };
    if let Some(expected) = expect_dim {
        if expected != d {
            return Err(Error::Dimension { expected, got: d });
        }
    }

    let mut ids = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * d);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(|e| Error::Parse { line: line_no, reason: e.to_string() })?;
        if line.is_empty() && ids.len() == n {
            continue;
        }
        let (id, vals) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse { line: line_no, reason: "expected `id<TAB>values`".into() })?;
        let before = values.len();
        for v in vals.split(',') {
            let v: f64 = v
                .parse()
                .map_err(|_| Error::Parse { line: line_no, reason: format!("bad float `{v}`") })?;
            values.push(v);
        }
        if values.len() - before != d {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected {d} values, found {}", values.len() - before),
            });
        }
        ids.push(id.to_string());
    }
    if ids.len() != n {
        return Err(Error::Format(format!("header declares {n} rows, found {}", ids.len())));
    }
    let data = Matrix::from_shape_vec((n, d), values).expect("row lengths checked");
    EmbeddingMatrix::new(ids, data, normalized)
}

pub fn write_binary<W: Write>(m: &EmbeddingMatrix, mut out: W) -> Result<()> {
    let bytes = encode_binary(m)?;
    out.write_all(&bytes).map_err(|e| Error::io("<embeddings>", e))
}

pub(crate) fn encode_binary(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(32 + 8 * (m.len() + 1) + 8 * m.data.len());
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(m.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.dim() as u64).to_le_bytes());
    buf.extend_from_slice(&u64::from(m.normalized).to_le_bytes());
    let mut offset = 0u64;
    buf.extend_from_slice(&offset.to_le_bytes());
    for id in &m.ids {
        check_id(id)?;
        offset += id.len() as u64;
        buf.extend_from_slice(&offset.to_le_bytes());
    }
    for id in &m.ids {
        buf.extend_from_slice(id.as_bytes());
    }
    for v in m.data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let sum = io::checksum(&buf);
    buf.extend_from_slice(&sum);
    Ok(buf)
}

pub fn read_binary(bytes: &[u8], expect_dim: Option<usize>) -> Result<EmbeddingMatrix> {
    let body = io::verify_trailing_checksum(bytes)?;
    let mut r = Reader::new(body);
    if r.take(8)? != BINARY_MAGIC {
        return Err(Error::Format("missing EMBB v1 magic".into()));
    }
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let normalized = match r.u64()? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad normalized flag {other}"))),
    };
    if let Some(expected) = expect_dim {
        if expected != d {
            return Err(Error::Dimension { expected, got: d });
        }
    }
    let offsets = (0..=n).map(|_| r.u64().map(|o| o as usize)).collect::<Result<Vec<_>>>()?;
    if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Format("id offsets are not monotone".into()));
    }
    let blob = r.take(offsets[n])?;
    let ids = offsets
        .windows(2)
        .map(|w| {
            std::str::from_utf8(&blob[w[0]..w[1]])
                .map(str::to_string)
                .map_err(|_| Error::Format("id is not UTF-8".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let values = (0..n * d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if !r.is_done() {
        return Err(Error::Format("trailing bytes before checksum".into()));
    }
    let data = Matrix::from_shape_vec((n, d), values).expect("length checked");
    EmbeddingMatrix::new(ids, data, normalized)
}

pub fn save_text(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    io::write_atomic(path, |w| write_text(m, w))
}

pub fn save_binary(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    io::write_bytes_atomic(path, &encode_binary(m)?)
}

/// Load either sidecar variant, sniffing the magic bytes.
pub fn load_embeddings(path: &Path, expect_dim: Option<usize>) -> Result<EmbeddingMatrix> {
    let bytes = io::read_bytes(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(&bytes, expect_dim)
    } else {
        read_text(bytes.as_slice(), expect_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingMatrix {
        let data = Matrix::from_shape_fn((3, 4), |(i, j)| ((i * 7 + j) as f64 * 0.37).sin() / 3.0);
        EmbeddingMatrix::new(vec!["a".into(), "b#1".into(), "ü".into()], data, false).unwrap()
    }

    #[test]
    fn text_roundtrip_is_bit_exact() {
        let mut m = sample();
        m.data[[0, 0]] = 1e-300;
        m.data[[1, 2]] = -0.0;
        m.data[[2, 3]] = 123456789.123456789;
        let mut buf = Vec::new();
        write_text(&m, &mut buf).unwrap();
        let back = read_text(buf.as_slice(), None).unwrap();
        assert_eq!(back.ids, m.ids);
        assert!(back.data.iter().zip(m.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let m = sample();
        let bytes = encode_binary(&m).unwrap();
        assert_eq!(read_binary(&bytes, Some(4)).unwrap(), m);
    }

    #[test]
    fn binary_detects_corruption() {
        let mut bytes = encode_binary(&sample()).unwrap();
        bytes[40] ^= 1;
        assert!(matches!(read_binary(&bytes, None), Err(Error::Checksum)));
    }

    #[test]
    fn dimension_mismatch() {
        let mut buf = Vec::new();
        write_text(&sample(), &mut buf).unwrap();
        assert!(matches!(
            read_text(buf.as_slice(), Some(256)),
            Err(Error::Dimension { expected: 256, got: 4 })
        ));
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = "EMB v1 2 2 0\nx\t1.0,2.0\nx\t3.0,4.0\n";
        assert!(matches!(read_text(text.as_bytes(), None), Err(Error::DuplicateId(id)) if id == "x"));
    }

    #[test]
    fn malformed_header_rejected() {
        for text in ["EMB v2 1 1 0\na\t1.0\n", "EMB v1 1 1\na\t1.0\n", "EMB v1 1 1 2\na\t1.0\n", ""] {
            assert!(matches!(read_text(text.as_bytes(), None), Err(Error::Format(_))), "{text:?}");
        }
    }

    #[test]
    fn row_length_checked() {
        let text = "EMB v1 1 3 0\na\t1.0,2.0\n";
        assert!(matches!(read_text(text.as_bytes(), None), Err(Error::Parse { line: 2, .. })));
    }
}
