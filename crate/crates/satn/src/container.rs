//! `SATN1` tensor container: the magic bytes, then per entry a `u32` name
//! length, the UTF-8 name, a `u32` rank, `rank` `u32` dims and the `f32`
//! values in row-major order. All integers and floats are little-endian.
//! Entries run to end of file.

use std::fs;
use std::io::Write;
use std::path::Path;

use satn_core::Tensor;

use crate::error::{Result, SatnError};

pub const MAGIC: &[u8; 5] = b"SATN1";

pub fn encode(entries: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, t) in entries {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bad = |reason: &str| SatnError::format(path, reason);
    if bytes.get(..MAGIC.len()) != Some(MAGIC) {
        return Err(bad("missing SATN1 header"));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let mut entries = Vec::new();
    while r.pos < bytes.len() {
        let truncated = || bad(&format!("truncated entry {}", entries.len()));
        let len = r.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or_else(truncated)?).map_err(|_| bad("entry name is not UTF-8"))?;
        let rank = r.u32().ok_or_else(truncated)? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Option<_>>().ok_or_else(truncated)?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(truncated)?;
        let raw = r.take(n.checked_mul(4).ok_or_else(truncated)?).ok_or_else(truncated)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| bad(&format!("entry `{name}`: {e}")))?;
        entries.push((name.to_string(), tensor));
    }
    Ok(entries)
}

/// Writes through a temporary file and rename so readers never observe a
/// partial container.
pub fn write(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| SatnError::io(&tmp, e))?;
    f.write_all(&encode(entries)).map_err(|e| SatnError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| SatnError::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = fs::read(path).map_err(|e| SatnError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let t = Tensor::new([1, 2], vec![1.5f32, -2.0]).unwrap();
        let bytes = encode(&[("w".into(), t.clone())]);
        assert_eq!(&bytes[..5], b"SATN1");
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(bytes[9], b'w');
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 4..], &(-2.0f32).to_le_bytes());
        let back = decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, vec![("w".to_string(), t)]);
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode(&[("w".into(), Tensor::new([3], vec![1.0f32; 3]).unwrap())]);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode(b"SATN0", Path::new("x")).is_err());
    }
}
