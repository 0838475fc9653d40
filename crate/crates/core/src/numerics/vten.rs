//! VTEN binary tensor format.
//!
//! Layout, all little-endian: magic `VTEN`, u32 version (1), u32 ndim,
//! ndim × u32 dims, then the f32 payload in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VTEN";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.ndim() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err("missing VTEN magic".into());
    }
    let version = u32_at(bytes, 4).unwrap();
    if version != VERSION {
        return Err(format!("unsupported version {}", version));
    }
    let ndim = u32_at(bytes, 8).unwrap() as usize;
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        shape.push(u32_at(bytes, 12 + 4 * i).ok_or("truncated header")? as usize);
    }
    let start = 12 + 4 * ndim;
    let n = numel(&shape);
    let payload = bytes.get(start..).ok_or("truncated header")?;
    if payload.len() != 4 * n {
        return Err(format!("payload has {} bytes, shape {:?} needs {}", payload.len(), shape, 4 * n));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

pub fn write(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|d| Error::format(path, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0f32, -2.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"VTEN");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[2, 0, 0, 0]);
        assert_eq!(&b[12..16], &[2, 0, 0, 0]);
        assert_eq!(&b[16..20], &[1, 0, 0, 0]);
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&b[24..28], &(-2.5f32).to_le_bytes());
        assert_eq!(b.len(), 28);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"NOPE\x01\0\0\0\0\0\0\0").is_err());
        let t = Tensor::new(vec![3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let b = encode(&t);
        assert!(decode(&b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let t = Tensor::<f32>::from_fn(&dims, |i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 7.0 - 50.0);
            prop_assert_eq!(decode(&encode(&t)).unwrap(), t);
        }
    }
}
