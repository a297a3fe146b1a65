//! "PTEN v1" binary tensor files.
//!
//! Layout (little-endian):
//! - magic `PTEN`
//! - version: u8 = 1
//! - dtype: u8 (0 = f32)
//! - rank: u32
//! - dims: rank x u32
//! - payload: product(dims) values, row-major

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::PatchTensor;

pub const MAGIC: &[u8; 4] = b"PTEN";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct PtenArray {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl PtenArray {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(DTYPE_F32);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::TensorFormat(msg.to_string());
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(bad("missing PTEN magic"));
        }
        if bytes[4] != VERSION {
            return Err(Error::TensorFormat(format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(Error::TensorFormat(format!("unsupported dtype code {}", bytes[5])));
        }
        let rank = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let header = 10 + 4 * rank;
        if bytes.len() < header {
            return Err(bad("truncated dims"));
        }
        let dims: Vec<u32> = bytes[10..header]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| bad("dims overflow"))?;
        if bytes.len() != header + 4 * count {
            return Err(Error::TensorFormat(format!(
                "payload is {} bytes, dims require {}",
                bytes.len() - header,
                4 * count
            )));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes)
    }
}

impl From<&PatchTensor> for PtenArray {
    fn from(t: &PatchTensor) -> Self {
        let (h, w, c) = t.shape();
        PtenArray {
            dims: vec![h as u32, w as u32, c as u32],
            data: t.data().to_vec(),
        }
    }
}

impl TryFrom<PtenArray> for PatchTensor {
    type Error = Error;

    fn try_from(a: PtenArray) -> Result<Self> {
        if a.dims.len() != 3 {
            return Err(Error::TensorFormat(format!("expected rank 3, got {}", a.dims.len())));
        }
        PatchTensor::new(a.dims[0] as usize, a.dims[1] as usize, a.dims[2] as usize, a.data)
    }
}

pub fn write_patch(path: &Path, patch: &PatchTensor) -> Result<()> {
    PtenArray::from(patch).write(path)
}

pub fn read_patch(path: &Path) -> Result<PatchTensor> {
    PtenArray::read(path)?.try_into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let a = PtenArray {
            dims: vec![1, 2],
            data: vec![1.0, -2.5],
        };
        let bytes = a.encode();
        let mut expected = b"PTEN".to_vec();
        expected.extend_from_slice(&[1, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_headers() {
        let good = PtenArray { dims: vec![2], data: vec![0.0, 1.0] }.encode();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(PtenArray::decode(&bad).is_err());
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(PtenArray::decode(&bad).is_err());
        let mut bad = good.clone();
        bad[5] = 1;
        assert!(PtenArray::decode(&bad).is_err());
        assert!(PtenArray::decode(&good[..good.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(dims in proptest::collection::vec(1u32..5, 0..4), seed in any::<u32>()) {
            let n: usize = dims.iter().map(|&d| d as usize).product();
            let data = (0..n).map(|i| (i as f32 + seed as f32) * 0.37).collect();
            let a = PtenArray { dims, data };
            prop_assert_eq!(PtenArray::decode(&a.encode()).unwrap(), a);
        }
    }
}
