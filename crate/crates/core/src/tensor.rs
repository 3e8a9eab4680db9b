//! `PXNT` per-pixel float tensor files.
//!
//! Layout, all little-endian: magic `PXNT`, `u32` version (1), `u32` width,
//! `u32` height, `u32` dim, `u32` level count, one `u32` sub-block length per
//! level (summing to dim), then `width * height * dim` `f32` values,
//! pixel-major and row-major.

use std::path::Path;

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"PXNT";
pub const TENSOR_VERSION: u32 = 1;

/// Raw contents of a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    /// Sub-block lengths; empty when the file declares no level structure.
    pub blocks: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.data.len() != self.width * self.height * self.dim {
            return Err(Error::DimensionMismatch(format!(
                "tensor data length {} != {}x{}x{}",
                self.data.len(),
                self.width,
                self.height,
                self.dim
            )));
        }
        let mut w = Writer::default();
        w.bytes(TENSOR_MAGIC);
        w.u32(TENSOR_VERSION);
        w.u32(self.width as u32);
        w.u32(self.height as u32);
        w.u32(self.dim as u32);
        w.u32(self.blocks.len() as u32);
        for &b in &self.blocks {
            w.u32(b as u32);
        }
        w.f32s(&self.data);
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(TENSOR_MAGIC)?;
        let version = r.u32()?;
        if version != TENSOR_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let level_count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(level_count.min(1024));
        for _ in 0..level_count {
            blocks.push(r.u32()? as usize);
        }
        if !blocks.is_empty() && blocks.iter().sum::<usize>() != dim {
            return Err(Error::Malformed(format!(
                "sub-block lengths {blocks:?} do not sum to dim {dim}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| Error::Malformed("tensor dimensions overflow".into()))?;
        let payload = r.remaining();
        if payload != expected * 4 {
            return Err(Error::DimensionMismatch(format!(
                "payload holds {} bytes ({} floats), header {width}x{height}x{dim} needs {expected} floats",
                payload,
                payload as f64 / 4.0
            )));
        }
        let data = r.f32s(expected, 0)?;
        Ok(Self {
            width,
            height,
            dim,
            blocks,
            data,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(w: u32, h: u32, dim: u32, blocks: &[u32]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TENSOR_MAGIC);
        for v in [TENSOR_VERSION, w, h, dim, blocks.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for b in blocks {
            out.extend_from_slice(&b.to_le_bytes());
        }
        out
    }

    #[test]
    fn payload_length_mismatch() {
        let mut bytes = header(4, 4, 8, &[8]);
        for i in 0..100 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let err = Tensor::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");
    }

    #[test]
    fn nan_payload_names_offset() {
        let mut bytes = header(1, 2, 2, &[2]);
        for v in [0.0f32, 1.0, f32::NAN, 2.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let err = Tensor::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::NonFinite(2)), "{err}");
        assert!(err.to_string().contains('2'));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = header(1, 1, 1, &[]);
        bytes.extend_from_slice(&0f32.to_le_bytes());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(
            Tensor::from_bytes(&wrong),
            Err(Error::BadMagic { .. })
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            Tensor::from_bytes(&v2),
            Err(Error::UnsupportedVersion(2))
        ));
        assert!(Tensor::from_bytes(&bytes).is_ok());
    }

    #[test]
    fn blocks_must_sum_to_dim() {
        let mut bytes = header(1, 1, 3, &[1, 1]);
        bytes.extend_from_slice(&[0u8; 12]);
        assert!(matches!(
            Tensor::from_bytes(&bytes),
            Err(Error::Malformed(_))
        ));
    }
}
