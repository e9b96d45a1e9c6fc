//! File formats: `SBA1` arrays, 16-bit PGM images, mask text files and
//! score-model checkpoints.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::measurement::{Mask, C64};
use crate::score::{ParametricScoreModel, ScoreFamily};

pub const SBA_MAGIC: &[u8; 4] = b"SBA1";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

/// Row-major array of `f64` or complex `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl Array {
    pub fn real(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::checked(dims, ArrayData::Real(data))
    }

    pub fn complex(dims: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        Self::checked(dims, ArrayData::Complex(data))
    }

    fn checked(dims: Vec<usize>, data: ArrayData) -> Result<Self> {
        let len = match &data {
            ArrayData::Real(v) => v.len(),
            ArrayData::Complex(v) => v.len(),
        };
        let expected: usize = dims.iter().product();
        if dims.is_empty() || dims.len() > u8::MAX as usize || expected != len {
            return Err(Error::Format(format!("array dims {dims:?} do not match {len} values")));
        }
        Ok(Self { dims, data })
    }

    pub fn from_image(img: &Image) -> Self {
        Self {
            dims: vec![img.rows, img.cols],
            data: ArrayData::Real(img.data.clone()),
        }
    }

    pub fn to_image(&self) -> Result<Image> {
        match (&self.data, self.dims.as_slice()) {
            (ArrayData::Real(v), &[r, c]) => Image::new(r, c, v.clone()),
            _ => Err(Error::Format("expected a real 2-d array".into())),
        }
    }

    pub fn into_complex(self) -> Vec<C64> {
        match self.data {
            ArrayData::Real(v) => v.into_iter().map(|re| C64::new(re, 0.0)).collect(),
            ArrayData::Complex(v) => v,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SBA_MAGIC);
        let tag = match self.data {
            ArrayData::Real(_) => 0u8,
            ArrayData::Complex(_) => 1u8,
        };
        out.push(tag);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            ArrayData::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::Complex(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("SBA1: {m}"));
        if bytes.len() < 6 || &bytes[..4] != SBA_MAGIC {
            return Err(bad("bad magic"));
        }
        let tag = bytes[4];
        let ndim = bytes[5] as usize;
        let mut pos = 6;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let chunk = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated header"))?;
            dims.push(u64::from_le_bytes(chunk.try_into().unwrap()) as usize);
            pos += 8;
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dimension overflow"))?;
        let width = match tag {
            0 => 1,
            1 => 2,
            t => return Err(bad(&format!("unknown dtype tag {t}"))),
        };
        let payload = &bytes[pos..];
        if payload.len() != count * width * 8 {
            return Err(bad("payload length does not match dims"));
        }
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = if tag == 0 {
            ArrayData::Real(vals)
        } else {
            ArrayData::Complex(vals.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect())
        };
        Self::checked(dims, data)
    }
}

pub fn write_array(path: &Path, array: &Array) -> Result<()> {
    fs::write(path, array.to_bytes())?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<Array> {
    Array::from_bytes(&fs::read(path)?)
}

/// Binary 16-bit PGM, pixel values scaled so `data_range` maps to 65535.
pub fn pgm_bytes(img: &Image, data_range: f64) -> Result<Vec<u8>> {
    if !(data_range > 0.0) {
        return Err(Error::domain("data_range must be positive"));
    }
    let mut out = format!("P5\n{} {}\n65535\n", img.cols, img.rows).into_bytes();
    for v in &img.data {
        let q = (v / data_range * 65535.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, img: &Image, data_range: f64) -> Result<()> {
    fs::write(path, pgm_bytes(img, data_range)?)?;
    Ok(())
}

/// Mask text format: one `0` or `1` per line. The reader ignores all
/// whitespace, so packed files are accepted too.
pub fn mask_to_text(mask: &Mask) -> String {
    mask.flags().iter().map(|&f| if f { "1\n" } else { "0\n" }).collect()
}

pub fn mask_from_text(text: &str) -> Result<Mask> {
    let flags = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Format(format!("mask file: unexpected character {other:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Mask::new(flags)
}

pub fn write_checkpoint(path: &Path, model: &ParametricScoreModel) -> Result<()> {
    fs::write(path, model.to_checkpoint())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path, family: ScoreFamily) -> Result<ParametricScoreModel> {
    ParametricScoreModel::from_checkpoint(&fs::read(path)?, family)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_array_layout() {
        let a = Array::real(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let b = a.to_bytes();
        assert_eq!(&b[..6], b"SBA1\x00\x02");
        assert_eq!(&b[6..14], &2u64.to_le_bytes());
        assert_eq!(&b[22..30], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 6 + 16 + 16);
        assert_eq!(Array::from_bytes(&b).unwrap(), a);
    }

    #[test]
    fn complex_roundtrip() {
        let a = Array::complex(vec![3], vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.0), C64::new(0.0, 1e-300)]).unwrap();
        let b = a.to_bytes();
        assert_eq!(b[4], 1);
        assert_eq!(Array::from_bytes(&b).unwrap(), a);
    }

    #[test]
    fn corrupt_arrays_rejected() {
        let b = Array::real(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        assert!(Array::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Array::from_bytes(&bad).is_err());
        let mut tag = b.clone();
        tag[4] = 7;
        assert!(Array::from_bytes(&tag).is_err());
        assert!(Array::real(vec![3], vec![1.0]).is_err());
    }

    #[test]
    fn pgm_header_and_scale() {
        let img = Image::new(1, 3, vec![0.0, 0.5, 2.0]).unwrap();
        let b = pgm_bytes(&img, 1.0).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&b[..header.len()], header);
        let px = &b[header.len()..];
        assert_eq!(px, &[0, 0, 0x80, 0x00, 0xff, 0xff]);
    }

    #[test]
    fn mask_text_roundtrip() {
        let m = Mask::new(vec![true, false, false, true]).unwrap();
        let t = mask_to_text(&m);
        assert_eq!(t, "1\n0\n0\n1\n");
        assert_eq!(mask_from_text("10\n01").unwrap(), m);
        assert!(mask_from_text("10x1").is_err());
        assert!(mask_from_text("0000").is_err());
    }

    #[test]
    fn checkpoint_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.scm");
        let m = ParametricScoreModel::isotropic(1.7).unwrap();
        write_checkpoint(&p, &m).unwrap();
        let back = read_checkpoint(&p, ScoreFamily::IsotropicGaussianFit).unwrap();
        assert_eq!(back.params(), m.params());
    }
}
