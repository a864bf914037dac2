//! SDT1 tensor files.
//!
//! Layout (little-endian): the magic `SDT1`, a `u32` rank, `rank` `u32`
//! dims, then `product(dims)` `f32` values in row-major order. Values are
//! widened to f64 on read and rounded to the nearest f32 on write.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{LabelField, ProbField, TensorF};

pub const MAGIC: [u8; 4] = *b"SDT1";

/// Largest per-pixel class-sum error accepted from a file before
/// renormalizing; f32 storage alone accounts for ~1e-7.
pub const STORED_SIMPLEX_TOL: f64 = 1e-6;

pub fn encode(t: &TensorF) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * t.dims().len() + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    let rank = u32::try_from(t.dims().len()).map_err(|_| Error::DimOverflow)?;
    out.extend_from_slice(&rank.to_le_bytes());
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::DimOverflow)?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes
        .get(offset..offset + 4)
        .ok_or(Error::TruncatedFile {
            expected: offset + 4,
            found: bytes.len(),
        })?;
    Ok(u32::from_le_bytes(chunk.try_into().expect("4-byte slice")))
}

pub fn decode(bytes: &[u8]) -> Result<TensorF> {
    let magic: [u8; 4] = match bytes.get(..4) {
        Some(m) => m.try_into().expect("4-byte slice"),
        None => {
            return Err(Error::TruncatedFile {
                expected: 4,
                found: bytes.len(),
            })
        }
    };
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let rank = u32_at(bytes, 4)? as usize;
    let header = rank
        .checked_mul(4)
        .and_then(|n| n.checked_add(8))
        .ok_or(Error::DimOverflow)?;
    let mut dims = Vec::with_capacity(rank.min(16));
    for i in 0..rank {
        dims.push(u32_at(bytes, 8 + 4 * i)? as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::DimOverflow)?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(header))
        .ok_or(Error::DimOverflow)?;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingData(bytes.len() - expected));
    }
    let data = bytes[header..expected]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
        .collect();
    TensorF::new(dims, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &TensorF) -> Result<()> {
    fs::write(path, encode(t)?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorF> {
    decode(&fs::read(path)?)
}

/// Divides each pixel's class vector by its sum when that sum is within
/// [`STORED_SIMPLEX_TOL`] of 1. Larger deviations are left for validation
/// to reject.
pub fn reproject_simplex(t: TensorF) -> Result<TensorF> {
    let dims = t.dims().to_vec();
    if dims.len() != 3 || dims[0] < 2 {
        return Ok(t);
    }
    let (classes, pixels) = (dims[0], dims[1] * dims[2]);
    let mut data = t.into_data();
    for pixel in 0..pixels {
        let sum: f64 = (0..classes).map(|c| data[c * pixels + pixel]).sum();
        if sum != 1.0 && (sum - 1.0).abs() <= STORED_SIMPLEX_TOL {
            for c in 0..classes {
                data[c * pixels + pixel] /= sum;
            }
        }
    }
    TensorF::new(dims, data)
}

/// Reads a probability field, undoing f32 rounding of the class sums.
pub fn read_prob(path: impl AsRef<Path>) -> Result<ProbField> {
    ProbField::new(reproject_simplex(read_tensor(path)?)?)
}

/// Reads a label field; hardness is inferred from the values.
pub fn read_label(path: impl AsRef<Path>) -> Result<LabelField> {
    LabelField::infer(reproject_simplex(read_tensor(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_small() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sdt");
        let t = TensorF::new(vec![1, 2, 2], vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.dims(), t.dims());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn multiclass_field_survives_f32_storage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.sdt");
        let third = 1.0 / 3.0;
        let t = TensorF::new(vec![3, 1, 2], vec![third, 0.1, third, 0.2, third, 0.7]).unwrap();
        ProbField::new(t.clone()).unwrap();
        write_tensor(&path, &t).unwrap();
        assert!(ProbField::new(read_tensor(&path).unwrap()).is_err());
        let p = read_prob(&path).unwrap();
        assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reprojection_leaves_real_violations() {
        let t = TensorF::new(vec![2, 1, 1], vec![0.5, 0.6]).unwrap();
        assert!(ProbField::new(reproject_simplex(t).unwrap()).is_err());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&TensorF::filled(vec![2], 0.0).unwrap()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(Error::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SDT1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&10u32.to_le_bytes());
        for _ in 0..8 {
            bytes.extend_from_slice(&0.5f32.to_le_bytes());
        }
        assert!(matches!(
            decode(&bytes),
            Err(Error::TruncatedFile {
                expected: 52,
                found: 44
            })
        ));
    }

    #[test]
    fn huge_dims_overflow() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SDT1");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        for _ in 0..4 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode(&bytes), Err(Error::DimOverflow)));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SDT1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::NonFinite { index: 0 })));
    }

    proptest! {
        #[test]
        fn f32_values_round_trip_bit_exactly(
            dims in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let n: usize = dims.iter().product();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-1e6f32..1e6))).collect();
            let t = TensorF::new(dims, data).unwrap();
            let bytes = encode(&t).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
