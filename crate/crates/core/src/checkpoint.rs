//! Flat binary parameter container.
//!
//! Layout: the magic `TSCB1`, then one record per tensor in name order:
//! name length (u32 LE), UTF-8 name bytes, rank (u32 LE), dims (u64 LE
//! each), then the values as little-endian f64. Deterministic: encoding the
//! same parameters twice yields identical bytes.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 5] = b"TSCB1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    BadMagic,
    Truncated { offset: usize },
    BadName { offset: usize },
    BadShape { name: String },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::BadMagic => write!(f, "not a TSCB1 container"),
            CheckpointError::Truncated { offset } => {
                write!(f, "container truncated at byte {offset}")
            }
            CheckpointError::BadName { offset } => {
                write!(f, "tensor name at byte {offset} is not UTF-8")
            }
            CheckpointError::BadShape { name } => {
                write!(f, "tensor {name} has an inconsistent shape record")
            }
        }
    }
}

impl core::error::Error for CheckpointError {}

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    for (name, tensor) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet, CheckpointError> {
    if bytes.len() < 5 || &bytes[..5] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut pos = 5;
    let mut params = ParamSet::new();
    while pos < bytes.len() {
        let name_len = read_u32(bytes, &mut pos)? as usize;
        let name_bytes = take(bytes, &mut pos, name_len)?;
        let name = core::str::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::BadName { offset: pos - name_len })?
            .to_string();
        let rank = read_u32(bytes, &mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = read_u64(bytes, &mut pos)? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| CheckpointError::BadShape { name: name.clone() })?;
            shape.push(d);
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let raw = take(bytes, &mut pos, 8)?;
            data.push(f64::from_le_bytes(raw.try_into().expect("8 bytes")));
        }
        let tensor = Tensor::param(shape, data)
            .map_err(|_| CheckpointError::BadShape { name: name.clone() })?;
        params.insert(name, tensor);
    }
    Ok(params)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], CheckpointError> {
    if *pos + n > bytes.len() {
        return Err(CheckpointError::Truncated { offset: *pos });
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32, CheckpointError> {
    let raw = take(bytes, pos, 4)?;
    Ok(u32::from_le_bytes(raw.try_into().expect("4 bytes")))
}

fn read_u64(bytes: &[u8], pos: &mut usize) -> Result<u64, CheckpointError> {
    let raw = take(bytes, pos, 8)?;
    Ok(u64::from_le_bytes(raw.try_into().expect("8 bytes")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;

    #[test]
    fn roundtrip_preserves_names_shapes_and_bits() {
        let mut rng = crate::rng::seeded(2);
        let mut params = ParamSet::new();
        params.insert(
            "crnn.conv0.weight",
            Tensor::param(vec![2, 1, 3, 3], (0..18).map(|_| rng.gen::<f64>() - 0.5).collect())
                .unwrap(),
        );
        params.insert("crnn.fc.bias", Tensor::param(vec![3], vec![0.0, -1.5, 2.25]).unwrap());
        params.insert("scalar", Tensor::param(vec![], vec![core::f64::consts::PI]).unwrap());

        let bytes = encode(&params);
        assert_eq!(&bytes[..5], MAGIC);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.len(), params.len());
        for (name, tensor) in params.iter() {
            let got = back.get(name).unwrap();
            assert_eq!(got.shape(), tensor.shape());
            let same_bits = got
                .data()
                .iter()
                .zip(tensor.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_bits, "{name} changed bits");
        }
        // Deterministic bytes.
        assert_eq!(bytes, encode(&back));
    }

    #[test]
    fn bad_magic_and_truncation_are_reported() {
        assert_eq!(decode(b"XXXXX"), Err(CheckpointError::BadMagic));
        let mut params = ParamSet::new();
        params.insert("w", Tensor::param(vec![2], vec![1.0, 2.0]).unwrap());
        let bytes = encode(&params);
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode(cut), Err(CheckpointError::Truncated { .. })));
    }
}
