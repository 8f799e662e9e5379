//! GFPC checkpoint format.
//!
//! Little-endian layout:
//! - magic `b"GFPC"`, `u8` version (= 1), `u32` tensor count
//! - per tensor: `u16` name length, UTF-8 name, `u8` rank, `u32` dims, `f32` data
//!
//! Gradients are not stored.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"GFPC";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected GFPC")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u8),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub fn write_checkpoint<W: Write>(params: &ParamSet<f32>, mut w: W) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, p) in params.iter() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| CheckpointError::Malformed(format!("name `{name}` too long")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        let dims = p.value.dims();
        let rank = u8::try_from(dims.len())
            .map_err(|_| CheckpointError::Malformed(format!("rank of `{name}` too large")))?;
        w.write_all(&[rank])?;
        for &d in dims {
            let d = u32::try_from(d)
                .map_err(|_| CheckpointError::Malformed(format!("dim of `{name}` too large")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 4);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn checkpoint_bytes(params: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(params, &mut out).expect("writing to a Vec cannot fail");
    out
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamSet<f32>, CheckpointError> {
    let magic = read_array::<4, _>(&mut r)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let [version] = read_array::<1, _>(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?);
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let [rank] = read_array::<1, _>(&mut r)?;
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(read_array(&mut r)?) as usize);
        }
        let numel: usize = dims.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor =
            Tensor::new(dims, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if params.contains(&name) {
            return Err(CheckpointError::Malformed(format!("duplicate tensor `{name}`")));
        }
        params.insert(name, tensor);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let mut p = ParamSet::new();
        p.insert("ab", Tensor::new(vec![2], vec![1.0f32, -2.5]).unwrap());
        let bytes = checkpoint_bytes(&p);
        let mut want = b"GFPC".to_vec();
        want.push(1);
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u16.to_le_bytes());
        want.extend_from_slice(b"ab");
        want.push(1);
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(matches!(
            read_checkpoint(&b"GFPX\x01\0\0\0\0"[..]),
            Err(CheckpointError::BadMagic(_))
        ));
        assert!(matches!(
            read_checkpoint(&b"GFPC\x02\0\0\0\0"[..]),
            Err(CheckpointError::Version(2))
        ));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::<f32>::zeros(&[4, 4]));
        let bytes = checkpoint_bytes(&p);
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }
}
