//! Flat binary checkpoint container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "JAVG"
//! version u32      currently 1
//! count   u32      number of parameters
//! then per parameter, in ascending name order:
//!   name_len u16, name bytes (UTF-8), rank u8, extents u64 each,
//!   values f32 each (row-major)
//! ```
//!
//! Values are stored as f32. Callers that need save(load(file)) == file keep
//! their state on the f32 grid (see `Tensor::round_to_f32`); f32 -> f64 -> f32
//! is then exact and the roundtrip is bit-identical.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use crate::error::{JavgError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"JAVG";
pub const VERSION: u32 = 1;

pub fn encode(params: &ParamSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(params.len())
        .map_err(|_| JavgError::invalid("too many parameters for checkpoint"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        let name_len = u16::try_from(name_bytes.len())
            .map_err(|_| JavgError::invalid(format!("parameter name too long: {name:?}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        let rank = u8::try_from(tensor.shape().len())
            .map_err(|_| JavgError::invalid(format!("rank too large for {name:?}")))?;
        out.push(rank);
        for &extent in tensor.shape() {
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], origin: &str) -> Result<ParamSet> {
    let mut cur = Cursor::new(bytes);
    let ferr = |message: String| JavgError::format(origin, message);

    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| ferr("truncated before magic".into()))?;
    if &magic != MAGIC {
        return Err(ferr(format!("bad magic {magic:?}, expected \"JAVG\"")));
    }
    let version = read_u32(&mut cur).ok_or_else(|| ferr("truncated version".into()))?;
    if version != VERSION {
        return Err(ferr(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let count = read_u32(&mut cur).ok_or_else(|| ferr("truncated parameter count".into()))?;

    let mut params = ParamSet::new();
    for i in 0..count {
        let name_len =
            read_u16(&mut cur).ok_or_else(|| ferr(format!("truncated name length (entry {i})")))?;
        let mut name_bytes = vec![0u8; name_len as usize];
        cur.read_exact(&mut name_bytes)
            .map_err(|_| ferr(format!("truncated name (entry {i})")))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| ferr(format!("name is not UTF-8 (entry {i})")))?;
        let mut rank = [0u8; 1];
        cur.read_exact(&mut rank)
            .map_err(|_| ferr(format!("truncated rank for {name:?}")))?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let extent =
                read_u64(&mut cur).ok_or_else(|| ferr(format!("truncated extent for {name:?}")))?;
            if extent == 0 {
                return Err(ferr(format!("zero extent for {name:?}")));
            }
            shape.push(extent as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            cur.read_exact(&mut buf)
                .map_err(|_| ferr(format!("truncated values for {name:?}")))?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| ferr(format!("invalid tensor for {name:?}: {e}")))?;
        params
            .insert(name.clone(), tensor)
            .map_err(|_| ferr(format!("duplicate parameter {name:?}")))?;
    }
    let mut rest = Vec::new();
    cur.read_to_end(&mut rest)
        .map_err(|_| ferr("unreadable trailer".into()))?;
    if !rest.is_empty() {
        return Err(ferr(format!("{} trailing bytes after last entry", rest.len())));
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let bytes = encode(params)?;
    let mut file =
        fs::File::create(path).map_err(|e| JavgError::io(path.display().to_string(), e))?;
    file.write_all(&bytes)
        .map_err(|e| JavgError::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| JavgError::io(path.display().to_string(), e))?;
    decode(&bytes, &path.display().to_string())
}

fn read_u16(cur: &mut Cursor<&[u8]>) -> Option<u16> {
    let mut b = [0u8; 2];
    cur.read_exact(&mut b).ok()?;
    Some(u16::from_le_bytes(b))
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Option<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> Option<u64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b).ok()?;
    Some(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(
            "audio_gen.w0",
            Tensor::new(vec![2, 3], vec![0.5, -1.25, 0.0, 3.5, -0.125, 2.0]).unwrap(),
        )
        .unwrap();
        p.insert("audio_gen.b0", Tensor::from_vec(vec![0.0, 1.0]))
            .unwrap();
        p
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let p = sample_params();
        let bytes = encode(&p).unwrap();
        let q = decode(&bytes, "test").unwrap();
        assert_eq!(p, q);
        let bytes2 = encode(&q).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn header_fields() {
        let p = sample_params();
        let bytes = encode(&p).unwrap();
        assert_eq!(&bytes[0..4], b"JAVG");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let p = sample_params();
        let bytes = encode(&p).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1], "t").is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic, "t").is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(decode(&trailing, "t").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_random_f32_values(values in proptest::collection::vec(-1e30f32..1e30f32, 1..64)) {
            let mut p = ParamSet::new();
            let data: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            p.insert("t", Tensor::from_vec(data)).unwrap();
            let bytes = encode(&p).unwrap();
            let q = decode(&bytes, "prop").unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
