//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "SNCK"
//! version    u32      FORMAT_VERSION
//! precision  u8 length, then ASCII tag ("f32" | "f64")
//! metadata   u64 length, then UTF-8 JSON
//! count      u64 number of arrays
//! per array  u32 name length, UTF-8 name,
//!            u32 rank, rank × u64 dimensions,
//!            product(dimensions) raw little-endian values
//! ```
//!
//! Encoding is a pure function of its inputs, so decode → encode
//! reproduces the original bytes.

use std::path::Path;

use thiserror::Error;

use super::{Array, Scalar};

pub const MAGIC: &[u8; 4] = b"SNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint precision is {found}, this build expects {expected}")]
    PrecisionMismatch { expected: String, found: String },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container<T: Scalar> {
    pub version: u32,
    pub precision: String,
    pub metadata: String,
    pub entries: Vec<(String, Array<T>)>,
}

pub fn encode<'a, T: Scalar + 'a>(
    metadata: &str,
    entries: impl IntoIterator<Item = (&'a str, &'a Array<T>)>,
) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::TAG.len() as u8);
    out.extend_from_slice(T::TAG.as_bytes());
    out.extend_from_slice(&(metadata.len() as u64).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, array) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(array.shape().len() as u32).to_le_bytes());
        for &d in array.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in array.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let slice = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(buf))
    }

    fn string(&mut self, len: usize) -> Result<String, CheckpointError> {
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Container<T>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let tag_len = r.take(1)?[0] as usize;
    let precision = r.string(tag_len)?;
    if precision != T::TAG {
        return Err(CheckpointError::PrecisionMismatch {
            expected: T::TAG.into(),
            found: precision,
        });
    }
    let meta_len = r.u64()? as usize;
    let metadata = r.string(meta_len)?;
    let count = r.u64()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("shape overflow in {name}")))?;
        let raw = r.take(len.checked_mul(T::BYTES).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let array = Array::new(shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        entries.push((name, array));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(Container {
        version,
        precision,
        metadata,
        entries,
    })
}

/// Reads only the precision tag, e.g. to report it before a full decode.
pub fn peek_precision(bytes: &[u8]) -> Result<String, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    r.u32()?;
    let tag_len = r.take(1)?[0] as usize;
    r.string(tag_len)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    Ok(std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_byte_identical() {
        let a = Array::<f32>::matrix(2, 3, vec![0.1, -2.5, 3.0, f32::MIN_POSITIVE, 7.25, -0.0]).unwrap();
        let b = Array::<f32>::vector(vec![1e-30, 4.0]);
        let bytes = encode("{\"k\":1}", [("a", &a), ("b", &b)]);
        let decoded = decode::<f32>(&bytes).unwrap();
        assert_eq!(decoded.metadata, "{\"k\":1}");
        assert_eq!(decoded.entries[0].1, a);
        let again = encode(
            &decoded.metadata,
            decoded.entries.iter().map(|(n, a)| (n.as_str(), a)),
        );
        assert_eq!(bytes, again);
    }

    #[test]
    fn precision_mismatch_detected() {
        let a = Array::<f64>::vector(vec![1.0]);
        let bytes = encode("{}", [("a", &a)]);
        assert_eq!(peek_precision(&bytes).unwrap(), "f64");
        assert!(matches!(
            decode::<f32>(&bytes),
            Err(CheckpointError::PrecisionMismatch { .. })
        ));
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(matches!(decode::<f32>(b"nope"), Err(CheckpointError::BadMagic)));
        let a = Array::<f32>::vector(vec![1.0, 2.0]);
        let bytes = encode("{}", [("a", &a)]);
        assert!(matches!(
            decode::<f32>(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated)
        ));
    }
}
