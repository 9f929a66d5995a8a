//! Binary tensor container.
//!
//! ```text
//! magic    8 bytes  "TRDOFFT\0"
//! version  u32 BE
//! count    u32 BE
//! per tensor:
//!   name length u32 BE, name bytes (UTF-8)
//!   rank u32 BE, one u64 BE extent per axis
//!   payload: f64 little-endian, row-major
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::NamedTensor;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TRDOFFT\0";
pub const VERSION: u32 = 1;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_be_bytes())?;
    w.write_all(
        &u32::try_from(tensors.len())
            .expect("tensor count fits u32")
            .to_be_bytes(),
    )?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(
            &u32::try_from(name.len())
                .expect("name fits u32")
                .to_be_bytes(),
        )?;
        w.write_all(name)?;
        let shape = t.tensor.shape();
        w.write_all(
            &u32::try_from(shape.len())
                .expect("rank fits u32")
                .to_be_bytes(),
        )?;
        for &d in shape {
            w.write_all(&(d as u64).to_be_bytes())?;
        }
        let mut payload = Vec::with_capacity(t.tensor.len() * 8);
        for v in t.tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    w.flush()?;
    Ok(())
}

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    write_tensors(&mut out, tensors).expect("writing to memory cannot fail");
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "container truncated while reading {what}"
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_be_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_be_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::Format("not a tensor container (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version} (expected {VERSION})"
        )));
    }
    let count = c.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| c.u64("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor '{name}' extents overflow")))?;
        let payload = c.take(n.saturating_mul(8), "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let tensor =
            Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor '{name}': {e}")))?;
        out.push(NamedTensor { name, tensor });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedTensor> {
        vec![
            NamedTensor {
                name: "a".into(),
                tensor: Tensor::from_slice(&[2, 1], &[1.5, -0.0]).unwrap(),
            },
            NamedTensor {
                name: "conv1.weights".into(),
                tensor: Tensor::from_slice(&[1], &[f64::MIN_POSITIVE]).unwrap(),
            },
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode(&sample());
        let back = decode(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].tensor.data()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn layout_is_fixed() {
        let bytes = encode(&sample()[..1]);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &[0, 0, 0, 1]);
        assert_eq!(&bytes[12..16], &[0, 0, 0, 1]);
        assert_eq!(&bytes[16..20], &[0, 0, 0, 1]);
        assert_eq!(bytes[20], b'a');
        assert_eq!(&bytes[21..25], &[0, 0, 0, 2]);
        assert_eq!(&bytes[25..33], &[0, 0, 0, 0, 0, 0, 0, 2]);
        assert_eq!(&bytes[41..49], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 41 + 16);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[11] = 2;
        assert!(decode(&v2).unwrap_err().to_string().contains("version"));
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long).is_err());
    }
}
