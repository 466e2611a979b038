//! Binary tensor records shared by model checkpoints (`VAE1`) and optimizer
//! state (`OPT1`).
//!
//! Layout, all little-endian: 4-byte magic, u32 version, u32 tensor count,
//! then (`OPT1` only) u64 step count, then per tensor: u16 name length,
//! UTF-8 name, u8 rank, `rank` × u32 dims, f32 values.

use std::io::{Read, Write};

use thiserror::Error;

pub const VAE1_MAGIC: &[u8; 4] = b"VAE1";
pub const OPT1_MAGIC: &[u8; 4] = b"OPT1";
pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported record version {0}")]
    UnsupportedVersion(u32),
    #[error("record truncated while reading {0}")]
    Truncated(&'static str),
    #[error("unexpected {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("tensor `{0}` is malformed")]
    BadTensor(String),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub magic: [u8; 4],
    pub version: u32,
    pub step_count: Option<u64>,
    pub tensors: Vec<NamedTensor>,
}

pub fn write_record<W: Write>(record: &TensorRecord, mut out: W) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&record.magic);
    buf.extend_from_slice(&record.version.to_le_bytes());
    buf.extend_from_slice(&(record.tensors.len() as u32).to_le_bytes());
    if let Some(step) = record.step_count {
        buf.extend_from_slice(&step.to_le_bytes());
    }
    for t in &record.tensors {
        let name = t.name.as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| CheckpointError::BadTensor(t.name.clone()))?;
        let rank =
            u8::try_from(t.shape.len()).map_err(|_| CheckpointError::BadTensor(t.name.clone()))?;
        if t.shape.iter().product::<usize>() != t.values.len() {
            return Err(CheckpointError::BadTensor(t.name.clone()));
        }
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(rank);
        for &d in &t.shape {
            let d = u32::try_from(d).map_err(|_| CheckpointError::BadTensor(t.name.clone()))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Reads a record, checking its magic and version. `with_step` selects the
/// `OPT1` framing that carries a step count.
pub fn read_record<R: Read>(
    mut input: R,
    magic: &[u8; 4],
    with_step: bool,
) -> Result<TensorRecord, CheckpointError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let found = cur.take(4, "magic")?;
    if found != magic {
        return Err(CheckpointError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let version = cur.u32("version")?;
    if version != RECORD_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = cur.u32("tensor count")?;
    let step_count = if with_step {
        Some(cur.u64("step count")?)
    } else {
        None
    };
    let mut tensors = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let rank = cur.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| cur.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::BadTensor(name.clone()))?;
        let raw = cur.take(
            n.checked_mul(4)
                .ok_or(CheckpointError::Truncated("values"))?,
            "values",
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor {
            name,
            shape,
            values,
        });
    }
    if cur.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - cur.pos));
    }
    let mut magic_arr = [0u8; 4];
    magic_arr.copy_from_slice(magic);
    Ok(TensorRecord {
        magic: magic_arr,
        version,
        step_count,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(with_step: bool) -> TensorRecord {
        TensorRecord {
            magic: if with_step { *OPT1_MAGIC } else { *VAE1_MAGIC },
            version: RECORD_VERSION,
            step_count: with_step.then_some(1234),
            tensors: vec![
                NamedTensor {
                    name: "encoder.0.weight".into(),
                    shape: vec![2, 1, 3, 3],
                    values: (0..18).map(|v| v as f32 * 0.25 - 2.0).collect(),
                },
                NamedTensor {
                    name: "encoder.0.bias".into(),
                    shape: vec![2],
                    values: vec![f32::MIN_POSITIVE, -0.0],
                },
            ],
        }
    }

    #[test]
    fn round_trip_both_framings() {
        for with_step in [false, true] {
            let rec = sample(with_step);
            let mut buf = Vec::new();
            write_record(&rec, &mut buf).unwrap();
            let magic = if with_step { OPT1_MAGIC } else { VAE1_MAGIC };
            let back = read_record(&buf[..], magic, with_step).unwrap();
            assert_eq!(back, rec);
            assert_eq!(back.tensors[1].values[1].to_bits(), (-0.0f32).to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_record(&sample(true), &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"OPT1");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1234u64.to_le_bytes());
        assert_eq!(&buf[20..22], &16u16.to_le_bytes());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let mut buf = Vec::new();
        write_record(&sample(false), &mut buf).unwrap();
        assert!(matches!(
            read_record(&buf[..buf.len() - 2], VAE1_MAGIC, false),
            Err(CheckpointError::Truncated(_))
        ));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(
            read_record(&extra[..], VAE1_MAGIC, false),
            Err(CheckpointError::TrailingBytes(1))
        ));
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(
            read_record(&v2[..], VAE1_MAGIC, false),
            Err(CheckpointError::UnsupportedVersion(2))
        ));
        assert!(matches!(
            read_record(&buf[..], OPT1_MAGIC, true),
            Err(CheckpointError::BadMagic { .. })
        ));
    }
}
