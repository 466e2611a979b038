//! GWS1 corpus files, all little-endian:
//! `"GWS1"`, u32 version (1), u32 n_signals, u32 n_samples, f32 sample rate,
//! then per signal: u8 label, u16 id length, UTF-8 id, n_samples × f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, Dataset};
use crate::signal::{Label, Signal};

pub const GWS1_MAGIC: &[u8; 4] = b"GWS1";
pub const GWS1_VERSION: u32 = 1;

pub fn write_gws1<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), DataError> {
    dataset.validate()?;
    let n_samples = dataset.n_samples();
    let mut buf = Vec::with_capacity(20 + dataset.len() * (8 + 4 * n_samples));
    buf.extend_from_slice(GWS1_MAGIC);
    buf.extend_from_slice(&GWS1_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(n_samples as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.sample_rate as f32).to_le_bytes());
    for s in &dataset.signals {
        let id = s.id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| DataError::LengthMismatch(format!("id `{}` exceeds 65535 bytes", s.id)))?;
        buf.push(s.label.code());
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        for v in &s.samples {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        if self.bytes.len() - self.pos < n {
            return Err(DataError::TruncatedFile(format!(
                "{what} needs {n} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_gws1<R: Read>(mut input: R) -> Result<Dataset, DataError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if &magic != GWS1_MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != GWS1_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let n_signals = r.u32("signal count")? as usize;
    let n_samples = r.u32("sample count")? as usize;
    let sample_rate = f32::from_le_bytes(r.take(4, "sample rate")?.try_into().unwrap()) as f64;

    let mut signals = Vec::with_capacity(n_signals.min(1 << 16));
    for i in 0..n_signals {
        let what = format!("signal {i} of {n_signals}");
        let code = r.take(1, &what)?[0];
        let label = Label::from_code(code).ok_or(DataError::BadLabel(code))?;
        let id_len = u16::from_le_bytes(r.take(2, &what)?.try_into().unwrap()) as usize;
        let id = String::from_utf8(r.take(id_len, &what)?.to_vec())
            .map_err(|_| DataError::LengthMismatch(format!("id of signal {i} is not UTF-8")))?;
        let raw = r.take(4 * n_samples, &what)?;
        let samples = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        signals.push(Signal {
            id,
            label,
            sample_rate,
            samples,
        });
    }
    if r.pos != bytes.len() {
        return Err(DataError::LengthMismatch(format!(
            "{} bytes after the last declared signal",
            bytes.len() - r.pos
        )));
    }
    Dataset::new(signals, sample_rate)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_gws1(dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    read_gws1(BufReader::new(File::open(path)?))
}
