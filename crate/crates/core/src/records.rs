//! Named-tensor record files used for model checkpoints and circuits.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic[4] version:u8
//! header_len:u32 header:utf8            structured key = value text
//! count:u32
//! count × { name_len:u32 name:utf8 tensor:AETN }
//! ```
//!
//! Tensors inside record files are stored as float64.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub const RECORD_VERSION: u8 = 0x01;

#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    pub magic: [u8; 4],
    pub header: String,
    pub records: Vec<(String, Tensor)>,
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::InvalidData("string too long".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
}

impl RecordFile {
    pub fn new(magic: &[u8; 4], header: String) -> Self {
        Self { magic: *magic, header, records: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.records.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.records
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing record `{name}`")))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.magic)?;
        w.write_all(&[RECORD_VERSION])?;
        write_str(w, &self.header)?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for (name, t) in &self.records {
            write_str(w, name)?;
            t.write_to(w, DType::F64)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, expected_magic: &[u8; 4]) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != expected_magic {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(expected_magic),
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != RECORD_VERSION {
            return Err(Error::Format(format!("unsupported record version {}", version[0])));
        }
        let header = read_str(r)?;
        let count = read_u32(r)? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = read_str(r)?;
            records.push((name, Tensor::read_from(r)?));
        }
        Ok(Self { magic, header, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected_magic: &[u8; 4]) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f, expected_magic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_everything() {
        let mut rf = RecordFile::new(b"TEST", "a = 1\n[b]\nc = \"x\"\n".into());
        rf.push("w", Tensor::from_fn(&[2, 3], |i| 0.1 * i as f64 + 1e-17));
        rf.push("bias", Tensor::full(&[3], -2.5));
        let mut buf = Vec::new();
        rf.write_to(&mut buf).unwrap();
        let back = RecordFile::read_from(&mut buf.as_slice(), b"TEST").unwrap();
        assert_eq!(back, rf);
        assert!(RecordFile::read_from(&mut buf.as_slice(), b"NOPE").is_err());
        assert!(back.get("missing").is_err());
    }
}
