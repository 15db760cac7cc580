//! Binary parameter checkpoints.
//!
//! Layout on disk, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "FNASCKPT"
//! version  u32      currently 1
//! count    u32      number of segments
//! table    count *  { name_len: u16, name: utf-8, offset: u64, len: u64 }
//! payload  f64 * total   values, segment offsets are in f64 units
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::params::{Layout, Params};

pub const MAGIC: &[u8; 8] = b"FNASCKPT";
pub const VERSION: u32 = 1;

pub fn save_params(path: &Path, params: &Params) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let segs = params.layout.segments();
    w.write_all(&(segs.len() as u32).to_le_bytes())?;
    for s in segs {
        let name = s.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(s.offset as u64).to_le_bytes())?;
        w.write_all(&(s.len() as u64).to_le_bytes())?;
    }
    for v in &params.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Segment table plus payload, before any layout validation.
#[derive(Debug, Clone)]
pub struct RawCheckpoint {
    pub segments: Vec<(String, u64, u64)>,
    pub data: Vec<f64>,
}

impl RawCheckpoint {
    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|&(_, off, len)| &self.data[off as usize..(off + len) as usize])
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("file truncated".to_string()))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn load_raw(path: &Path) -> Result<RawCheckpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".to_string()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut segments = Vec::with_capacity(count);
    let mut total = 0u64;
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("segment name is not utf-8".to_string()))?;
        let offset = read_u64(&mut r)?;
        let len = read_u64(&mut r)?;
        if offset != total {
            return Err(Error::Checkpoint(format!(
                "segment `{name}` offset {offset} does not follow previous segments ({total})"
            )));
        }
        total += len;
        segments.push((name, offset, len));
    }
    let mut data = Vec::with_capacity(total as usize);
    for _ in 0..total {
        let mut b = [0u8; 8];
        read_exact(&mut r, &mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok(RawCheckpoint { segments, data })
}

/// Loads a checkpoint and validates it against an expected layout: identical
/// segment names, order, and lengths.
pub fn load_params(path: &Path, layout: &Layout) -> Result<Params> {
    let raw = load_raw(path)?;
    let expected = layout.segments();
    if raw.segments.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "segment count {} does not match expected {}",
            raw.segments.len(),
            expected.len()
        )));
    }
    for ((name, _, len), seg) in raw.segments.iter().zip(expected) {
        if name != &seg.name {
            return Err(Error::Checkpoint(format!(
                "segment `{name}` where `{}` was expected",
                seg.name
            )));
        }
        if *len as usize != seg.len() {
            return Err(Error::Dimension {
                segment: seg.name.clone(),
                expected: seg.len(),
                got: *len as usize,
            });
        }
    }
    let mut params = Params::zeros(layout.clone());
    params.data.copy_from_slice(&raw.data);
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Layout;

    fn sample_params() -> Params {
        let layout = Layout::builder().matrix("w", 2, 3).vector("b", 2).build();
        let mut p = Params::zeros(layout);
        for (i, v) in p.data.iter_mut().enumerate() {
            *v = i as f64 * 0.5 - 1.0;
        }
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let p = sample_params();
        save_params(&path, &p).unwrap();
        let q = load_params(&path, &p.layout).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn truncated_file_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let p = sample_params();
        save_params(&path, &p).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_raw(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        std::fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = load_raw(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let p = sample_params();
        save_params(&path, &p).unwrap();
        let other = Layout::builder().matrix("w", 2, 3).vector("b", 5).build();
        assert!(load_params(&path, &other).is_err());
    }
}
