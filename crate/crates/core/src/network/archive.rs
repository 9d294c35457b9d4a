//! Portable named-array container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"LDEW"  u32 version  u32 count
//! count x { u32 name_len  name (UTF-8)  u32 ndim  ndim x u64 dim  prod(dims) x f32 }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LDEW";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of named `f32` arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightArchive {
    entries: Vec<ArchiveEntry>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Archive(format!(
                "entry {name}: dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::Archive(format!("duplicate entry {name}")));
        }
        self.entries.push(ArchiveEntry { name, dims, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&(e.dims.len() as u32).to_le_bytes())?;
            for &d in &e.dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in &e.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Archive(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a weight archive"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Archive(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut out = WeightArchive::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(|_| bad("truncated entry name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("entry name is not UTF-8"))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| bad("truncated dims"))?;
                dims.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| bad("dim overflow"))?);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad("entry too large"))?;
            let mut bytes = vec![0u8; len.checked_mul(4).ok_or_else(|| bad("entry too large"))?];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::Archive(format!("truncated data for {name}")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.push(name, dims, data)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f)).map_err(|e| match e {
            Error::Archive(m) => Error::Archive(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Archive("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let mut a = WeightArchive::new();
        a.push("w", vec![2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5e-12, 7.0, f32::MAX])
            .unwrap();
        a.push("empty", vec![0], vec![]).unwrap();
        a.push("scalar", vec![], vec![0.25]).unwrap();
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        let b = WeightArchive::read_from(buf.as_slice()).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.dims, y.dims);
            let xb: Vec<u32> = x.data.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn header_layout() {
        let mut a = WeightArchive::new();
        a.push("ab", vec![1], vec![1.0]).unwrap();
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"LDEW");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 2);
        assert_eq!(&buf[16..18], b"ab");
        assert_eq!(buf.len(), 4 + 4 + 4 + 4 + 2 + 4 + 8 + 4);
        assert_eq!(&buf[buf.len() - 4..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        assert!(WeightArchive::read_from(&b"NOPE"[..]).is_err());
        let mut a = WeightArchive::new();
        a.push("x", vec![4], vec![0.0; 4]).unwrap();
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(WeightArchive::read_from(buf.as_slice()).is_err());
        assert!(a.push("x", vec![1], vec![0.0]).is_err());
        assert!(a.push("y", vec![2], vec![0.0]).is_err());
    }
}
