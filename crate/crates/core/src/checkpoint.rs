//! Versioned key -> array weight container.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "DMCK"
//! version u32      currently 1
//! count   u32      number of entries
//! entry:
//!   name_len u16, name bytes (UTF-8)
//!   dtype    u8   0 = f32, 1 = f64
//!   ndim     u8
//!   dims     u32 * ndim
//!   data     dtype-sized little-endian values, row-major
//! ```
//!
//! Pretrained backbone files use the keys
//! `backbone.conv{1,2,3}.{weight,bias}`; full model checkpoints carry every
//! parameter group plus the batch-norm running statistics under the same
//! naming scheme.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"DMCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn save(path: &Path, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, shape, data) in entries {
        let volume: usize = shape.iter().product();
        if volume != data.len() {
            return Err(Error::InvalidArgument(format!(
                "{name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("key too long: {name}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[1u8, shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Entry>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Load(format!(
            "{}: not a weight container (bad magic)",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Load(format!(
            "{}: unsupported container version {version}",
            path.display()
        )));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Load(format!("{}: bad key: {e}", path.display())))?;
        let mut hdr = [0u8; 2];
        r.read_exact(&mut hdr)?;
        let (dtype, ndim) = (hdr[0], hdr[1] as usize);
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let volume: usize = shape.iter().product();
        let mut data = Vec::with_capacity(volume);
        match dtype {
            0 => {
                let mut buf = [0u8; 4];
                for _ in 0..volume {
                    r.read_exact(&mut buf)?;
                    data.push(f32::from_le_bytes(buf) as f64);
                }
            }
            1 => {
                let mut buf = [0u8; 8];
                for _ in 0..volume {
                    r.read_exact(&mut buf)?;
                    data.push(f64::from_le_bytes(buf));
                }
            }
            other => {
                return Err(Error::Load(format!(
                    "{}: {name}: unknown dtype {other}",
                    path.display()
                )))
            }
        }
        out.insert(name, Entry { shape, data });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = std::env::temp_dir().join("dmcnet_ckpt_roundtrip");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.ckpt");
        let entries = vec![
            ("backbone.conv1.weight".to_string(), vec![2, 3], vec![1.5, -2.0, 0.0, 3.25, 4.0, -0.5]),
            ("fc4.bias".to_string(), vec![2], vec![0.125, -9.75]),
        ];
        save(&path, &entries).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        let e = &loaded["backbone.conv1.weight"];
        assert_eq!(e.shape, vec![2, 3]);
        assert_eq!(e.data, entries[0].2);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = std::env::temp_dir().join("dmcnet_ckpt_badmagic");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.ckpt");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(load(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
