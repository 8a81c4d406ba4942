//! Self-describing binary container for named float64 arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"RCHKPT\x00\x01"   (the trailing byte is the format version)
//! tag      u16 length + UTF-8 bytes     (what kind of payload this is)
//! meta     u16 count, then per entry: u16 key length + key, u16 value length + value
//! arrays   u32 count, then per array:
//!            u16 name length + name
//!            u8  rank, rank x u64 dims
//!            product(dims) x f64 payload
//! ```
//!
//! Loads are all-or-nothing: a file is parsed completely into a
//! [`Container`] before anything else looks at it.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"RCHKPT\x00\x01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic or unsupported version (expected RCHKPT v1)")]
    BadHeader { path: String },
    #[error("{path}: container is tagged '{got}', expected '{expected}'")]
    WrongTag {
        path: String,
        got: String,
        expected: String,
    },
    #[error("array '{name}': shape {got:?} does not match expected {expected:?}")]
    ArrayShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("missing array '{name}'")]
    MissingArray { name: String },
    #[error("missing metadata key '{key}'")]
    MissingMeta { key: String },
    #[error("metadata '{key}' = '{value}' is not a valid {kind}")]
    BadMeta {
        key: String,
        value: String,
        kind: &'static str,
    },
    #[error("{path}: malformed container ({detail})")]
    Malformed { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub tag: String,
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<Array>,
}

impl Container {
    pub fn new(tag: &str) -> Self {
        Container {
            tag: tag.to_string(),
            meta: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str, kind: &'static str) -> Result<T, CheckpointError> {
        let value = self.meta.get(key).ok_or_else(|| CheckpointError::MissingMeta {
            key: key.to_string(),
        })?;
        value.parse().map_err(|_| CheckpointError::BadMeta {
            key: key.to_string(),
            value: value.clone(),
            kind,
        })
    }

    pub fn push_array(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(Array {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn array(&self, name: &str) -> Result<&Array, CheckpointError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| CheckpointError::MissingArray {
                name: name.to_string(),
            })
    }

    /// Writes atomically: the file appears complete or not at all.
    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        write_str16(&mut buf, &self.tag);
        buf.extend_from_slice(&(self.meta.len() as u16).to_le_bytes());
        for (k, v) in &self.meta {
            write_str16(&mut buf, k);
            write_str16(&mut buf, v);
        }
        buf.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            write_str16(&mut buf, &a.name);
            buf.push(a.shape.len() as u8);
            for &d in &a.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &a.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn read(path: &Path) -> Result<Container, CheckpointError> {
        let pstr = path.display().to_string();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| CheckpointError::Io {
                path: pstr.clone(),
                source,
            })?;
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
            path: &pstr,
        };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(CheckpointError::BadHeader { path: pstr.clone() });
        }
        let tag = r.str16()?;
        let n_meta = r.u16()? as usize;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = r.str16()?;
            let v = r.str16()?;
            meta.insert(k, v);
        }
        let n_arrays = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let name = r.str16()?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            arrays.push(Array { name, shape, data });
        }
        if r.pos != bytes.len() {
            let detail = format!("{} trailing bytes", bytes.len() - r.pos);
            return Err(CheckpointError::Malformed { path: pstr.clone(), detail });
        }
        Ok(Container { tag, meta, arrays })
    }

    /// Read with a tag check.
    pub fn read_tagged(path: &Path, expected: &str) -> Result<Container, CheckpointError> {
        let c = Container::read(path)?;
        if c.tag != expected {
            return Err(CheckpointError::WrongTag {
                path: path.display().to_string(),
                got: c.tag,
                expected: expected.to_string(),
            });
        }
        Ok(c)
    }
}

fn write_str16(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Malformed {
                path: self.path.to_string(),
                detail: format!("unexpected end of file at byte {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str16(&mut self) -> Result<String, CheckpointError> {
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::Malformed {
            path: self.path.to_string(),
            detail: "non-UTF-8 string".to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ck");
        let mut c = Container::new("demo");
        c.set_meta("hidden", 64);
        c.set_meta("note", "round trip");
        c.push_array("w", &[2, 3], vec![1.0, -2.5, 3.25e-10, f64::MIN_POSITIVE, 0.1 + 0.2, -0.0]);
        c.push_array("b", &[1, 3], vec![0.0, 1.0, 2.0]);
        c.write(&path).unwrap();
        let back = Container::read(&path).unwrap();
        assert_eq!(c, back);
        for (a, b) in c.arrays.iter().zip(back.arrays.iter()) {
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ck");
        std::fs::write(&path, b"NOTHEADERJUNKJUNK").unwrap();
        assert!(matches!(
            Container::read(&path),
            Err(CheckpointError::BadHeader { .. })
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ck");
        let mut c = Container::new("demo");
        c.push_array("w", &[4], vec![1.0; 4]);
        c.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            Container::read(&path),
            Err(CheckpointError::Malformed { .. })
        ));
    }

    #[test]
    fn wrong_tag_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tag.ck");
        Container::new("policy").write(&path).unwrap();
        assert!(matches!(
            Container::read_tagged(&path, "transition"),
            Err(CheckpointError::WrongTag { .. })
        ));
    }
}
