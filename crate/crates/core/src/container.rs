//! Binary container shared by checkpoints and dataset caches.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic       8 bytes   e.g. "MIMCKPT1"
//! manifest    u64 length, then UTF-8 JSON
//! arrays      raw f64 values, concatenated in manifest order
//! ```
//!
//! The manifest always carries an `arrays` list of `{name, shape}` entries;
//! everything else in it is caller-defined metadata.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{io_err, Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MIMCKPT1";
pub const DATASET_MAGIC: &[u8; 8] = b"MIMDATA1";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub metadata: Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn to_bytes(&self, magic: &[u8; 8]) -> Result<Vec<u8>> {
        let mut manifest = match &self.metadata {
            Value::Object(m) => m.clone(),
            Value::Null => serde_json::Map::new(),
            _ => return Err(Error::Container("metadata must be a JSON object".into())),
        };
        let entries: Vec<ArrayEntry> = self
            .arrays
            .iter()
            .map(|(name, t)| ArrayEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        manifest.insert("arrays".into(), serde_json::to_value(entries)?);
        let json = serde_json::to_vec(&Value::Object(manifest))?;

        let total: usize = self.arrays.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * total);
        out.extend_from_slice(magic);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Container("file shorter than header".into()));
        }
        if &bytes[..8] != magic {
            return Err(Error::Container(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..8]),
                String::from_utf8_lossy(magic)
            )));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(Error::Container("truncated manifest".into()));
        }
        let mut metadata: Value = serde_json::from_slice(&body[..len])?;
        let entries: Vec<ArrayEntry> = match metadata.as_object_mut().and_then(|m| m.remove("arrays")) {
            Some(v) => serde_json::from_value(v)?,
            None => return Err(Error::Container("manifest has no `arrays` list".into())),
        };
        let mut data = &body[len..];
        let mut arrays = Vec::with_capacity(entries.len());
        for e in entries {
            let n: usize = e.shape.iter().product();
            if data.len() < 8 * n {
                return Err(Error::Container(format!("truncated array `{}`", e.name)));
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[8 * n..];
            arrays.push((e.name, Tensor::new(e.shape, values)?));
        }
        if !data.is_empty() {
            return Err(Error::Container(format!("{} trailing bytes", data.len())));
        }
        Ok(Self { metadata, arrays })
    }

    pub fn write(&self, path: &Path, magic: &[u8; 8]) -> Result<()> {
        write_atomic(path, &self.to_bytes(magic)?)
    }

    pub fn read(path: &Path, magic: &[u8; 8]) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::from_bytes(&bytes, magic)
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let file_name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    // unique per writer: several threads may publish the same file at once
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let n = NEXT.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(".{file_name}.tmp{}.{n}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(format!("creating {}", tmp.display())))?;
        f.write_all(bytes).map_err(io_err(format!("writing {}", tmp.display())))?;
        f.sync_all().ok();
    }
    fs::rename(&tmp, path).map_err(io_err(format!("renaming to {}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn concurrent_writers_to_one_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shared.bin");
        std::thread::scope(|s| {
            for i in 0..8u8 {
                let path = &path;
                s.spawn(move || write_atomic(path, &[i; 64]).unwrap());
            }
        });
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.iter().all(|&b| b == bytes[0]));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn round_trip(
            a in proptest::collection::vec(-1e6f64..1e6, 0..20),
            b in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..10),
        ) {
            let c = Container {
                metadata: json!({"seed": 3, "note": "x"}),
                arrays: vec![
                    ("a".into(), Tensor::new(vec![a.len()], a).unwrap()),
                    ("b".into(), Tensor::new(vec![1, b.len()], b).unwrap()),
                ],
            };
            let bytes = c.to_bytes(CHECKPOINT_MAGIC).unwrap();
            let back = Container::from_bytes(&bytes, CHECKPOINT_MAGIC).unwrap();
            prop_assert_eq!(back, c);
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let c = Container {
            metadata: json!({}),
            arrays: vec![("w".into(), Tensor::ones(&[2, 2]))],
        };
        let bytes = c.to_bytes(CHECKPOINT_MAGIC).unwrap();
        assert_eq!(&bytes[..8], b"MIMCKPT1");
        assert!(Container::from_bytes(&bytes, DATASET_MAGIC).is_err());
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3], CHECKPOINT_MAGIC).is_err());
    }
}
