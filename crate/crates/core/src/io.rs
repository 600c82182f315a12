//! File plumbing: atomic writes, index lists, and the header-plus-arrays
//! container used for persisted models.
//!
//! Array container layout:
//!
//! ```text
//! FOLDKIT-ARRAYS 1\n
//! <one line of JSON: {"kind": ..., "meta": {...}, "arrays": [{"name", "len"}...]}>\n
//! <little-endian f64 payload, arrays back to back in header order>
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

const ARRAY_MAGIC: &str = "FOLDKIT-ARRAYS 1";

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads a whitespace/newline separated list of non-negative integers.
/// `#` starts a comment.
pub fn read_index_list(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_index_list(&text, &path.display().to_string())
}

pub fn parse_index_list(text: &str, source_name: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("");
        for tok in content.split_whitespace() {
            out.push(tok.parse().map_err(|_| Error::Parse {
                source_name: source_name.to_string(),
                line: n + 1,
                message: format!("invalid index '{tok}'"),
            })?);
        }
    }
    Ok(out)
}

pub fn write_index_list(path: &Path, indices: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(indices.len() * 6);
    for i in indices {
        text.push_str(&i.to_string());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayHeader {
    kind: String,
    meta: Value,
    arrays: Vec<ArrayEntry>,
}

/// Contents of an array container file.
#[derive(Debug, Clone)]
pub struct ArrayFile {
    pub kind: String,
    pub meta: Value,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl ArrayFile {
    pub fn take(&mut self, name: &str) -> Result<Vec<f64>> {
        let pos = self
            .arrays
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("array '{name}' missing from {} file", self.kind)))?;
        Ok(self.arrays.remove(pos).1)
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Format(format!("header field '{key}' missing or not an integer")))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Format(format!("header field '{key}' missing or not a string")))
    }
}

pub fn encode_arrays(kind: &str, meta: Value, arrays: &[(&str, &[f64])]) -> Vec<u8> {
    let header = ArrayHeader {
        kind: kind.to_string(),
        meta,
        arrays: arrays
            .iter()
            .map(|(name, data)| ArrayEntry {
                name: name.to_string(),
                len: data.len(),
            })
            .collect(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(ARRAY_MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
    out.push(b'\n');
    for (_, data) in arrays {
        for v in data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_arrays(bytes: &[u8]) -> Result<ArrayFile> {
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    let magic = lines.next().unwrap_or_default();
    if magic != ARRAY_MAGIC.as_bytes() {
        return Err(Error::Format("not a foldkit array file (bad magic)".into()));
    }
    let header_line = lines.next().ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: ArrayHeader =
        serde_json::from_slice(header_line).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let payload = lines.next().unwrap_or_default();
    let total: usize = header.arrays.iter().map(|a| a.len).sum();
    if payload.len() != total * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header declares {} values",
            payload.len(),
            total
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let arrays = header
        .arrays
        .into_iter()
        .map(|a| (a.name, values.by_ref().take(a.len).collect()))
        .collect();
    Ok(ArrayFile {
        kind: header.kind,
        meta: header.meta,
        arrays,
    })
}

pub fn write_arrays(path: &Path, kind: &str, meta: Value, arrays: &[(&str, &[f64])]) -> Result<()> {
    write_atomic(path, &encode_arrays(kind, meta, arrays))
}

pub fn read_arrays(path: &Path, expected_kind: &str) -> Result<ArrayFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file = decode_arrays(&bytes)?;
    if file.kind != expected_kind {
        return Err(Error::Format(format!(
            "{} holds a '{}' file, expected '{expected_kind}'",
            path.display(),
            file.kind
        )));
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn arrays_round_trip() {
        let a = [1.0, -2.5, f64::MIN_POSITIVE];
        let b = [3.0; 4];
        let bytes = encode_arrays("test", json!({"k": 3}), &[("a", &a), ("b", &b)]);
        let mut file = decode_arrays(&bytes).unwrap();
        assert_eq!(file.kind, "test");
        assert_eq!(file.meta_usize("k").unwrap(), 3);
        assert_eq!(file.take("b").unwrap(), b.to_vec());
        assert_eq!(file.take("a").unwrap(), a.to_vec());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = encode_arrays("test", json!({}), &[("a", &[1.0, 2.0])]);
        bytes.pop();
        assert!(decode_arrays(&bytes).is_err());
    }

    #[test]
    fn index_list_parsing() {
        assert_eq!(parse_index_list("1 2\n# c\n3 # x\n", "l").unwrap(), vec![1, 2, 3]);
        assert!(matches!(
            parse_index_list("1\n-2\n", "l"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        let leftovers = std::fs::read_dir(path.parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
