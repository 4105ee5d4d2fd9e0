//! The `.fbn` container.
//!
//! Layout, in order:
//!
//! ```text
//! b"FBN" + version byte ('1')
//! u32 little-endian header length in bytes
//! UTF-8 header: one `key: value` pair per line
//! raw payload (little-endian f32 or f64, as declared by `dtype`)
//! ```
//!
//! The container layer only knows about `dtype` and `payload_bytes`; the typed
//! readers (bundles, maps, labelled matrices, responses) own the other keys.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 3] = b"FBN";
pub const VERSION: u8 = b'1';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32Le,
    F64Le,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32Le => "f32le",
            Dtype::F64Le => "f64le",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32le" => Ok(Dtype::F32Le),
            "f64le" => Ok(Dtype::F64Le),
            other => Err(Error::Header(format!("unknown dtype {other:?}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32Le => 4,
            Dtype::F64Le => 8,
        }
    }
}

/// Ordered key-value header.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace a key, keeping first-insertion order.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        if let Some(slot) = self.entries.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value;
        } else {
            self.entries.push((key.to_string(), value));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Header(format!("missing key {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Header(format!("cannot parse {key} = {raw:?}")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    fn encode(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in &self.entries {
            if k.is_empty() || k.contains([':', '\n', '\r']) || k.trim() != k {
                return Err(Error::Header(format!("invalid header key {k:?}")));
            }
            if v.contains(['\n', '\r']) || v.trim() != v {
                return Err(Error::Header(format!("invalid value for {k}: {v:?}")));
            }
            out.push_str(k);
            out.push_str(": ");
            out.push_str(v);
            out.push('\n');
        }
        Ok(out)
    }

    fn decode(text: &str) -> Result<Self> {
        let mut header = Header::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Header(format!("line without ':' {line:?}")))?;
            let k = k.trim();
            if header.get(k).is_some() {
                return Err(Error::Header(format!("duplicate key {k:?}")));
            }
            header.set(k, v.trim());
        }
        Ok(header)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            Payload::F32(_) => Dtype::F32Le,
            Payload::F64(_) => Dtype::F64Le,
        }
    }

    /// Widen to working precision.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub payload: Payload,
}

impl Container {
    pub fn new(header: Header, payload: Payload) -> Self {
        Self { header, payload }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = self.header.clone();
        let dtype = self.payload.dtype();
        header.set("dtype", dtype.as_str());
        header.set("payload_bytes", self.payload.len() * dtype.width());
        let text = header.encode()?;
        let text_len = u32::try_from(text.len())
            .map_err(|_| Error::Header("header longer than 4 GiB".into()))?;

        let mut out = Vec::with_capacity(8 + text.len() + self.payload.len() * dtype.width());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&text_len.to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        match &self.payload {
            Payload::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..3] != MAGIC {
            return Err(Error::BadMagic(origin.to_string()));
        }
        if bytes[3] != VERSION {
            return Err(Error::Version {
                found: bytes[3] as char,
                expected: VERSION as char,
            });
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() < header_len {
            return Err(Error::SizeMismatch(format!(
                "{origin}: header declares {header_len} bytes but only {} remain",
                body.len()
            )));
        }
        let text = std::str::from_utf8(&body[..header_len])
            .map_err(|_| Error::Header(format!("{origin}: header is not UTF-8")))?;
        let header = Header::decode(text)?;
        let dtype = Dtype::parse(header.require("dtype")?)?;
        let declared: usize = header.parse("payload_bytes")?;
        let raw = &body[header_len..];
        if raw.len() != declared {
            return Err(Error::SizeMismatch(format!(
                "{origin}: header declares {declared} payload bytes, found {}",
                raw.len()
            )));
        }
        if raw.len() % dtype.width() != 0 {
            return Err(Error::SizeMismatch(format!(
                "{origin}: payload of {} bytes is not a whole number of {} values",
                raw.len(),
                dtype.as_str()
            )));
        }
        let payload = match dtype {
            Dtype::F32Le => Payload::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64Le => Payload::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Container { header, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Write via a sibling temporary file and rename, so readers never observe a
/// partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut h = Header::new();
        h.set("kind", "test");
        h.set("rows", 2);
        Container::new(h, Payload::F64(vec![1.0, -2.5, 3.25]))
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back.payload, c.payload);
        assert_eq!(back.header.get("kind"), Some("test"));
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[3] = b'2';
        assert!(matches!(
            Container::from_bytes(&bytes, "mem"),
            Err(Error::Version { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            Container::from_bytes(&bytes, "mem"),
            Err(Error::BadMagic(_))
        ));
    }

    #[test]
    fn truncated_payload_is_size_mismatch() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Container::from_bytes(cut, "mem"),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn header_values_cannot_break_lines() {
        let mut h = Header::new();
        h.set("id", "a\nb");
        assert!(Container::new(h, Payload::F32(vec![])).to_bytes().is_err());
    }
}
