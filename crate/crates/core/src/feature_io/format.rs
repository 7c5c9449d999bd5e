//! `SCVF` stream files.
//!
//! Layout (all little-endian):
//!
//! | bytes | field                    |
//! |-------|--------------------------|
//! | 4     | magic `SCVF`             |
//! | 2     | u16 version (= 1)        |
//! | 4     | u32 frame_count          |
//! | 4     | u32 dim                  |
//! | 4     | u32 spatial_dim          |
//! | ...   | frame_count × dim f32, row-major |
//!
//! Labels and provenance live in a JSON sidecar `<name>.meta.json` next to
//! the stream file.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FeatureStream;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SCVF";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    #[serde(default)]
    pub labels: Option<Vec<u8>>,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub fps: Option<f64>,
}

/// Serialises the binary part of `stream`; returns the byte count.
pub fn write_stream_to<W: Write>(stream: &FeatureStream, mut out: W) -> Result<usize> {
    let count = u32::try_from(stream.len())
        .map_err(|_| Error::Format("frame count exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + stream.len() * stream.dim() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&(stream.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(stream.spatial_dim() as u32).to_le_bytes());
    for frame in stream.frames() {
        for v in &frame.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(buf.len())
}

/// Parses the binary part of a stream (no labels).
pub fn read_stream_from<R: Read>(mut input: R) -> Result<FeatureStream> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (count, dim, spatial_dim) = (word(6), word(10), word(14));
    if dim == 0 || spatial_dim == 0 || spatial_dim > dim {
        return Err(Error::Format(format!(
            "header dims inconsistent: dim={dim}, spatial_dim={spatial_dim}"
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count}x{dim} payload",
            payload.len() - expected
        )));
    }
    let rows = payload
        .chunks_exact(dim * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    FeatureStream::from_rows(dim, spatial_dim, rows, None)
}

/// Sidecar path for a stream file: `dir/name.scvf` → `dir/name.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

/// Writes the stream file and its sidecar; returns the stream file's byte count.
pub fn write_stream(stream: &FeatureStream, path: &Path) -> Result<usize> {
    let mut buf = Vec::new();
    let n = write_stream_to(stream, &mut buf)?;
    let meta = StreamMeta {
        labels: stream.labels().map(<[u8]>::to_vec),
        source: stream.source.clone(),
        fps: stream.fps,
    };
    fs::write(path, buf)?;
    fs::write(meta_path(path), serde_json::to_vec(&meta)?)?;
    Ok(n)
}

/// Reads a stream file, attaching labels and provenance from the sidecar when present.
pub fn read_stream(path: &Path) -> Result<FeatureStream> {
    let stream = read_stream_from(fs::File::open(path)?)?;
    let sidecar = meta_path(path);
    if !sidecar.exists() {
        return Ok(stream);
    }
    let meta: StreamMeta = serde_json::from_slice(&fs::read(&sidecar)?)?;
    let mut stream = stream.with_labels(meta.labels)?;
    stream.source = meta.source;
    stream.fps = meta.fps;
    Ok(stream)
}
