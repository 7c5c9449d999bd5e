//! Model checkpoint files.
//!
//! Layout (little-endian): magic `SCVM`, u16 version, then the config as
//! u32 feature_dim, model_dim, heads, layers, mlp_hidden, window, u8 readout,
//! u64 seed; then u32 tensor count followed by each tensor in
//! [`layout`](super::layout) order as u32 rows, u32 cols, rows×cols f32.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{layout, ModelConfig, ModelParams, Readout};
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SCVM";
const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<usize> {
    let c = params.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.feature_dim, c.model_dim, c.heads, c.layers, c.mlp_hidden, c.window] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(c.readout.code());
    buf.extend_from_slice(&c.seed.to_le_bytes());
    buf.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for t in params.tensors() {
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(buf.len())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Truncated {
                expected: self.at + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

fn same_structure(a: &ModelConfig, b: &ModelConfig) -> bool {
    (a.feature_dim, a.model_dim, a.heads, a.layers, a.mlp_hidden, a.window, a.readout)
        == (b.feature_dim, b.model_dim, b.heads, b.layers, b.mlp_hidden, b.window, b.readout)
}

/// Parses a checkpoint; when `expected` is given, a structurally different
/// stored config is rejected.
pub fn read_checkpoint<R: Read>(mut input: R, expected: Option<&ModelConfig>) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, at: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let feature_dim = r.u32()?;
    let model_dim = r.u32()?;
    let heads = r.u32()?;
    let layers = r.u32()?;
    let mlp_hidden = r.u32()?;
    let window = r.u32()?;
    let readout = Readout::from_code(r.take(1)?[0])
        .ok_or_else(|| Error::Format("unknown readout code".into()))?;
    let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let config = ModelConfig {
        feature_dim,
        model_dim,
        heads,
        layers,
        mlp_hidden,
        window,
        readout,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    if let Some(exp) = expected {
        if !same_structure(exp, &config) {
            return Err(Error::InvalidConfig(format!(
                "checkpoint config {config:?} does not match {exp:?}"
            )));
        }
    }
    let specs = layout(&config);
    let count = r.u32()?;
    if count != specs.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, config implies {}",
            specs.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for s in &specs {
        let (rows, cols) = (r.u32()?, r.u32()?);
        if (rows, cols) != (s.rows, s.cols) {
            return Err(Error::Format(format!(
                "{}: stored {rows}x{cols}, expected {}x{}",
                s.name, s.rows, s.cols
            )));
        }
        let raw = r.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        tensors.push(Tensor2::new(rows, cols, data)?);
    }
    if r.at != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    ModelParams::from_tensors(&config, tensors)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<usize> {
    let mut buf = Vec::new();
    let n = write_checkpoint(params, &mut buf)?;
    fs::write(path, buf)?;
    Ok(n)
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<ModelParams> {
    read_checkpoint(fs::File::open(path)?, expected)
}
