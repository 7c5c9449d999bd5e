//! Frame-feature data model, the `SCVF` stream file format and a synthetic
//! stream generator.
//!
//! A frame feature is the concatenation of a spatial block (appearance
//! features, conventionally 512 wide) followed by a temporal block (motion
//! features of free width K), so `dim = spatial_dim + K`.

mod format;
mod synth;

pub use format::{
    meta_path, read_stream, read_stream_from, write_stream, write_stream_to, StreamMeta,
    FORMAT_VERSION, MAGIC,
};
pub use synth::{generate_synthetic, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// Width of the spatial block produced by the usual 512-d image backbone.
pub const DEFAULT_SPATIAL_DIM: usize = 512;

/// One frame's feature vector. `index` is the 1-based frame position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeature {
    pub index: usize,
    pub values: Vec<f32>,
}

/// Concatenates a spatial and a temporal feature block, spatial first.
pub fn concat_features(spatial: &[f32], temporal: &[f32]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(spatial.len() + temporal.len());
    out.extend_from_slice(spatial);
    out.extend_from_slice(temporal);
    check_finite(&out)?;
    Ok(out)
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(position) => Err(Error::NonFinite { position }),
        None => Ok(()),
    }
}

/// Which part of a stream's feature vector to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFamily {
    Spatial,
    Temporal,
}

/// Ordered, dimension-consistent sequence of frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    dim: usize,
    spatial_dim: usize,
    frames: Vec<FrameFeature>,
    labels: Option<Vec<u8>>,
    pub source: String,
    pub fps: Option<f64>,
}

impl FeatureStream {
    /// Builds a stream from raw rows; frame indices are assigned 1, 2, ...
    pub fn from_rows(
        dim: usize,
        spatial_dim: usize,
        rows: Vec<Vec<f32>>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("stream dim must be positive".into()));
        }
        if spatial_dim == 0 || spatial_dim > dim {
            return Err(Error::InvalidConfig(format!(
                "spatial_dim {spatial_dim} must be in 1..={dim}"
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::shape(
                    "feature_stream",
                    format!("frame {} has {} values, stream dim is {dim}", i + 1, row.len()),
                ));
            }
            check_finite(row).map_err(|_| {
                let col = row.iter().position(|v| !v.is_finite()).unwrap_or(0);
                Error::NonFinite {
                    position: i * dim + col,
                }
            })?;
        }
        if let Some(labels) = &labels {
            if labels.len() != rows.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} labels for {} frames",
                    labels.len(),
                    rows.len()
                )));
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
            }
        }
        let frames = rows
            .into_iter()
            .enumerate()
            .map(|(i, values)| FrameFeature {
                index: i + 1,
                values,
            })
            .collect();
        Ok(Self {
            dim,
            spatial_dim,
            frames,
            labels,
            source: String::new(),
            fps: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    pub fn temporal_dim(&self) -> usize {
        self.dim - self.spatial_dim
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[FrameFeature] {
        &self.frames
    }

    /// Frame at 1-based position `t`.
    pub fn frame(&self, t: usize) -> Option<&FrameFeature> {
        t.checked_sub(1).and_then(|i| self.frames.get(i))
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} labels for {} frames",
                    l.len(),
                    self.len()
                )));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Frame values widened to f64, 0-based.
    pub fn values_f64(&self, i: usize) -> Vec<f64> {
        self.frames[i].values.iter().map(|&v| f64::from(v)).collect()
    }

    /// Stacks `len` consecutive frames starting at 0-based `first` into a matrix.
    pub fn window(&self, first: usize, len: usize) -> Result<Tensor2> {
        if first + len > self.len() {
            return Err(Error::shape(
                "window",
                format!("frames {}..{} of {}", first + 1, first + len, self.len()),
            ));
        }
        let data = self.frames[first..first + len]
            .iter()
            .flat_map(|f| f.values.iter().map(|&v| f64::from(v)))
            .collect();
        Tensor2::new(len, self.dim, data)
    }

    /// First `len` frames (labels truncated alongside).
    pub fn prefix(&self, len: usize) -> FeatureStream {
        let len = len.min(self.len());
        FeatureStream {
            dim: self.dim,
            spatial_dim: self.spatial_dim,
            frames: self.frames[..len].to_vec(),
            labels: self.labels.as_ref().map(|l| l[..len].to_vec()),
            source: self.source.clone(),
            fps: self.fps,
        }
    }

    /// Keeps only the coordinates of one feature family; the result's
    /// `spatial_dim` is its full width.
    pub fn select_family(&self, family: FeatureFamily) -> Result<FeatureStream> {
        let range = match family {
            FeatureFamily::Spatial => 0..self.spatial_dim,
            FeatureFamily::Temporal => self.spatial_dim..self.dim,
        };
        if range.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "stream has no {family:?} coordinates"
            )));
        }
        let width = range.len();
        let rows = self
            .frames
            .iter()
            .map(|f| f.values[range.clone()].to_vec())
            .collect();
        let mut out = FeatureStream::from_rows(width, width, rows, self.labels.clone())?;
        out.source = self.source.clone();
        out.fps = self.fps;
        Ok(out)
    }
}
