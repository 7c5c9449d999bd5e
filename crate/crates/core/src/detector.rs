//! Sequential scoring of the frames that follow the training prefix.
//!
//! Each frame is predicted from the `T` feature vectors before it. A rolling
//! buffer holds the actual feature for frames that scored below the threshold
//! and the *predicted* feature for frames that were flagged, so the input
//! history stays free of anomalous content. Flags are then thinned by a
//! temporal-consistency filter.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::FeatureStream;
use crate::numerics::Tensor2;
use crate::trainer::{mse_loss, TrainArtifact};
use crate::transformer::SelfContext;

pub const VERDICT_HEADER: &str = "frame,score,threshold,raw_flag,final_flag,used_substitute";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub frame_index: usize,
    pub score: f64,
    pub threshold: f64,
    pub raw_flag: bool,
    pub final_flag: bool,
    /// The prediction, not the actual feature, entered later windows.
    pub used_substitute: bool,
}

/// Neighbourhood rule: a flagged frame survives when at least `min_neighbors`
/// of the frames within `half_window` of it (excluding itself) are flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub half_window: usize,
    pub min_neighbors: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            half_window: 2,
            min_neighbors: 2,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_neighbors == 0 || self.min_neighbors > 2 * self.half_window {
            return Err(Error::InvalidConfig(format!(
                "min_neighbors {} must be in 1..={}",
                self.min_neighbors,
                2 * self.half_window
            )));
        }
        Ok(())
    }
}

pub fn temporal_consistency(raw: &[bool], config: &ConsistencyConfig) -> Result<Vec<bool>> {
    config.validate()?;
    let k = config.half_window;
    let n = raw.len();
    Ok((0..n)
        .map(|t| {
            if !raw[t] {
                return false;
            }
            let lo = t.saturating_sub(k);
            let hi = (t + k).min(n - 1);
            let size = hi - lo;
            let flagged = (lo..=hi).filter(|&s| s != t && raw[s]).count();
            flagged >= config.min_neighbors.min(size)
        })
        .collect())
}

/// Frame-by-frame scorer carrying the rolling input buffer.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    artifact: &'a TrainArtifact,
    toggle: SelfContext,
    threshold: f64,
    buffer: VecDeque<Vec<f64>>,
    next_frame: usize,
}

impl<'a> Scorer<'a> {
    /// `history` holds the last `T` features before `next_frame`, oldest
    /// first, in raw (un-normalised) units.
    pub fn new(
        artifact: &'a TrainArtifact,
        history: Vec<Vec<f64>>,
        next_frame: usize,
        toggle: SelfContext,
    ) -> Result<Self> {
        let t = artifact.window();
        let d = artifact.params.config().feature_dim;
        if history.len() != t {
            return Err(Error::shape(
                "score_stream",
                format!("history of {} frames, window is {t}", history.len()),
            ));
        }
        let mut buffer = VecDeque::with_capacity(t);
        for mut h in history {
            if h.len() != d {
                return Err(Error::shape(
                    "score_stream",
                    format!("feature dim {} vs model {d}", h.len()),
                ));
            }
            if let Some(n) = &artifact.report.normalizer {
                n.apply(&mut h);
            }
            buffer.push_back(h);
        }
        Ok(Self {
            artifact,
            toggle,
            threshold: artifact.threshold(),
            buffer,
            next_frame,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// Current input window, oldest first, in model units.
    pub fn buffer(&self) -> &VecDeque<Vec<f64>> {
        &self.buffer
    }

    /// Scores the next frame. `force_flag` overrides the threshold decision.
    pub fn step_with(&mut self, actual: &[f64], force_flag: Option<bool>) -> Result<Verdict> {
        let d = self.artifact.params.config().feature_dim;
        if actual.len() != d {
            return Err(Error::shape(
                "score_stream",
                format!("frame {} has dim {}, model {d}", self.next_frame, actual.len()),
            ));
        }
        let mut actual = actual.to_vec();
        if let Some(n) = &self.artifact.report.normalizer {
            n.apply(&mut actual);
        }
        let rows = self.buffer.len();
        let data = self.buffer.iter().flatten().copied().collect();
        let window = Tensor2::new(rows, d, data)?;
        let predicted = self.artifact.params.predict_next(&window, self.toggle)?;
        let score = mse_loss(&predicted, &actual)?;
        let raw_flag = force_flag.unwrap_or(score >= self.threshold);
        self.buffer.pop_front();
        self.buffer
            .push_back(if raw_flag { predicted } else { actual });
        let verdict = Verdict {
            frame_index: self.next_frame,
            score,
            threshold: self.threshold,
            raw_flag,
            final_flag: raw_flag,
            used_substitute: raw_flag,
        };
        self.next_frame += 1;
        Ok(verdict)
    }

    pub fn step(&mut self, actual: &[f64]) -> Result<Verdict> {
        self.step_with(actual, None)
    }
}

fn check_start(artifact: &TrainArtifact, stream: &FeatureStream, start_index: usize) -> Result<()> {
    let t = artifact.window();
    if start_index <= t {
        return Err(Error::InvalidConfig(format!(
            "start_index {start_index} must exceed the window {t}"
        )));
    }
    if start_index > stream.len() + 1 {
        return Err(Error::InvalidConfig(format!(
            "start_index {start_index} beyond stream of {} frames",
            stream.len()
        )));
    }
    if stream.dim() != artifact.params.config().feature_dim {
        return Err(Error::shape(
            "score_stream",
            format!(
                "stream dim {} vs model {}",
                stream.dim(),
                artifact.params.config().feature_dim
            ),
        ));
    }
    Ok(())
}

/// Raw verdicts for frames `start_index..=len` (1-based). `final_flag`
/// mirrors `raw_flag` until [`temporal_consistency`] is applied.
pub fn score_stream(
    artifact: &TrainArtifact,
    stream: &FeatureStream,
    start_index: usize,
    toggle: SelfContext,
) -> Result<Vec<Verdict>> {
    check_start(artifact, stream, start_index)?;
    let t = artifact.window();
    let first = start_index - 1;
    let history = (first - t..first).map(|i| stream.values_f64(i)).collect();
    let mut scorer = Scorer::new(artifact, history, start_index, toggle)?;
    (first..stream.len())
        .map(|i| scorer.step(&stream.values_f64(i)))
        .collect()
}

/// Scoring followed by the consistency filter, from an explicit start frame.
pub fn detect_from(
    artifact: &TrainArtifact,
    stream: &FeatureStream,
    start_index: usize,
    consistency: &ConsistencyConfig,
    toggle: SelfContext,
) -> Result<Vec<Verdict>> {
    consistency.validate()?;
    let mut verdicts = score_stream(artifact, stream, start_index, toggle)?;
    let raw: Vec<bool> = verdicts.iter().map(|v| v.raw_flag).collect();
    for (v, f) in verdicts.iter_mut().zip(temporal_consistency(&raw, consistency)?) {
        v.final_flag = f;
    }
    Ok(verdicts)
}

/// Verdicts for every frame after the `n_shots` training prefix.
pub fn detect(
    artifact: &TrainArtifact,
    stream: &FeatureStream,
    consistency: &ConsistencyConfig,
    toggle: SelfContext,
) -> Result<Vec<Verdict>> {
    let start = artifact.report.train_config.n_shots + 1;
    detect_from(artifact, stream, start, consistency, toggle)
}

pub fn verdicts_to_csv(verdicts: &[Verdict]) -> String {
    let mut out = String::from(VERDICT_HEADER);
    out.push('\n');
    for v in verdicts {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            v.frame_index,
            v.score,
            v.threshold,
            u8::from(v.raw_flag),
            u8::from(v.final_flag),
            u8::from(v.used_substitute)
        );
    }
    out
}

pub fn write_verdicts(verdicts: &[Verdict], path: &Path) -> Result<()> {
    fs::write(path, verdicts_to_csv(verdicts))?;
    Ok(())
}

pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(VERDICT_HEADER) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    let flag = |s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Format(format!("bad flag {other:?}"))),
    };
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("bad number {s:?}")))
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Format(format!("expected 6 fields: {line}")));
            }
            Ok(Verdict {
                frame_index: f[0]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad frame {:?}", f[0])))?,
                score: num(f[1])?,
                threshold: num(f[2])?,
                raw_flag: flag(f[3])?,
                final_flag: flag(f[4])?,
                used_substitute: flag(f[5])?,
            })
        })
        .collect()
}
