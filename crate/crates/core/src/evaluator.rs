//! Frame-level ROC/AUC, curve files and the feature/self-context ablation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{detect, ConsistencyConfig, Verdict};
use crate::error::{Error, Result};
use crate::feature_io::{FeatureFamily, FeatureStream};
use crate::trainer::{train_few_shot, TrainArtifact, TrainConfig};
use crate::transformer::{ModelConfig, SelfContext};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "frame_auc",
            format!("{} scores, {} labels", scores.len(), labels.len()),
        ));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite { position: i });
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    Ok((pos, neg))
}

/// Probability that a random anomalous frame outscores a random normal one,
/// ties counting one half (Mann–Whitney U over the positive/negative product).
pub fn frame_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks: a tie group occupying ranks lo+1..=hi gets (lo + 1 + hi) / 2
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        let positives = order[i..=j].iter().filter(|&&k| labels[k] != 0).count();
        rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// ROC operating points from the strictest threshold (+inf, giving (0,0))
/// down to the lowest distinct score (giving (1,1)).
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            tpr: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Labels for the verdicts' frames, looked up in the stream's label track.
pub fn verdict_labels(verdicts: &[Verdict], stream: &FeatureStream) -> Result<Vec<u8>> {
    let labels = stream
        .labels()
        .ok_or_else(|| Error::InvalidConfig("stream has no labels".into()))?;
    verdicts
        .iter()
        .map(|v| {
            labels
                .get(v.frame_index.wrapping_sub(1))
                .copied()
                .ok_or_else(|| Error::InvalidConfig(format!("no label for frame {}", v.frame_index)))
        })
        .collect()
}

/// Frame AUC of the verdict scores.
pub fn verdict_auc(verdicts: &[Verdict], stream: &FeatureStream) -> Result<f64> {
    let labels = verdict_labels(verdicts, stream)?;
    let scores: Vec<f64> = verdicts.iter().map(|v| v.score).collect();
    frame_auc(&scores, &labels)
}

/// Files written by [`emit_curves`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFiles {
    pub scores: PathBuf,
    pub loss_curve: PathBuf,
    pub roc: Option<PathBuf>,
    pub auc: Option<f64>,
}

pub const SCORES_FILE: &str = "scores.csv";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const ROC_FILE: &str = "roc.csv";

/// Writes `scores.csv` (frame,score), `loss_curve.csv` (epoch,mean_loss) and,
/// when labels are given, `roc.csv` (threshold,fpr,tpr).
pub fn emit_curves(
    artifact: &TrainArtifact,
    verdicts: &[Verdict],
    labels: Option<&[u8]>,
    dir: &Path,
) -> Result<CurveFiles> {
    let mut scores = String::from("frame,score\n");
    for v in verdicts {
        let _ = writeln!(scores, "{},{}", v.frame_index, v.score);
    }
    let mut loss = String::from("epoch,mean_loss\n");
    for (e, l) in artifact.report.loss_curve.iter().enumerate() {
        let _ = writeln!(loss, "{},{}", e + 1, l);
    }
    let roc = match labels {
        Some(labels) => {
            let s: Vec<f64> = verdicts.iter().map(|v| v.score).collect();
            let points = roc_points(&s, labels)?;
            let mut text = String::from("threshold,fpr,tpr\n");
            for p in &points {
                let _ = writeln!(text, "{},{},{}", p.threshold, p.fpr, p.tpr);
            }
            Some((text, frame_auc(&s, labels)?))
        }
        None => None,
    };
    fs::create_dir_all(dir)?;
    let files = CurveFiles {
        scores: dir.join(SCORES_FILE),
        loss_curve: dir.join(LOSS_CURVE_FILE),
        roc: roc.as_ref().map(|_| dir.join(ROC_FILE)),
        auc: roc.as_ref().map(|(_, a)| *a),
    };
    fs::write(&files.scores, scores)?;
    fs::write(&files.loss_curve, loss)?;
    if let (Some((text, _)), Some(path)) = (roc, &files.roc) {
        fs::write(path, text)?;
    }
    Ok(files)
}

/// Parses a `roc.csv` back into points.
pub fn read_roc(path: &Path) -> Result<Vec<RocPoint>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<f64> = l
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|_| Error::Format(format!("bad ROC row {l:?}"))))
                .collect::<Result<_>>()?;
            if f.len() != 3 {
                return Err(Error::Format(format!("bad ROC row {l:?}")));
            }
            Ok(RocPoint {
                threshold: f[0],
                fpr: f[1],
                tpr: f[2],
            })
        })
        .collect()
}

/// One ablation cell: which feature families feed the model and whether the
/// decoder self-context is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub use_spatial: bool,
    pub use_temporal: bool,
    pub self_context: bool,
}

impl AblationSpec {
    pub const TEMPORAL_ONLY: Self = Self {
        use_spatial: false,
        use_temporal: true,
        self_context: true,
    };
    pub const SPATIAL_ONLY: Self = Self {
        use_spatial: true,
        use_temporal: false,
        self_context: true,
    };
    pub const NO_SELF_CONTEXT: Self = Self {
        use_spatial: true,
        use_temporal: true,
        self_context: false,
    };
    pub const FULL: Self = Self {
        use_spatial: true,
        use_temporal: true,
        self_context: true,
    };

    /// Models I–IV in table order.
    pub fn standard() -> [Self; 4] {
        [
            Self::TEMPORAL_ONLY,
            Self::SPATIAL_ONLY,
            Self::NO_SELF_CONTEXT,
            Self::FULL,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_spatial && !self.use_temporal {
            return Err(Error::InvalidConfig(
                "ablation needs at least one feature family".into(),
            ));
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match *self {
            s if s == Self::TEMPORAL_ONLY => "I".into(),
            s if s == Self::SPATIAL_ONLY => "II".into(),
            s if s == Self::NO_SELF_CONTEXT => "III".into(),
            s if s == Self::FULL => "IV".into(),
            s => format!(
                "custom(s={},t={},sc={})",
                u8::from(s.use_spatial),
                u8::from(s.use_temporal),
                u8::from(s.self_context)
            ),
        }
    }

    /// The stream restricted to the enabled families.
    pub fn select(&self, stream: &FeatureStream) -> Result<FeatureStream> {
        self.validate()?;
        match (self.use_spatial, self.use_temporal) {
            (true, true) => Ok(stream.clone()),
            (true, false) => stream.select_family(FeatureFamily::Spatial),
            _ => stream.select_family(FeatureFamily::Temporal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub spec: AblationSpec,
    pub feature_dim: usize,
    pub threshold: f64,
    pub auc: f64,
}

/// Trains and evaluates one model per spec. Every cell uses the same seeds,
/// so cells differ only in their inputs and decoder toggle.
pub fn run_ablation(
    stream: &FeatureStream,
    specs: &[AblationSpec],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    consistency: &ConsistencyConfig,
) -> Result<Vec<AblationRow>> {
    if stream.labels().is_none() {
        return Err(Error::InvalidConfig("ablation needs a labelled stream".into()));
    }
    specs.iter().try_for_each(AblationSpec::validate)?;
    specs
        .par_iter()
        .map(|spec| {
            let cell = spec.select(stream)?;
            let mc = ModelConfig {
                feature_dim: cell.dim(),
                ..model_config.clone()
            };
            let toggle = SelfContext::from_enabled(spec.self_context);
            let artifact = train_few_shot(&cell, &mc, train_config, toggle)?;
            let verdicts = detect(&artifact, &cell, consistency, toggle)?;
            Ok(AblationRow {
                spec: *spec,
                feature_dim: cell.dim(),
                threshold: artifact.threshold(),
                auc: verdict_auc(&verdicts, &cell)?,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("model,spatial,temporal,self_context,feature_dim,threshold,auc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.spec.name(),
            u8::from(r.spec.use_spatial),
            u8::from(r.spec.use_temporal),
            u8::from(r.spec.self_context),
            r.feature_dim,
            r.threshold,
            r.auc
        );
    }
    out
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "yes" } else { "no" };
    let mut out = format!(
        "{:<8} {:>8} {:>9} {:>13} {:>6} {:>8}\n",
        "model", "spatial", "temporal", "self-context", "dim", "AUC %"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>9} {:>13} {:>6} {:>8.2}",
            r.spec.name(),
            mark(r.spec.use_spatial),
            mark(r.spec.use_temporal),
            mark(r.spec.self_context),
            r.feature_dim,
            100.0 * r.auc
        );
    }
    out
}
