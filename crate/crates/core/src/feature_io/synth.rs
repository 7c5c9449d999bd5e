use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FeatureStream;
use crate::error::{Error, Result};

/// Parameters of a synthetic feature stream.
///
/// Normal frames follow a per-coordinate sum of low-frequency sinusoids whose
/// frequencies are harmonics of `period`, plus Gaussian noise. Frames inside
/// an anomaly span are shifted by a fixed random direction whose RMS over
/// coordinates equals `anomaly_magnitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    /// Width of the spatial block; `None` means `dim / 2` (at least 1).
    pub spatial_dim: Option<usize>,
    pub length: usize,
    /// Inclusive 1-based frame ranges.
    pub anomaly_spans: Vec<(usize, usize)>,
    pub anomaly_magnitude: f64,
    pub noise_std: f64,
    /// Base period in frames of the normal motion.
    pub period: f64,
    pub harmonics: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            spatial_dim: None,
            length: 200,
            anomaly_spans: Vec::new(),
            anomaly_magnitude: 1.0,
            noise_std: 0.01,
            period: 20.0,
            harmonics: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn resolved_spatial_dim(&self) -> usize {
        self.spatial_dim.unwrap_or((self.dim / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim == 0 || self.length == 0 {
            return bad("dim and length must be positive".into());
        }
        let sd = self.resolved_spatial_dim();
        if sd == 0 || sd > self.dim {
            return bad(format!("spatial_dim {sd} must be in 1..={}", self.dim));
        }
        if !(self.anomaly_magnitude > 0.0 && self.anomaly_magnitude.is_finite()) {
            return bad("anomaly_magnitude must be positive".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be nonnegative".into());
        }
        if !(self.period > 0.0 && self.period.is_finite()) || self.harmonics == 0 {
            return bad("period and harmonics must be positive".into());
        }
        let mut spans = self.anomaly_spans.clone();
        spans.sort_unstable();
        for &(s, e) in &spans {
            if s == 0 || s > e || e > self.length {
                return bad(format!("span ({s},{e}) outside [1,{}]", self.length));
            }
        }
        for w in spans.windows(2) {
            if w[1].0 <= w[0].1 {
                return bad(format!("spans {:?} and {:?} overlap", w[0], w[1]));
            }
        }
        Ok(())
    }
}

/// Deterministic labelled stream; a pure function of `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<FeatureStream> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;

    // (amplitude, phase) per coordinate and harmonic, plus a per-coordinate offset
    let mut waves = Vec::with_capacity(dim);
    for _ in 0..dim {
        let offset = rng.random_range(-0.5..0.5);
        let comps: Vec<(f64, f64)> = (0..config.harmonics)
            .map(|h| {
                let amp = rng.random_range(0.3..1.0) / (h + 1) as f64;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (amp, phase)
            })
            .collect();
        waves.push((offset, comps));
    }

    let directions: Vec<Vec<f64>> = config
        .anomaly_spans
        .iter()
        .map(|_| {
            let d: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let rms = (d.iter().map(|v| v * v).sum::<f64>() / dim as f64).sqrt();
            d.into_iter().map(|v| v / rms).collect()
        })
        .collect();

    let noise = Normal::new(0.0, config.noise_std)
        .map_err(|e| Error::InvalidConfig(format!("noise: {e}")))?;
    let mut rows = Vec::with_capacity(config.length);
    let mut labels = vec![0u8; config.length];
    for t in 1..=config.length {
        let active = config
            .anomaly_spans
            .iter()
            .position(|&(s, e)| (s..=e).contains(&t));
        if active.is_some() {
            labels[t - 1] = 1;
        }
        let row: Vec<f32> = waves
            .iter()
            .enumerate()
            .map(|(j, (offset, comps))| {
                let base: f64 = comps
                    .iter()
                    .enumerate()
                    .map(|(h, (amp, phase))| {
                        let freq = std::f64::consts::TAU * (h + 1) as f64 / config.period;
                        amp * (freq * t as f64 + phase).sin()
                    })
                    .sum();
                let eps: f64 = noise.sample(&mut rng);
                let shift = active.map_or(0.0, |k| config.anomaly_magnitude * directions[k][j]);
                (offset + base + eps + shift) as f32
            })
            .collect();
        rows.push(row);
    }
    let mut stream =
        FeatureStream::from_rows(dim, config.resolved_spatial_dim(), rows, Some(labels))?;
    stream.source = format!("synthetic:seed={}", config.seed);
    Ok(stream)
}
