use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Glorot,
    Zeros,
    Ones,
}

/// One named tensor slot of the parameter layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    init: Init,
}

fn spec(name: String, rows: usize, cols: usize, init: Init) -> ParamSpec {
    ParamSpec {
        name,
        rows,
        cols,
        init,
    }
}

fn push_attention(out: &mut Vec<ParamSpec>, prefix: &str, m: usize) {
    for w in ["wq", "wk", "wv", "wo"] {
        out.push(spec(format!("{prefix}.{w}"), m, m, Init::Glorot));
    }
}

fn push_norm(out: &mut Vec<ParamSpec>, prefix: &str, m: usize) {
    out.push(spec(format!("{prefix}.gain"), 1, m, Init::Ones));
    out.push(spec(format!("{prefix}.bias"), 1, m, Init::Zeros));
}

fn push_mlp(out: &mut Vec<ParamSpec>, prefix: &str, m: usize, h: usize) {
    out.push(spec(format!("{prefix}.w1"), m, h, Init::Glorot));
    out.push(spec(format!("{prefix}.b1"), 1, h, Init::Zeros));
    out.push(spec(format!("{prefix}.w2"), h, m, Init::Glorot));
    out.push(spec(format!("{prefix}.b2"), 1, m, Init::Zeros));
}

/// The fixed parameter order used for initialisation, gradients and checkpoints.
///
/// ```text
/// omega.w, omega.b
/// per encoder layer: msa.{wq,wk,wv,wo}, ln1.{gain,bias}, mlp.{w1,b1,w2,b2}, ln2.{gain,bias}
/// per decoder layer: msa.{..}, ln1, mca.{wq,wk,wv,wo}, ln2, mlp.{..}, ln3
/// phi.w, phi.b
/// ```
pub fn layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let (d, m, h) = (config.feature_dim, config.model_dim, config.mlp_hidden);
    let mut out = vec![
        spec("omega.w".into(), d, m, Init::Glorot),
        spec("omega.b".into(), 1, m, Init::Zeros),
    ];
    for l in 0..config.layers {
        let p = format!("encoder.{l}");
        push_attention(&mut out, &format!("{p}.msa"), m);
        push_norm(&mut out, &format!("{p}.ln1"), m);
        push_mlp(&mut out, &format!("{p}.mlp"), m, h);
        push_norm(&mut out, &format!("{p}.ln2"), m);
    }
    for l in 0..config.layers {
        let p = format!("decoder.{l}");
        push_attention(&mut out, &format!("{p}.msa"), m);
        push_norm(&mut out, &format!("{p}.ln1"), m);
        push_attention(&mut out, &format!("{p}.mca"), m);
        push_norm(&mut out, &format!("{p}.ln2"), m);
        push_mlp(&mut out, &format!("{p}.mlp"), m, h);
        push_norm(&mut out, &format!("{p}.ln3"), m);
    }
    out.push(spec("phi.w".into(), m, d, Init::Glorot));
    out.push(spec("phi.b".into(), 1, d, Init::Zeros));
    out
}

/// All learnable tensors: input map, encoder, decoder and output head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor2>,
}

impl ModelParams {
    /// Seeded initialisation: Glorot-uniform weights, zero biases, unit norm gains.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = layout(config)
            .iter()
            .map(|s| match s.init {
                Init::Glorot => Tensor2::glorot(s.rows, s.cols, &mut rng),
                Init::Zeros => Tensor2::zeros(s.rows, s.cols),
                Init::Ones => Tensor2::filled(s.rows, s.cols, 1.0),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Wraps existing tensors after checking them against the layout.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor2>) -> Result<Self> {
        config.validate()?;
        let specs = layout(config);
        if specs.len() != tensors.len() {
            return Err(Error::shape(
                "model_params",
                format!("expected {} tensors, got {}", specs.len(), tensors.len()),
            ));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if t.shape() != (s.rows, s.cols) {
                return Err(Error::shape(
                    "model_params",
                    format!("{} is {:?}, expected {:?}", s.name, t.shape(), (s.rows, s.cols)),
                ));
            }
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor2] {
        &mut self.tensors
    }

    /// Looks a tensor up by its layout name, e.g. `"phi.w"`.
    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        layout(&self.config)
            .iter()
            .position(|s| s.name == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor2> {
        layout(&self.config)
            .iter()
            .position(|s| s.name == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor2::len).sum()
    }

    /// Rounds every entry to the nearest f32 so a checkpoint round trip is exact.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor2::is_finite)
    }
}
