//! Forward pass of the self-context encoder–decoder predictor.
//!
//! ```text
//! z_t  = omega(F_t) + P(t)                   t = 1..T
//! u    = Encoder(Z)
//! y    = Decoder(Z, u)      (queries from the decoder stream, keys/values from u)
//! F^   = phi(readout(y))
//! ```
//!
//! All blocks are post-norm (`x <- LN(x + sublayer(x))`) and unmasked: the
//! predicted frame is never part of the input sequence.

use super::{ModelConfig, ModelParams, Readout, SelfContext};
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Tensor2};

/// Sinusoidal code for 1-based position `t`: entry `2i` is
/// `sin(t / 10000^(2i/width))`, entry `2i+1` the matching cosine.
pub fn positional_code(t: usize, width: usize) -> Vec<f64> {
    (0..width)
        .map(|j| {
            let pair = (j / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * pair / width as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Positional codes for positions 1..=rows stacked as a matrix.
pub fn positional_matrix(rows: usize, width: usize) -> Tensor2 {
    let data = (1..=rows).flat_map(|t| positional_code(t, width)).collect();
    Tensor2::new(rows, width, data).expect("positive shape")
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: NodeId,
    b: NodeId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    wo: NodeId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: NodeId,
    bias: NodeId,
}

#[derive(Debug, Clone, Copy)]
struct Mlp {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    msa: Attention,
    ln1: Norm,
    mlp: Mlp,
    ln2: Norm,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    msa: Attention,
    ln1: Norm,
    mca: Attention,
    ln2: Norm,
    mlp: Mlp,
    ln3: Norm,
}

#[derive(Debug, Clone)]
struct ParamNodes {
    all: Vec<NodeId>,
    omega: Linear,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    phi: Linear,
}

struct Cursor<I: Iterator<Item = NodeId>>(I);

impl<I: Iterator<Item = NodeId>> Cursor<I> {
    fn next(&mut self) -> NodeId {
        self.0.next().expect("parameter layout exhausted")
    }

    fn linear(&mut self) -> Linear {
        Linear {
            w: self.next(),
            b: self.next(),
        }
    }

    fn attention(&mut self) -> Attention {
        Attention {
            wq: self.next(),
            wk: self.next(),
            wv: self.next(),
            wo: self.next(),
        }
    }

    fn norm(&mut self) -> Norm {
        Norm {
            gain: self.next(),
            bias: self.next(),
        }
    }

    fn mlp(&mut self) -> Mlp {
        Mlp {
            up: self.linear(),
            down: self.linear(),
        }
    }
}

impl ParamNodes {
    /// Walks the leaves in layout order (see [`super::layout`]).
    fn bind(all: Vec<NodeId>, layers: usize) -> Self {
        let mut c = Cursor(all.clone().into_iter());
        let omega = c.linear();
        let encoder = (0..layers)
            .map(|_| EncoderLayer {
                msa: c.attention(),
                ln1: c.norm(),
                mlp: c.mlp(),
                ln2: c.norm(),
            })
            .collect();
        let decoder = (0..layers)
            .map(|_| DecoderLayer {
                msa: c.attention(),
                ln1: c.norm(),
                mca: c.attention(),
                ln2: c.norm(),
                mlp: c.mlp(),
                ln3: c.norm(),
            })
            .collect();
        let phi = c.linear();
        debug_assert!(c.0.next().is_none());
        Self {
            all,
            omega,
            encoder,
            decoder,
            phi,
        }
    }
}

/// One forward pass recorded on its own [`Graph`].
///
/// Parameters are registered as leaves on construction so that
/// [`Forward::param_grads`] can return one gradient per layout tensor.
pub struct Forward<'m> {
    params: &'m ModelParams,
    graph: Graph,
    nodes: ParamNodes,
    attention: Vec<NodeId>,
}

impl<'m> Forward<'m> {
    pub fn new(params: &'m ModelParams) -> Self {
        let mut graph = Graph::new();
        let all = params
            .tensors()
            .iter()
            .map(|t| graph.leaf(t.clone()))
            .collect();
        let nodes = ParamNodes::bind(all, params.config().layers);
        Self {
            params,
            graph,
            nodes,
            attention: Vec::new(),
        }
    }

    fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        self.graph.value(id)
    }

    pub fn input(&mut self, value: Tensor2) -> NodeId {
        self.graph.leaf(value)
    }

    /// Attention weight matrices recorded so far, in evaluation order.
    pub fn attention_weights(&self) -> Vec<&Tensor2> {
        self.attention.iter().map(|&id| self.graph.value(id)).collect()
    }

    fn check_window(&self, features: NodeId) -> Result<()> {
        let (rows, cols) = self.graph.value(features).shape();
        let c = self.config();
        if rows != c.window || cols != c.feature_dim {
            return Err(Error::shape(
                "embed",
                format!(
                    "input is {rows}x{cols}, model expects {}x{}",
                    c.window, c.feature_dim
                ),
            ));
        }
        Ok(())
    }

    fn linear(&mut self, x: NodeId, l: Linear) -> Result<NodeId> {
        let y = self.graph.matmul(x, l.w)?;
        self.graph.add_row(y, l.b)
    }

    /// `Z = X·W + b + P`, optionally without positional codes.
    pub fn embed_with(&mut self, features: NodeId, positions: bool) -> Result<NodeId> {
        self.check_window(features)?;
        let z = self.linear(features, self.nodes.omega)?;
        if !positions {
            return Ok(z);
        }
        let (rows, width) = self.graph.value(z).shape();
        let codes = self.graph.leaf(positional_matrix(rows, width));
        self.graph.add(z, codes)
    }

    pub fn embed(&mut self, features: NodeId) -> Result<NodeId> {
        self.embed_with(features, true)
    }

    fn check_sequence(&self, x: NodeId, op: &'static str) -> Result<()> {
        let (rows, cols) = self.graph.value(x).shape();
        let c = self.config();
        if rows != c.window || cols != c.model_dim {
            return Err(Error::shape(
                op,
                format!("sequence is {rows}x{cols}, expected {}x{}", c.window, c.model_dim),
            ));
        }
        Ok(())
    }

    fn attend(&mut self, queries: NodeId, context: NodeId, a: Attention) -> Result<NodeId> {
        let heads = self.config().heads;
        let dh = self.config().head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.graph.matmul(queries, a.wq)?;
        let k = self.graph.matmul(context, a.wk)?;
        let v = self.graph.matmul(context, a.wv)?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.graph.slice_cols(q, h * dh, dh)?;
            let kh = self.graph.slice_cols(k, h * dh, dh)?;
            let vh = self.graph.slice_cols(v, h * dh, dh)?;
            let kt = self.graph.transpose(kh);
            let logits = self.graph.matmul(qh, kt)?;
            let logits = self.graph.scale(logits, scale);
            let weights = self.graph.softmax_rows(logits);
            self.attention.push(weights);
            outs.push(self.graph.matmul(weights, vh)?);
        }
        let joined = if heads == 1 {
            outs[0]
        } else {
            self.graph.concat_cols(&outs)?
        };
        self.graph.matmul(joined, a.wo)
    }

    fn residual_norm(&mut self, x: NodeId, sub: NodeId, n: Norm) -> Result<NodeId> {
        let s = self.graph.add(x, sub)?;
        self.graph.layer_norm_rows(s, n.gain, n.bias)
    }

    fn mlp(&mut self, x: NodeId, m: Mlp) -> Result<NodeId> {
        let h = self.linear(x, m.up)?;
        let h = self.graph.relu(h);
        self.linear(h, m.down)
    }

    /// Latent `u` of the embedded sequence.
    pub fn encode(&mut self, z: NodeId) -> Result<NodeId> {
        self.check_sequence(z, "encode")?;
        let mut x = z;
        for layer in self.nodes.encoder.clone() {
            let a = self.attend(x, x, layer.msa)?;
            x = self.residual_norm(x, a, layer.ln1)?;
            let m = self.mlp(x, layer.mlp)?;
            x = self.residual_norm(x, m, layer.ln2)?;
        }
        Ok(x)
    }

    /// Decoder over the same embedded sequence, cross-attending to `u`.
    /// With self-context disabled this is the identity on `u`.
    pub fn decode(&mut self, z: NodeId, u: NodeId, toggle: SelfContext) -> Result<NodeId> {
        self.check_sequence(z, "decode")?;
        self.check_sequence(u, "decode")?;
        if !toggle.is_enabled() {
            return Ok(u);
        }
        let mut y = z;
        for layer in self.nodes.decoder.clone() {
            let a = self.attend(y, y, layer.msa)?;
            y = self.residual_norm(y, a, layer.ln1)?;
            let c = self.attend(y, u, layer.mca)?;
            y = self.residual_norm(y, c, layer.ln2)?;
            let m = self.mlp(y, layer.mlp)?;
            y = self.residual_norm(y, m, layer.ln3)?;
        }
        Ok(y)
    }

    /// Predicted next-frame feature as a 1×D node.
    pub fn predict(&mut self, features: NodeId, toggle: SelfContext) -> Result<NodeId> {
        let z = self.embed(features)?;
        let u = self.encode(z)?;
        let y = self.decode(z, u, toggle)?;
        let pooled = match self.config().readout {
            Readout::Last => {
                let last = self.graph.value(y).rows() - 1;
                self.graph.select_row(y, last)?
            }
            Readout::Mean => self.graph.mean_rows(y),
        };
        self.linear(pooled, self.nodes.phi)
    }

    /// Gradients of the scalar `loss` for every parameter, in layout order.
    pub fn param_grads(&self, loss: NodeId) -> Result<Vec<Tensor2>> {
        let grads = self.graph.backward(loss)?;
        Ok(self.nodes.all.iter().map(|&id| grads.wrt(id)).collect())
    }
}

impl ModelParams {
    /// `F^_{T+1}` from a T×D window of previous features.
    pub fn predict_next(&self, features: &Tensor2, toggle: SelfContext) -> Result<Vec<f64>> {
        let mut f = Forward::new(self);
        let x = f.input(features.clone());
        let y = f.predict(x, toggle)?;
        Ok(f.value(y).data().to_vec())
    }

    /// MSE between the prediction for `features` and `target`, with gradients.
    pub fn loss_and_grads(
        &self,
        features: &Tensor2,
        target: &[f64],
        toggle: SelfContext,
    ) -> Result<(f64, Vec<Tensor2>)> {
        let mut f = Forward::new(self);
        let x = f.input(features.clone());
        let y = f.predict(x, toggle)?;
        if target.len() != self.config().feature_dim {
            return Err(Error::shape(
                "mse",
                format!(
                    "target has {} entries, model predicts {}",
                    target.len(),
                    self.config().feature_dim
                ),
            ));
        }
        let t = f.input(Tensor2::row_vector(target.to_vec())?);
        let loss = f.graph_mut().mse(y, t)?;
        let value = f.value(loss).data()[0];
        Ok((value, f.param_grads(loss)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(window: usize, d: usize, m: usize) -> ModelConfig {
        ModelConfig {
            window,
            seed: 17,
            ..ModelConfig::with_model_dim(d, m)
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor2::new(rows, cols, data).unwrap()
    }

    #[test]
    fn positional_code_at_angle_zero() {
        let p = positional_code(0, 6);
        assert_eq!(p, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn positional_code_first_pair_uses_unit_frequency() {
        for t in 1..5 {
            let p = positional_code(t, 4);
            assert_eq!(p.len(), 4);
            assert_eq!(p[0], (t as f64).sin());
            assert_eq!(p[1], (t as f64).cos());
            assert!(p.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn positional_codes_are_distinct_for_first_ten_positions() {
        let codes: Vec<Vec<f64>> = (1..=10).map(|t| positional_code(t, 512)).collect();
        for i in 0..10 {
            for j in i + 1..10 {
                let gap: f64 = codes[i]
                    .iter()
                    .zip(&codes[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(gap > 1e-3, "P({}) ~ P({})", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn zero_omega_embeds_to_positional_codes() {
        let c = config(4, 5, 6);
        let mut p = ModelParams::init(&c).unwrap();
        *p.get_mut("omega.w").unwrap() = Tensor2::zeros(5, 6);
        let mut f = Forward::new(&p);
        let x = f.input(random(4, 5, 1));
        let z = f.embed(x).unwrap();
        assert_eq!(f.value(z), &positional_matrix(4, 6));
    }

    #[test]
    fn identity_omega_without_positions_is_identity() {
        let c = config(3, 4, 4);
        let mut p = ModelParams::init(&c).unwrap();
        let mut eye = Tensor2::zeros(4, 4);
        for i in 0..4 {
            eye.set(i, i, 1.0);
        }
        *p.get_mut("omega.w").unwrap() = eye;
        let input = random(3, 4, 2);
        let mut f = Forward::new(&p);
        let x = f.input(input.clone());
        let z = f.embed_with(x, false).unwrap();
        assert_eq!(f.value(z), &input);
    }

    #[test]
    fn embed_matches_direct_evaluation() {
        let c = config(3, 5, 4);
        let mut p = ModelParams::init(&c).unwrap();
        *p.get_mut("omega.b").unwrap() = random(1, 4, 8);
        let input = random(3, 5, 3);
        let mut f = Forward::new(&p);
        let x = f.input(input.clone());
        let z = f.embed(x).unwrap();
        let w = p.get("omega.w").unwrap();
        let b = p.get("omega.b").unwrap();
        for t in 0..3 {
            let code = positional_code(t + 1, 4);
            for j in 0..4 {
                let mut acc = b.get(0, j) + code[j];
                for i in 0..5 {
                    acc += input.get(t, i) * w.get(i, j);
                }
                assert!((f.value(z).get(t, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embed_rejects_wrong_window() {
        let p = ModelParams::init(&config(3, 5, 4)).unwrap();
        let mut f = Forward::new(&p);
        let x = f.input(random(2, 5, 1));
        assert!(f.embed(x).is_err());
        let y = f.input(random(3, 4, 1));
        assert!(f.embed(y).is_err());
    }

    // Plain-vector reference for one post-norm block applied to a single row.
    fn vec_mat(x: &[f64], w: &Tensor2) -> Vec<f64> {
        (0..w.cols())
            .map(|j| (0..w.rows()).map(|i| x[i] * w.get(i, j)).sum())
            .collect()
    }

    fn norm_row(x: &[f64], gain: &Tensor2, bias: &Tensor2) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let s = (var + crate::numerics::LAYER_NORM_EPS).sqrt();
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - mean) / s * gain.data()[j] + bias.data()[j])
            .collect()
    }

    fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    fn mlp_row(x: &[f64], p: &ModelParams, prefix: &str) -> Vec<f64> {
        let g = |n: &str| p.get(&format!("{prefix}.{n}")).unwrap();
        let h: Vec<f64> = add(&vec_mat(x, g("w1")), g("b1").data())
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        add(&vec_mat(&h, g("w2")), g("b2").data())
    }

    // one key => softmax weight 1 => attention output is context·Wv·Wo
    fn single_attention(ctx: &[f64], p: &ModelParams, prefix: &str) -> Vec<f64> {
        let g = |n: &str| p.get(&format!("{prefix}.{n}")).unwrap();
        vec_mat(&vec_mat(ctx, g("wv")), g("wo"))
    }

    fn encoder_row(z: &[f64], p: &ModelParams) -> Vec<f64> {
        let mut x = z.to_vec();
        for l in 0..p.config().layers {
            let pre = format!("encoder.{l}");
            let g = |n: &str| p.get(&format!("{pre}.{n}")).unwrap();
            let a = single_attention(&x, p, &format!("{pre}.msa"));
            x = norm_row(&add(&x, &a), g("ln1.gain"), g("ln1.bias"));
            let m = mlp_row(&x, p, &format!("{pre}.mlp"));
            x = norm_row(&add(&x, &m), g("ln2.gain"), g("ln2.bias"));
        }
        x
    }

    #[test]
    fn single_position_encoder_is_the_residual_path() {
        let p = ModelParams::init(&config(1, 3, 6)).unwrap();
        let mut f = Forward::new(&p);
        let x = f.input(random(1, 3, 5));
        let z = f.embed(x).unwrap();
        let u = f.encode(z).unwrap();
        let expected = encoder_row(f.value(z).row(0), &p);
        for (a, b) in f.value(u).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        for w in f.attention_weights() {
            assert_eq!(w.data(), &[1.0]);
        }
    }

    #[test]
    fn single_position_decoder_is_the_residual_path() {
        let p = ModelParams::init(&config(1, 3, 6)).unwrap();
        let mut f = Forward::new(&p);
        let x = f.input(random(1, 3, 6));
        let z = f.embed(x).unwrap();
        let u = f.encode(z).unwrap();
        let y = f.decode(z, u, SelfContext::Enabled).unwrap();
        let u_row = f.value(u).row(0).to_vec();
        let mut r = f.value(z).row(0).to_vec();
        for l in 0..2 {
            let pre = format!("decoder.{l}");
            let g = |n: &str| p.get(&format!("{pre}.{n}")).unwrap();
            let a = single_attention(&r, &p, &format!("{pre}.msa"));
            r = norm_row(&add(&r, &a), g("ln1.gain"), g("ln1.bias"));
            let c = single_attention(&u_row, &p, &format!("{pre}.mca"));
            r = norm_row(&add(&r, &c), g("ln2.gain"), g("ln2.bias"));
            let m = mlp_row(&r, &p, &format!("{pre}.mlp"));
            r = norm_row(&add(&r, &m), g("ln3.gain"), g("ln3.bias"));
        }
        for (a, b) in f.value(y).data().iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_output_shape_at_reference_size() {
        let p = ModelParams::init(&config(10, 8, 512)).unwrap();
        let mut f = Forward::new(&p);
        let x = f.input(random(10, 8, 1));
        let z = f.embed(x).unwrap();
        let u = f.encode(z).unwrap();
        assert_eq!(f.value(u).shape(), (10, 512));
    }

    #[test]
    fn frame_order_matters() {
        let p = ModelParams::init(&config(4, 3, 8)).unwrap();
        let input = random(4, 3, 9);
        let mut permuted = Tensor2::zeros(4, 3);
        for (dst, src) in [2, 0, 3, 1].into_iter().enumerate() {
            permuted.row_mut(dst).copy_from_slice(input.row(src));
        }
        let encode = |x: &Tensor2| {
            let mut f = Forward::new(&p);
            let x = f.input(x.clone());
            let z = f.embed(x).unwrap();
            let u = f.encode(z).unwrap();
            f.value(u).clone()
        };
        assert_ne!(encode(&input), encode(&permuted));
    }

    #[test]
    fn disabled_self_context_passes_latent_through() {
        let p = ModelParams::init(&config(4, 3, 8)).unwrap();
        let mut f = Forward::new(&p);
        let x = f.input(random(4, 3, 2));
        let z = f.embed(x).unwrap();
        let u = f.encode(z).unwrap();
        let y = f.decode(z, u, SelfContext::Disabled).unwrap();
        assert_eq!(y, u);
    }

    #[test]
    fn self_context_changes_the_prediction() {
        let p = ModelParams::init(&config(4, 3, 8)).unwrap();
        let x = random(4, 3, 2);
        let on = p.predict_next(&x, SelfContext::Enabled).unwrap();
        let off = p.predict_next(&x, SelfContext::Disabled).unwrap();
        assert_ne!(on, off);
    }

    #[test]
    fn zero_head_predicts_zero() {
        let c = config(4, 3, 8);
        let mut p = ModelParams::init(&c).unwrap();
        *p.get_mut("phi.w").unwrap() = Tensor2::zeros(8, 3);
        let y = p.predict_next(&random(4, 3, 1), SelfContext::Enabled).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn prediction_is_deterministic_and_sized() {
        let p = ModelParams::init(&config(5, 7, 4)).unwrap();
        let x = random(5, 7, 4);
        let a = p.predict_next(&x, SelfContext::Enabled).unwrap();
        assert_eq!(a.len(), 7);
        assert_eq!(a, p.predict_next(&x, SelfContext::Enabled).unwrap());
    }

    #[test]
    fn mean_readout_differs_from_last() {
        let c = config(4, 3, 8);
        let last = ModelParams::init(&c).unwrap();
        let mean = ModelParams::init(&ModelConfig {
            readout: Readout::Mean,
            ..c
        })
        .unwrap();
        let x = random(4, 3, 3);
        assert_ne!(
            last.predict_next(&x, SelfContext::Enabled).unwrap(),
            mean.predict_next(&x, SelfContext::Enabled).unwrap()
        );
    }

    #[test]
    fn attention_rows_are_convex() {
        let p = ModelParams::init(&config(6, 3, 8)).unwrap();
        let mut f = Forward::new(&p);
        let x = f.input(random(6, 3, 12));
        f.predict(x, SelfContext::Enabled).unwrap();
        let weights = f.attention_weights();
        // 2 layers x 2 heads encoder + 2 layers x 2 heads x 2 stages decoder
        assert_eq!(weights.len(), 12);
        for w in weights {
            for r in 0..w.rows() {
                assert!(w.row(r).iter().all(|&v| v >= 0.0));
                assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
