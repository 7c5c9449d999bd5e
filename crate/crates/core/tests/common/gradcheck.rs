//! Finite-difference oracle for the tape primitives and the full predictor.

use super::{max_relative_error, numeric_gradient, random_tensor, rng, FD_STEP};
use scvad::numerics::{Graph, NodeId, Tensor2};
use scvad::transformer::{Forward, ModelConfig, ModelParams, SelfContext};

pub type Build = dyn Fn(&mut Graph, &[NodeId]) -> NodeId + Sync;

pub struct Primitive {
    pub name: &'static str,
    pub shapes: Vec<(usize, usize)>,
    pub build: Box<Build>,
    /// Keeps inputs away from points where the op is not differentiable.
    pub off_kink: bool,
}

fn prim(name: &'static str, shapes: &[(usize, usize)], build: Box<Build>) -> Primitive {
    Primitive { name, shapes: shapes.to_vec(), build, off_kink: false }
}

pub fn primitives() -> Vec<Primitive> {
    vec![
        prim("matmul", &[(3, 4), (4, 2)], Box::new(|g, x| g.matmul(x[0], x[1]).unwrap())),
        prim("add", &[(3, 4), (3, 4)], Box::new(|g, x| g.add(x[0], x[1]).unwrap())),
        prim("sub", &[(3, 4), (3, 4)], Box::new(|g, x| g.sub(x[0], x[1]).unwrap())),
        prim("add_row", &[(3, 4), (1, 4)], Box::new(|g, x| g.add_row(x[0], x[1]).unwrap())),
        prim("scale", &[(2, 5)], Box::new(|g, x| g.scale(x[0], -1.7))),
        prim(
            "softmax_rows",
            &[(3, 5)],
            Box::new(|g, x| {
                let s = g.scale(x[0], 3.0);
                g.softmax_rows(s)
            }),
        ),
        prim(
            "layer_norm_rows",
            &[(3, 6), (1, 6), (1, 6)],
            Box::new(|g, x| g.layer_norm_rows(x[0], x[1], x[2]).unwrap()),
        ),
        Primitive { off_kink: true, ..prim("relu", &[(4, 4)], Box::new(|g, x| g.relu(x[0]))) },
        prim("transpose", &[(3, 4)], Box::new(|g, x| g.transpose(x[0]))),
        prim("slice_cols", &[(3, 6)], Box::new(|g, x| g.slice_cols(x[0], 2, 3).unwrap())),
        prim(
            "concat_cols",
            &[(3, 2), (3, 3)],
            Box::new(|g, x| g.concat_cols(&[x[0], x[1]]).unwrap()),
        ),
        prim("select_row", &[(4, 3)], Box::new(|g, x| g.select_row(x[0], 2).unwrap())),
        prim("mean_rows", &[(4, 3)], Box::new(|g, x| g.mean_rows(x[0]))),
        prim("sum", &[(2, 3)], Box::new(|g, x| g.sum(x[0]))),
        prim(
            "attention",
            &[(4, 6), (6, 6), (6, 6), (6, 6)],
            Box::new(|g, x| {
                let q = g.matmul(x[0], x[1]).unwrap();
                let k = g.matmul(x[0], x[2]).unwrap();
                let v = g.matmul(x[0], x[3]).unwrap();
                let kt = g.transpose(k);
                let s = g.matmul(q, kt).unwrap();
                let s = g.scale(s, 0.4);
                let a = g.softmax_rows(s);
                g.matmul(a, v).unwrap()
            }),
        ),
    ]
}

/// Max relative error for `loss = mse(op(inputs), target)`; `mse` itself is
/// therefore exercised by every case.
fn check(build: &Build, inputs: Vec<Tensor2>, seed: u64) -> f64 {
    let probe = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &ids);
        g.value(out).clone()
    };
    let target = random_tensor(probe.rows(), probe.cols(), &mut rng(seed ^ 0xfeed));
    let forward = |xs: &[Tensor2]| -> (Graph, Vec<NodeId>, NodeId) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &ids);
        let t = g.leaf(target.clone());
        let loss = g.mse(out, t).unwrap();
        (g, ids, loss)
    };
    let (g, ids, loss) = forward(&inputs);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor2> = ids.iter().map(|&id| grads.wrt(id)).collect();
    let f = |xs: &[Tensor2]| {
        let (g, _, loss) = forward(xs);
        g.value(loss).data()[0]
    };
    let numeric = numeric_gradient(&f, &inputs, FD_STEP);
    max_relative_error(&analytic, &numeric)
}

/// Worst error of one primitive over `instances` seeded random inputs.
pub fn primitive_error(p: &Primitive, instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut r = rng(seed);
        let inputs = p
            .shapes
            .iter()
            .map(|&(a, b)| {
                let mut t = random_tensor(a, b, &mut r);
                if p.off_kink {
                    // the step must never straddle the kink at zero
                    t.data_mut().iter_mut().for_each(|v| *v += 0.05 * v.signum());
                }
                t
            })
            .collect();
        worst = worst.max(check(&*p.build, inputs, seed));
    }
    worst
}

pub fn grad_check_config(seed: u64) -> ModelConfig {
    ModelConfig {
        feature_dim: 6,
        model_dim: 8,
        heads: 2,
        layers: 2,
        mlp_hidden: 16,
        window: 3,
        seed,
        ..ModelConfig::with_model_dim(6, 8)
    }
}

/// Smallest distance to a ReLU kink accepted for a model instance; a step of
/// `FD_STEP` on any single weight moves a pre-activation by far less.
pub const KINK_MARGIN: f64 = 0.02;

/// Worst relative error of the full predictor + MSE over every parameter, or
/// `None` when the instance sits too close to a ReLU kink for differencing.
pub fn model_error(seed: u64, toggle: SelfContext) -> Option<f64> {
    let config = grad_check_config(seed);
    let params = ModelParams::init(&config).unwrap();
    let mut r = rng(seed + 1000);
    let window = random_tensor(3, 6, &mut r);
    let target = random_tensor(1, 6, &mut r).into_data();

    let mut fwd = Forward::new(&params);
    let x = fwd.input(window.clone());
    fwd.predict(x, toggle).unwrap();
    if fwd.graph().relu_margin().unwrap_or(f64::INFINITY) < KINK_MARGIN {
        return None;
    }

    let (_, analytic) = params.loss_and_grads(&window, &target, toggle).unwrap();
    let loss = |p: &ModelParams| {
        let pred = p.predict_next(&window, toggle).unwrap();
        pred.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64
    };
    // same central difference as `numeric_gradient`, perturbing in place
    let mut work = params.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    for k in 0..analytic.len() {
        let (rows, cols) = params.tensors()[k].shape();
        let mut g = Tensor2::zeros(rows, cols);
        for i in 0..rows * cols {
            let orig = params.tensors()[k].data()[i];
            work.tensors_mut()[k].data_mut()[i] = orig + FD_STEP;
            let up = loss(&work);
            work.tensors_mut()[k].data_mut()[i] = orig - FD_STEP;
            let down = loss(&work);
            work.tensors_mut()[k].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
        }
        numeric.push(g);
    }
    Some(max_relative_error(&analytic, &numeric))
}

/// Worst error over the first `count` instances that clear the kink margin.
pub fn worst_model_error(count: usize, toggle: SelfContext) -> f64 {
    (0..u64::MAX)
        .filter_map(|s| model_error(s, toggle))
        .take(count)
        .fold(0.0, f64::max)
}
