//! Compare the tape's analytic gradients of the full predictor with central
//! finite differences on a tiny model.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scvad::numerics::Tensor2;
use scvad::transformer::{ModelConfig, ModelParams, SelfContext};

fn main() -> scvad::Result<()> {
    let config = ModelConfig {
        window: 3,
        seed: 42,
        ..ModelConfig::with_model_dim(6, 8)
    };
    let params = ModelParams::init(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let window = Tensor2::new(3, 6, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let target: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();

    for toggle in [SelfContext::Enabled, SelfContext::Disabled] {
        let (loss, grads) = params.loss_and_grads(&window, &target, toggle)?;
        let mut work = params.clone();
        let h = 1e-3;
        let mut worst: f64 = 0.0;
        for (k, g) in grads.iter().enumerate() {
            let (mut diff, mut norm) = (0.0, 0.0);
            for i in 0..g.len() {
                let orig = params.tensors()[k].data()[i];
                work.tensors_mut()[k].data_mut()[i] = orig + h;
                let up = work.loss_and_grads(&window, &target, toggle)?.0;
                work.tensors_mut()[k].data_mut()[i] = orig - h;
                let down = work.loss_and_grads(&window, &target, toggle)?.0;
                work.tensors_mut()[k].data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                diff += (numeric - g.data()[i]).powi(2);
                norm += g.data()[i].powi(2);
            }
            if norm > 0.0 {
                worst = worst.max((diff / norm).sqrt());
            }
        }
        println!(
            "{toggle:?}: loss {loss:.6}, {} parameters, worst per-tensor relative error {worst:.2e}",
            params.parameter_count()
        );
    }
    Ok(())
}
