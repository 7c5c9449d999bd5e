//! Train the four ablation models (temporal only, spatial only, no
//! self-context, full) on one stream and print the AUC table.

use scvad::detector::ConsistencyConfig;
use scvad::evaluator::{ablation_table, run_ablation, AblationSpec};
use scvad::feature_io::{generate_synthetic, SynthConfig};
use scvad::trainer::TrainConfig;
use scvad::transformer::ModelConfig;

fn main() -> scvad::Result<()> {
    let stream = generate_synthetic(&SynthConfig {
        dim: 16,
        length: 160,
        anomaly_spans: vec![(100, 119)],
        anomaly_magnitude: 0.2,
        seed: 7,
        ..Default::default()
    })?;
    let model = ModelConfig {
        window: 5,
        seed: 7,
        ..ModelConfig::with_model_dim(16, 32)
    };
    let train = TrainConfig {
        n_shots: 30,
        window: 5,
        lr: 0.003,
        seed: 7,
        ..Default::default()
    };
    let rows = run_ablation(
        &stream,
        &AblationSpec::standard(),
        &model,
        &train,
        &ConsistencyConfig::default(),
    )?;
    print!("{}", ablation_table(&rows));
    Ok(())
}
