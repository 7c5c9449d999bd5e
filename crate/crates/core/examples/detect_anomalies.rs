//! Train on the normal prefix, then score the rest of the stream frame by
//! frame and apply the temporal-consistency filter.

use scvad::detector::{detect, ConsistencyConfig};
use scvad::evaluator::verdict_auc;
use scvad::feature_io::{generate_synthetic, SynthConfig};
use scvad::trainer::{train_few_shot, TrainConfig};
use scvad::transformer::{ModelConfig, SelfContext};

fn main() -> scvad::Result<()> {
    let stream = generate_synthetic(&SynthConfig {
        dim: 16,
        length: 160,
        anomaly_spans: vec![(100, 119)],
        anomaly_magnitude: 1.0,
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
    let toggle = SelfContext::Enabled;
    let artifact = train_few_shot(&stream, &model, &train, toggle)?;
    let verdicts = detect(&artifact, &stream, &ConsistencyConfig::default(), toggle)?;

    let labels = stream.labels().expect("synthetic streams are labelled");
    for v in verdicts.iter().filter(|v| (95..=125).contains(&v.frame_index)) {
        println!(
            "frame {:>3} label {} score {:>8.5} raw {:<5} final {:<5}",
            v.frame_index,
            labels[v.frame_index - 1],
            v.score,
            v.raw_flag,
            v.final_flag
        );
    }
    let caught = verdicts
        .iter()
        .filter(|v| labels[v.frame_index - 1] == 1 && v.final_flag)
        .count();
    let false_alarms = verdicts
        .iter()
        .filter(|v| labels[v.frame_index - 1] == 0 && v.final_flag)
        .count();
    println!(
        "threshold {:.5}; {caught}/20 span frames flagged, {false_alarms} normal frames flagged, AUC {:.4}",
        artifact.threshold(),
        verdict_auc(&verdicts, &stream)?
    );
    Ok(())
}
