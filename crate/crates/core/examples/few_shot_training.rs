//! Fit the predictor to the first frames of one stream and inspect the
//! learning curve and the detection threshold.

use scvad::feature_io::{generate_synthetic, SynthConfig};
use scvad::trainer::{train_few_shot, TrainArtifact, TrainConfig};
use scvad::transformer::{ModelConfig, SelfContext};

fn main() -> scvad::Result<()> {
    let stream = generate_synthetic(&SynthConfig {
        dim: 16,
        length: 160,
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
    let artifact = train_few_shot(&stream, &model, &train, SelfContext::Enabled)?;
    let curve = &artifact.report.loss_curve;
    for (epoch, loss) in curve.iter().enumerate().step_by(10) {
        println!("epoch {:>3}  mean loss {loss:.5}", epoch + 1);
    }
    println!("epoch {:>3}  mean loss {:.5}", curve.len(), curve[curve.len() - 1]);
    println!(
        "threshold {:.5} over {} windows (last-epoch running mean {:.5})",
        artifact.threshold(),
        artifact.report.per_window_final_losses.len(),
        artifact.report.last_epoch_running_mean
    );

    let dir = std::env::temp_dir().join("scvad-train-example");
    artifact.save(&dir)?;
    let back = TrainArtifact::load(&dir)?;
    assert_eq!(back.threshold(), artifact.threshold());
    println!("saved and reloaded from {}", dir.display());
    Ok(())
}
