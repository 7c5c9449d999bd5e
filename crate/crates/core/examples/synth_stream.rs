//! Generate a labelled synthetic feature stream, write it in the binary
//! stream format and read it back.

use scvad::feature_io::{generate_synthetic, meta_path, read_stream, write_stream, SynthConfig};

fn main() -> scvad::Result<()> {
    let config = SynthConfig {
        dim: 16,
        length: 160,
        anomaly_spans: vec![(100, 119)],
        anomaly_magnitude: 0.2,
        seed: 7,
        ..Default::default()
    };
    let stream = generate_synthetic(&config)?;

    let dir = std::env::temp_dir().join("scvad-synth-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("stream.scvf");
    let bytes = write_stream(&stream, &path)?;
    println!("wrote {} ({bytes} bytes) and {}", path.display(), meta_path(&path).display());

    let back = read_stream(&path)?;
    let anomalous = back.labels().map_or(0, |l| l.iter().filter(|&&x| x == 1).count());
    println!(
        "{} frames, dim {} (spatial {}, temporal {}), {anomalous} labelled anomalous, source {:?}",
        back.len(),
        back.dim(),
        back.spatial_dim(),
        back.temporal_dim(),
        back.source
    );
    let first = &back.frame(1).expect("frame 1").values;
    println!("frame 1: {:?}", &first[..4]);
    Ok(())
}
