//! Vibration energy per intensity level, and the encoder feature and SNRs
//! it drives in a small fused model.

use v2sfm::diffnum::Tape;
use v2sfm::fusion::FusionMode;
use v2sfm::harness::NetworkConfig;
use v2sfm::networks::{vib_feature, Model};
use v2sfm::simdata::{generate_sequence, DatasetConfig};

fn main() -> v2sfm::Result<()> {
    for level in 0..=5 {
        let cfg = DatasetConfig {
            level,
            frames: 4,
            width: 16,
            height: 16,
            ..DatasetConfig::toy()
        };
        let seq = generate_sequence(&cfg, 0)?;
        println!("level {level}: track energy {:.4e}, {} samples", seq.vibration.energy(), seq.vibration.len());
    }

    let cfg = DatasetConfig {
        sequences: 1,
        frames: 4,
        width: 16,
        height: 16,
        ..DatasetConfig::toy()
    };
    let ds = v2sfm::simdata::generate_dataset(&cfg)?;
    let (snippets, _) = ds.snippets()?;
    let model = Model::new(NetworkConfig::tiny().model_config(FusionMode::Fh, 16, 16), 0)?;
    let window = snippets[0].window.samples();
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false)?;
    if let Some(f) = vib_feature(&mut tape, &bound, &model.config, Some(window))? {
        println!("window {:?} -> feature {:?}", window.shape(), tape.value(f).data());
    }
    let depth = model.predict_depth(ds.snippet_frames(&snippets[0])[1], Some(window))?;
    println!("predicted depth range [{:.3}, {:.3}]", depth.data().iter().copied().fold(f64::INFINITY, f64::min), depth.max_abs());
    Ok(())
}
