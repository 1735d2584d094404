//! Trains a small model on a reduced toy dataset and evaluates it against
//! the constant-depth baseline.
//!
//! Usage: `cargo run --release --example train_toy [CONFIG_JSON]`

use v2sfm::harness::{evaluate, train, NetworkConfig, Predictor, TrainConfig};
use v2sfm::harness::train::load_dataset;
use v2sfm::simdata::DatasetConfig;

fn main() -> v2sfm::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => TrainConfig::load(path.as_ref())?,
        None => TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 1e-3,
            network: NetworkConfig::tiny(),
            data: DatasetConfig {
                sequences: 5,
                frames: 8,
                width: 32,
                height: 32,
                ..DatasetConfig::toy()
            },
            ..TrainConfig::default()
        },
    };
    let out = train(&cfg)?;
    for e in &out.log.epochs {
        println!("epoch {}: train loss {:.5}, val AbsRel {:.4}", e.epoch, e.train_loss, e.val_depth.abs_rel);
    }
    let ds = load_dataset(&cfg)?;
    let report = evaluate(Predictor::Model(&out.model), &ds, None, cfg.seed, &cfg.policy)?;
    print!("{}", report.to_csv()?);
    println!("constant-depth baseline AbsRel {:.4}", out.log.baseline_depth.abs_rel);
    Ok(())
}
