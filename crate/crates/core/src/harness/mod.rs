//! Training, evaluation, ablation sweeps and plotting.

pub mod adam;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod objective;
pub mod plot;
pub mod sweep;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{NetworkConfig, TrainConfig};
pub use eval::{evaluate, evaluate_checkpoint, evaluate_snippets, Prediction, Predictor};
pub use gradcheck::gradcheck_full;
pub use objective::{batch_objective, snippet_objective};
pub use plot::{plot_report, trajectory_overlay};
pub use sweep::{robustness, sweep, SweepKind, SweepReport};
pub use train::{train, train_on, TrainLog, TrainOutcome};
