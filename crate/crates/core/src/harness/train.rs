//! Training loop.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffnum::Tape;
use crate::error::{Error, Result};
use crate::metrics::{DepthMetrics, MotionMetrics};
use crate::networks::params::ParamStore;
use crate::networks::{checkpoint, Model, ModelConfig};
use crate::seed;
use crate::simdata::{generate_dataset, read_dataset, Dataset, Snippet};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::config::TrainConfig;
use super::eval::{evaluate, median_depth, Predictor};
use super::objective::snippet_objective;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub photometric: f64,
    pub smoothness: f64,
    pub geometry: f64,
}

impl LossValues {
    fn add(&mut self, (t, p, s, g): (f64, f64, f64, f64)) {
        self.total += t;
        self.photometric += p;
        self.smoothness += s;
        self.geometry += g;
    }

    fn scaled(self, f: f64) -> Self {
        Self {
            total: self.total * f,
            photometric: self.photometric * f,
            smoothness: self.smoothness * f,
            geometry: self.geometry * f,
        }
    }
}

/// Batch-mean losses of one optimizer step, before the update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossValues,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the epoch's step losses.
    pub train_loss: f64,
    pub val_depth: DepthMetrics,
    pub val_motion: MotionMetrics,
}

/// Record of a training run. Everything except the wall-clock times is a
/// function of the configuration and seed; the times are kept out of the
/// serialized log and written separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub config: TrainConfig,
    pub param_count: usize,
    pub train_snippets: usize,
    pub val_snippets: usize,
    /// Mean loss over the training split before the first step.
    pub initial_loss: LossValues,
    /// Mean loss over the training split after the last step.
    pub final_loss: Option<LossValues>,
    /// Validation depth error of a constant prediction.
    pub baseline_depth: DepthMetrics,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    /// Seconds since the start, at the end of each epoch.
    #[serde(skip)]
    pub wall_clock: Vec<f64>,
}

impl TrainLog {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn final_val_depth(&self) -> Option<&DepthMetrics> {
        self.epochs.last().map(|e| &e.val_depth)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
}

/// Dataset named by the config: read from disk when a path is given,
/// generated otherwise.
pub fn load_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    match &cfg.dataset {
        Some(p) => read_dataset(p),
        None => generate_dataset(&cfg.data),
    }
}

pub fn model_config(cfg: &TrainConfig, ds: &Dataset) -> ModelConfig {
    cfg.network.model_config(cfg.fusion, ds.config.height, ds.config.width)
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    train_on(cfg, &ds)
}

fn adam_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: cfg.adam_betas[0],
        beta2: cfg.adam_betas[1],
        eps: cfg.adam_eps,
    }
}

fn finite(v: (f64, f64, f64, f64), what: impl FnOnce() -> String) -> Result<(f64, f64, f64, f64)> {
    if [v.0, v.1, v.2, v.3].iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("non-finite loss {v:?} {}", what())))
    }
}

/// Mean loss of `model` over `snippets`, without gradients.
pub fn mean_loss(model: &Model, ds: &Dataset, snippets: &[Snippet], cfg: &TrainConfig) -> Result<LossValues> {
    let mut acc = LossValues::default();
    for s in snippets {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, false)?;
        let terms = snippet_objective(
            &mut tape,
            &bound,
            &model.config,
            &ds.intrinsics,
            ds.snippet_frames(s),
            s.window.samples(),
            &cfg.loss,
            None,
        )?;
        acc.add(finite(terms.values(&tape), || format!("on snippet {} of sequence {}", s.first, s.sequence))?);
    }
    Ok(acc.scaled(1.0 / snippets.len() as f64))
}

/// Batch-mean loss and gradients.
fn batch_gradients(model: &Model, ds: &Dataset, batch: &[&Snippet], cfg: &TrainConfig) -> Result<(LossValues, ParamStore)> {
    let mut sum = model.params.zeros_like();
    let mut loss = LossValues::default();
    for s in batch {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, true)?;
        let terms = snippet_objective(
            &mut tape,
            &bound,
            &model.config,
            &ds.intrinsics,
            ds.snippet_frames(s),
            s.window.samples(),
            &cfg.loss,
            None,
        )?;
        loss.add(finite(terms.values(&tape), || format!("on snippet {} of sequence {}", s.first, s.sequence))?);
        let grads = tape.backward(terms.total)?;
        for (name, g) in bound.collect_grads(&grads).iter() {
            let acc = sum.get_mut(name)?;
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
    }
    let f = 1.0 / batch.len() as f64;
    for (_, g) in sum.iter_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= f);
    }
    Ok((loss.scaled(f), sum))
}

fn write_outputs(dir: &Path, model: &Model, log: &TrainLog, epoch: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = serde_json::json!({ "config": log.config, "epoch": epoch, "seed": log.seed });
    checkpoint::save(model, &dir.join(CHECKPOINT_FILE), &meta)?;
    let p = dir.join(LOG_FILE);
    std::fs::write(&p, log.to_json()?).map_err(|e| Error::io(&p, e))?;
    let p = dir.join(TIMING_FILE);
    std::fs::write(&p, serde_json::to_string(&log.wall_clock)?).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

/// Trains a fresh model on `ds`.
///
/// The dataset and split are checked before the first step. Each epoch
/// visits the training snippets in a seeded order, takes one Adam step per
/// batch, scores the validation split and, with a checkpoint directory,
/// rewrites the checkpoint and log there. A non-finite loss or gradient
/// aborts the run.
pub fn train_on(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let (train, val) = ds.split_snippets()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Dataset(format!(
            "split leaves {} training and {} validation snippets",
            train.len(),
            val.len()
        )));
    }
    let mcfg = model_config(cfg, ds);
    let mut model = Model::new(mcfg, seed::derive(cfg.seed, "model"))?;
    let baseline = evaluate(Predictor::Constant(median_depth(ds, &train)?), ds, None, 0, &cfg.policy)?;
    let initial = mean_loss(&model, ds, &train, cfg)?;
    log::info!("initial training loss {:.6}", initial.total);

    let mut log = TrainLog {
        seed: cfg.seed,
        config: cfg.clone(),
        param_count: model.params.count(),
        train_snippets: train.len(),
        val_snippets: val.len(),
        initial_loss: initial,
        final_loss: None,
        baseline_depth: baseline.rows[0].depth,
        steps: Vec::new(),
        epochs: Vec::new(),
        wall_clock: Vec::new(),
    };
    let adam = adam_config(cfg);
    let mut state = AdamState::new(&model.params);
    let mut order: Vec<&Snippet> = train.iter().collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.sort_by_key(|s| (s.sequence, s.first));
        order.shuffle(&mut seed::rng(cfg.seed, &format!("epoch{epoch}")));
        let mut epoch_loss = 0.0;
        let batches = order.chunks(cfg.batch_size);
        let n_batches = batches.len();
        for batch in batches {
            let (loss, grads) = batch_gradients(&model, ds, batch, cfg)?;
            adam_step(&mut model.params, &grads, &mut state, &adam)?;
            epoch_loss += loss.total;
            log.steps.push(StepLog { epoch, step, loss });
            step += 1;
        }
        let report = evaluate(Predictor::Model(&model), ds, None, 0, &cfg.policy)?;
        let row = &report.rows[0];
        log.epochs.push(EpochLog {
            epoch,
            train_loss: epoch_loss / n_batches as f64,
            val_depth: row.depth,
            val_motion: row.motion,
        });
        log.wall_clock.push(started.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}: loss {:.6}, val abs_rel {:.4}",
            epoch_loss / n_batches as f64,
            row.depth.abs_rel
        );
        if let Some(dir) = &cfg.checkpoint_dir {
            write_outputs(dir, &model, &log, epoch)?;
        }
    }
    let fin = mean_loss(&model, ds, &train, cfg)?;
    log::info!("final training loss {:.6}", fin.total);
    log.final_loss = Some(fin);
    if let Some(dir) = &cfg.checkpoint_dir {
        write_outputs(dir, &model, &log, cfg.epochs - 1)?;
    }
    Ok(TrainOutcome { model, log })
}
