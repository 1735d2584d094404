//! Finite-difference check of the assembled training objective.

use rand_distr::{Distribution, Normal};

use crate::diffnum::{grad_check_multi, Array, GradCheckReport, Tape};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::losses::LossWeights;
use crate::networks::params::Bound;
use crate::networks::Model;
use crate::seed;
use crate::simdata::{generate_dataset, DatasetConfig};

use super::config::NetworkConfig;
use super::objective::batch_objective;

/// Finite-difference step used on the model parameters. Bilinear sampling
/// is piecewise linear, and with thousands of sampled pixels some sample
/// crosses a pixel boundary inside a wider stencil.
pub const STEP: f64 = 1e-7;

/// Standard deviation of the noise added to every parameter before the
/// check.
pub const JITTER: f64 = 0.01;

/// Moves the parameters off the exact ties of a fresh initialisation. Zero
/// biases over black image regions put ReLU inputs exactly at their kink,
/// where the one-sided derivatives differ and no finite-difference
/// comparison is meaningful.
fn jitter(model: &mut Model, seed: u64) {
    let mut rng = seed::rng(seed, "gradcheck.jitter");
    let noise = Normal::new(0.0, JITTER).expect("valid normal");
    for (_, p) in model.params.iter_mut() {
        p.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
}

/// Checks the gradient of the batch-mean loss with respect to every
/// parameter of a narrow model with Fourier fusion, on `batch` snippets of
/// a generated `size` x `size` sequence. The parameters are jittered with
/// seeded noise first.
///
/// Brightness fits are computed once at the base point and held fixed, as
/// they are closed-form statistics that the tape treats as constants.
pub fn gradcheck_full(size: usize, batch: usize, seed: u64) -> Result<GradCheckReport> {
    if batch == 0 {
        return Err(Error::Config("gradcheck batch must be positive".into()));
    }
    let data = DatasetConfig {
        seed,
        sequences: 1,
        frames: batch + 2,
        width: size,
        height: size,
        ..DatasetConfig::toy()
    };
    let ds = generate_dataset(&data)?;
    let (snippets, _) = ds.snippets()?;
    let items: Vec<_> = snippets
        .iter()
        .take(batch)
        .map(|s| (ds.snippet_frames(s), s.window.samples()))
        .collect();
    let mut model = Model::new(NetworkConfig::tiny().model_config(FusionMode::Fh, size, size), seed)?;
    jitter(&mut model, seed);
    let weights = LossWeights::default();

    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false)?;
    let (_, fits) = batch_objective(&mut tape, &bound, &model.config, &ds.intrinsics, &items, &weights, None)?;
    drop(tape);

    let names: Vec<String> = model.params.names().cloned().collect();
    let points: Vec<Array> = names.iter().map(|n| model.params.get(n).cloned()).collect::<Result<_>>()?;
    grad_check_multi(
        |t, vars| {
            let b: Bound = names.iter().cloned().zip(vars.iter().copied()).collect();
            let (loss, _) = batch_objective(t, &b, &model.config, &ds.intrinsics, &items, &weights, Some(&fits))?;
            Ok(loss)
        },
        &points,
        STEP,
    )
}
