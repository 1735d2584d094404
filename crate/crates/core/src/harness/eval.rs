//! Frame-by-frame evaluation of depth and motion predictions.

use std::path::Path;

use crate::diffnum::Array;
use crate::error::{Error, Result};
use crate::geometry::{matrix_to_pose, pose_to_matrix, relative_transform, Pose6, D_MAX};
use crate::metrics::{aggregate_report, depth_metrics, step_metrics, Condition, EvalPolicy, GroupField, MetricReport, SnippetRecord};
use crate::networks::{checkpoint, Model};
use crate::seed;
use crate::simdata::{corrupt, CorruptionSpec, Dataset, Snippet, SNIPPET_LEN};

use super::objective::TARGET;

/// Source of depth and motion predictions.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    Model(&'a Model),
    /// Ground truth passed through unchanged.
    GroundTruth,
    /// The same depth at every pixel and zero motion.
    Constant(f64),
}

/// Target-frame depth `[1, H, W]` and the motions from the target to each
/// source, in snippet order.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub depth: Array,
    pub motions: Vec<Pose6>,
}

fn sources() -> impl Iterator<Item = usize> {
    (0..SNIPPET_LEN).filter(|&s| s != TARGET)
}

/// Ground-truth motion taking target-camera points into each source camera.
pub fn gt_motions(poses: &[Pose6; SNIPPET_LEN]) -> Result<Vec<Pose6>> {
    let t = pose_to_matrix(&poses[TARGET]);
    sources()
        .map(|s| matrix_to_pose(&relative_transform(&pose_to_matrix(&poses[s]), &t)))
        .collect()
}

impl Predictor<'_> {
    pub fn name(&self) -> String {
        match self {
            Predictor::Model(m) => m.config.depth.fusion.to_string(),
            Predictor::GroundTruth => "ground_truth".into(),
            Predictor::Constant(_) => "constant_depth".into(),
        }
    }

    pub fn predict(&self, ds: &Dataset, s: &Snippet, frames: &[Array; SNIPPET_LEN]) -> Result<Prediction> {
        match self {
            Predictor::Model(m) => {
                let depth = m.predict_depth(&frames[TARGET], Some(s.window.samples()))?;
                let motions = sources()
                    .map(|j| m.predict_pose(&frames[TARGET], &frames[j]))
                    .collect::<Result<_>>()?;
                Ok(Prediction { depth, motions })
            }
            Predictor::GroundTruth => Ok(Prediction {
                depth: ds.snippet_depths(s)[TARGET].clone(),
                motions: gt_motions(&ds.snippet_poses(s))?,
            }),
            Predictor::Constant(d) => Ok(Prediction {
                depth: Array::full(ds.snippet_depths(s)[TARGET].shape(), *d),
                motions: vec![Pose6::default(); SNIPPET_LEN - 1],
            }),
        }
    }
}

/// Median of the ground-truth depth over the hit pixels of `snippets`'
/// target frames: the constant predictor used as the learning baseline.
pub fn median_depth(ds: &Dataset, snippets: &[Snippet]) -> Result<f64> {
    let mut v: Vec<f64> = snippets
        .iter()
        .flat_map(|s| ds.snippet_depths(s)[TARGET].data().iter().copied().filter(|&d| d < D_MAX))
        .collect();
    if v.is_empty() {
        return Err(Error::Evaluation("no ground-truth depth below the far plane".into()));
    }
    v.sort_by(f64::total_cmp);
    Ok(v[v.len() / 2])
}

/// Checks that a model accepts frames of the dataset's size.
pub fn check_compatible(model: &Model, ds: &Dataset) -> Result<()> {
    let d = &model.config.depth;
    if (d.height, d.width) != (ds.config.height, ds.config.width) {
        return Err(Error::Config(format!(
            "checkpoint expects {}x{} frames, dataset has {}x{}",
            d.width, d.height, ds.config.width, ds.config.height
        )));
    }
    Ok(())
}

/// Per-snippet metrics of `predictor` on `snippets`.
///
/// With a corruption, every input frame is corrupted with a seed derived
/// from `seed`, the sequence and the frame index, so a frame shared by
/// several snippets is corrupted identically. Depth is scored where the
/// ground truth lies in front of the far plane.
pub fn evaluate_snippets(
    predictor: Predictor<'_>,
    ds: &Dataset,
    snippets: &[Snippet],
    corruption: Option<CorruptionSpec>,
    seed: u64,
    policy: &EvalPolicy,
) -> Result<Vec<SnippetRecord>> {
    if let Predictor::Model(m) = predictor {
        check_compatible(m, ds)?;
    }
    let mut out = Vec::with_capacity(snippets.len());
    for s in snippets {
        let seq = &ds.sequences[s.sequence];
        let clean = ds.snippet_frames(s);
        let frames: [Array; SNIPPET_LEN] = match corruption {
            Some(spec) => {
                let mut fs = Vec::with_capacity(SNIPPET_LEN);
                for (j, f) in clean.iter().enumerate() {
                    let fseed = seed::derive(seed, &format!("{}/{}", seq.name, s.first + j));
                    fs.push(corrupt(f, spec, fseed)?);
                }
                fs.try_into().expect("snippet length")
            }
            None => clean.map(Array::clone),
        };
        let pred = predictor.predict(ds, s, &frames)?;
        let gt_depth = ds.snippet_depths(s)[TARGET];
        let mask = gt_depth.map(|d| if d < D_MAX { 1.0 } else { 0.0 });
        let depth = depth_metrics(gt_depth, &pred.depth, Some(&mask), policy)?;
        let gt: Vec<[f64; 6]> = gt_motions(&ds.snippet_poses(s))?.iter().map(Pose6::to_array).collect();
        let pr: Vec<[f64; 6]> = pred.motions.iter().map(Pose6::to_array).collect();
        let motion = step_metrics(&gt, &pr, policy)?;
        out.push(SnippetRecord {
            condition: Condition {
                model: predictor.name(),
                level: Some(seq.level),
                profile: Some(seq.profile.to_string()),
                corruption: corruption.map(|c| c.kind.to_string()),
                severity: corruption.map(|c| c.severity),
                sequence: Some(seq.name.clone()),
            },
            depth,
            motion,
        });
    }
    Ok(out)
}

/// Validation-split report of `predictor`, one row per model and condition
/// with sequences pooled.
pub fn evaluate(
    predictor: Predictor<'_>,
    ds: &Dataset,
    corruption: Option<CorruptionSpec>,
    seed: u64,
    policy: &EvalPolicy,
) -> Result<MetricReport> {
    let (_, val) = ds.split_snippets()?;
    let records = evaluate_snippets(predictor, ds, &val, corruption, seed, policy)?;
    aggregate_report(&records, &POOLED, policy)
}

/// Grouping that pools sequences.
pub const POOLED: [GroupField; 5] = [
    GroupField::Model,
    GroupField::Level,
    GroupField::Profile,
    GroupField::Corruption,
    GroupField::Severity,
];

/// Loads a checkpoint and evaluates it on the validation split.
pub fn evaluate_checkpoint(
    ckpt: &Path,
    ds: &Dataset,
    corruption: Option<CorruptionSpec>,
    seed: u64,
    policy: &EvalPolicy,
) -> Result<MetricReport> {
    let (model, _) = checkpoint::load(ckpt)?;
    evaluate(Predictor::Model(&model), ds, corruption, seed, policy)
}

/// Camera positions of a sequence integrated from predicted frame-to-frame
/// motions, starting at the first ground-truth pose.
pub fn integrate_trajectory(model: &Model, frames: &[Array], start: &Pose6) -> Result<Vec<Pose6>> {
    let mut c = pose_to_matrix(start);
    let mut out = vec![*start];
    for w in frames.windows(2) {
        // Motion from frame i into frame i+1 is C_{i+1}^-1 C_i.
        let t = pose_to_matrix(&model.predict_pose(&w[0], &w[1])?);
        c = c.compose(&t.inverse());
        out.push(matrix_to_pose(&c)?);
    }
    Ok(out)
}
