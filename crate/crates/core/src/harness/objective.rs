//! Joint depth and motion objective over one snippet.

use crate::diffnum::{Array, Tape, Var};
use crate::error::Result;
use crate::geometry::{pose_transform, Intrinsics};
use crate::losses::{snippet_loss, BrightnessAffine, LossTerms, LossWeights, SourceView, TargetView};
use crate::networks::params::Bound;
use crate::networks::{depth_net_forward, disparity_to_depth_diff, pose_net_forward, vib_feature, ModelConfig};
use crate::simdata::SNIPPET_LEN;

/// Index of the target frame inside a snippet; the others are sources.
pub const TARGET: usize = 1;

/// Builds the loss of one snippet on `tape`.
///
/// Depth is predicted for all three frames with the snippet's vibration
/// window, so the geometry term can compare the target depth against each
/// source depth. Motion is predicted from the target to each source.
/// `frozen` pins the per-pairing brightness fits, as returned in
/// [`LossTerms::fits`] of an earlier evaluation.
pub fn snippet_objective(
    tape: &mut Tape,
    bound: &Bound,
    config: &ModelConfig,
    k: &Intrinsics,
    frames: [&Array; SNIPPET_LEN],
    window: &Array,
    weights: &LossWeights,
    frozen: Option<&[BrightnessAffine]>,
) -> Result<LossTerms> {
    let feat = vib_feature(tape, bound, config, Some(window))?;
    let mut images = Vec::with_capacity(SNIPPET_LEN);
    let mut disps = Vec::with_capacity(SNIPPET_LEN);
    let mut depths = Vec::with_capacity(SNIPPET_LEN);
    for f in frames {
        let img = tape.constant(f.clone())?;
        let disp = depth_net_forward(tape, img, feat, bound, &config.depth)?;
        let depth = disparity_to_depth_diff(tape, disp, config.d_min, config.d_max)?;
        images.push(img);
        disps.push(disp);
        depths.push(depth);
    }
    let target = TargetView {
        image: images[TARGET],
        disparity: disps[TARGET],
        depth: depths[TARGET],
    };
    let mut sources = Vec::with_capacity(SNIPPET_LEN - 1);
    for s in (0..SNIPPET_LEN).filter(|&s| s != TARGET) {
        let pose = pose_net_forward(tape, images[TARGET], images[s], bound, &config.pose)?;
        sources.push(SourceView {
            image: images[s],
            depth: depths[s],
            transform: pose_transform(tape, pose)?,
        });
    }
    snippet_loss(tape, &target, &sources, k, weights, frozen)
}

/// Mean of the per-snippet totals, for finite-difference checks of the whole
/// batch objective. Returns the mean and every snippet's fits in order.
pub fn batch_objective(
    tape: &mut Tape,
    bound: &Bound,
    config: &ModelConfig,
    k: &Intrinsics,
    batch: &[([&Array; SNIPPET_LEN], &Array)],
    weights: &LossWeights,
    frozen: Option<&[Vec<BrightnessAffine>]>,
) -> Result<(Var, Vec<Vec<BrightnessAffine>>)> {
    let mut acc: Option<Var> = None;
    let mut fits = Vec::with_capacity(batch.len());
    for (i, (frames, window)) in batch.iter().enumerate() {
        let fz = frozen.map(|f| f[i].as_slice());
        let terms = snippet_objective(tape, bound, config, k, *frames, window, weights, fz)?;
        fits.push(terms.fits);
        acc = Some(match acc {
            Some(a) => tape.add(a, terms.total)?,
            None => terms.total,
        });
    }
    let sum = acc.ok_or_else(|| crate::Error::Config("empty batch".into()))?;
    Ok((tape.scale(sum, 1.0 / batch.len() as f64)?, fits))
}
