//! Reconstructs a target frame from its neighbours with ground-truth depth
//! and pose, and compares against warping with the identity motion.

use v2sfm::geometry::Pose6;
use v2sfm::simdata::{generate_dataset, reprojection_mse, DatasetConfig};

fn main() -> v2sfm::Result<()> {
    let cfg = DatasetConfig {
        sequences: 2,
        frames: 6,
        ..DatasetConfig::toy()
    };
    let ds = generate_dataset(&cfg)?;
    let (snippets, _) = ds.snippets()?;
    for s in snippets.iter().take(4) {
        let (frames, depths, poses) = (ds.snippet_frames(s), ds.snippet_depths(s), ds.snippet_poses(s));
        for src in [0, 2] {
            let (gt, valid) = reprojection_mse(frames[1], depths[1], frames[src], &poses[1], &poses[src], &ds.intrinsics)?;
            let (ident, _) = reprojection_mse(frames[1], depths[1], frames[src], &Pose6::default(), &Pose6::default(), &ds.intrinsics)?;
            println!(
                "seq {} frame {} <- {}: mse {gt:.2e} with true motion ({valid} px), {ident:.2e} without",
                s.sequence,
                s.first + 1,
                s.first + src
            );
        }
    }
    Ok(())
}
