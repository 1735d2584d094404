//! Synthetic capsule-endoscopy data.
//!
//! A dataset is a set of sequences, each rendered from its own procedural
//! tube along a jittered trajectory, with a 40 Hz vibration track derived
//! from the same pose track. Sequences are cut into three-frame snippets;
//! the middle frame is the target view, its neighbours are the sources and
//! the vibration window is centred on the first frame.

pub mod corrupt;
pub mod imu;
pub mod io;
pub mod render;
pub mod scene;
pub mod spline;
pub mod trajectory;

use serde::{Deserialize, Serialize};

pub use corrupt::{corrupt, psnr, CorruptionKind, CorruptionSpec};
pub use imu::{synthesize_vibration, VibrationTrack};
pub use io::{read_dataset, write_dataset, DatasetManifest, FORMAT_VERSION};
pub use render::{render_exposure, render_frame, RenderedFrame};
pub use scene::{generate_scene, SceneConfig, TubeScene};
pub use trajectory::{generate_trajectory, Trajectory, TrajectoryConfig, VibrationProfile, FRAME_RATE};

use crate::diffnum::{Array, Tape};
use crate::geometry::{
    pose_to_matrix, relative_transform, synthesize_view, warp_coords_diff, DiffTransform, Intrinsics, Pose6,
};
use crate::seed;
use crate::vibration::{normalize_window, VibrationWindow, CHANNELS};
use crate::{Error, Result};
use spline::CubicSpline;

/// Frames per snippet.
pub const SNIPPET_LEN: usize = 3;

/// One rendered sequence with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    /// Seconds, at `FRAME_RATE`.
    pub times: Vec<f64>,
    /// `[3, H, W]` in `[0, 1]`, quantised to 8 bits.
    pub frames: Vec<Array>,
    /// `[1, H, W]` z-depth, quantised to `depth_scale` steps.
    pub depths: Vec<Array>,
    /// Camera-to-world poses the frames were rendered from.
    pub poses: Vec<Pose6>,
    /// Noise-free counterpart of `poses`.
    pub clean_poses: Vec<Pose6>,
    pub vibration: VibrationTrack,
    pub depth_scale: f64,
    pub scene_seed: u64,
    pub level: u8,
    pub profile: VibrationProfile,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Indices of a snippet plus its normalised vibration window.
#[derive(Clone, Debug, PartialEq)]
pub struct Snippet {
    pub sequence: usize,
    /// Index of the first frame; the target is `first + 1`.
    pub first: usize,
    pub window: VibrationWindow,
}

/// Cuts `seq` into stride-1 snippets. Snippets whose vibration window is not
/// covered by the track are dropped; the second value counts them.
pub fn slice_snippets(seq: &Sequence, index: usize, max_abs: &[f64; CHANNELS]) -> Result<(Vec<Snippet>, usize)> {
    if seq.len() < SNIPPET_LEN {
        return Err(Error::Dataset(format!(
            "sequence {} has {} frames, at least {SNIPPET_LEN} are needed",
            seq.name,
            seq.len()
        )));
    }
    let mut out = Vec::new();
    let mut dropped = 0;
    for first in 0..=seq.len() - SNIPPET_LEN {
        let t = seq.times[first];
        match seq.vibration.window(t) {
            Some(raw) => out.push(Snippet {
                sequence: index,
                first,
                window: normalize_window(&raw, max_abs, t)?,
            }),
            None => dropped += 1,
        }
    }
    Ok((out, dropped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub sequences: usize,
    /// Rendered frames per sequence.
    pub frames: usize,
    /// Unrendered trajectory frames before and after, so the vibration
    /// track covers the windows of the edge snippets.
    pub pad_frames: usize,
    pub width: usize,
    pub height: usize,
    pub level: u8,
    pub profile: VibrationProfile,
    /// Shutter time in seconds; 0 renders instantaneous frames.
    pub exposure: f64,
    /// Sub-frame renders averaged over the shutter when `exposure > 0`.
    pub exposure_samples: usize,
    pub scene: SceneConfig,
    pub trajectory: TrajectoryConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl DatasetConfig {
    /// Reference toy dataset: 10 sequences of 22 frames (200 snippets) at
    /// 64x64, vibration level 3, peristalsis.
    pub fn toy() -> Self {
        Self {
            seed: 7,
            sequences: 10,
            frames: 22,
            pad_frames: 2,
            width: 64,
            height: 64,
            level: 3,
            profile: VibrationProfile::Peristalsis,
            exposure: 0.0,
            exposure_samples: 0,
            scene: SceneConfig::default(),
            trajectory: TrajectoryConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequences == 0 || self.frames < SNIPPET_LEN {
            return Err(Error::Config(format!(
                "need at least one sequence of {SNIPPET_LEN} frames, got {} x {}",
                self.sequences, self.frames
            )));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config(format!("image size {}x{} below 8x8", self.width, self.height)));
        }
        if self.level > trajectory::MAX_LEVEL {
            return Err(Error::Config(format!("vibration level {} above {}", self.level, trajectory::MAX_LEVEL)));
        }
        if !(self.exposure >= 0.0 && self.exposure < 1.0 / FRAME_RATE) {
            return Err(Error::Config(format!("exposure {} s outside [0, frame interval)", self.exposure)));
        }
        if self.exposure > 0.0 && self.exposure_samples < 2 {
            return Err(Error::Config("exposure blur needs at least 2 samples".into()));
        }
        self.scene.validate()
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::centered(self.width, self.height)
    }
}

/// Sequences plus the dataset-wide vibration normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub intrinsics: Intrinsics,
    pub sequences: Vec<Sequence>,
    /// Per-channel max-abs of the raw vibration over all sequences.
    pub max_abs: [f64; CHANNELS],
}

impl Dataset {
    /// All snippets in sequence order, and how many were dropped.
    pub fn snippets(&self) -> Result<(Vec<Snippet>, usize)> {
        let mut all = Vec::new();
        let mut dropped = 0;
        for (i, s) in self.sequences.iter().enumerate() {
            let (v, d) = slice_snippets(s, i, &self.max_abs)?;
            all.extend(v);
            dropped += d;
        }
        Ok((all, dropped))
    }

    /// Sequence indices for training and validation: the last fifth of the
    /// sequences (at least one when there are two or more) validates.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.sequences.len();
        let n_val = if n < 2 { 0 } else { ((n as f64 * 0.2).round() as usize).max(1) };
        ((0..n - n_val).collect(), (n - n_val..n).collect())
    }

    /// Snippets of the training and validation sequences.
    pub fn split_snippets(&self) -> Result<(Vec<Snippet>, Vec<Snippet>)> {
        let (_, val) = self.split();
        let (all, _) = self.snippets()?;
        Ok(all.into_iter().partition(|s| !val.contains(&s.sequence)))
    }

    /// Frames `first`, `first + 1` (the target) and `first + 2`.
    pub fn snippet_frames(&self, s: &Snippet) -> [&Array; SNIPPET_LEN] {
        let seq = &self.sequences[s.sequence];
        [&seq.frames[s.first], &seq.frames[s.first + 1], &seq.frames[s.first + 2]]
    }

    pub fn snippet_depths(&self, s: &Snippet) -> [&Array; SNIPPET_LEN] {
        let seq = &self.sequences[s.sequence];
        [&seq.depths[s.first], &seq.depths[s.first + 1], &seq.depths[s.first + 2]]
    }

    pub fn snippet_poses(&self, s: &Snippet) -> [Pose6; SNIPPET_LEN] {
        let seq = &self.sequences[s.sequence];
        [seq.poses[s.first], seq.poses[s.first + 1], seq.poses[s.first + 2]]
    }
}

/// Per-channel max-abs over several tracks.
pub fn vibration_max_abs<'a>(tracks: impl IntoIterator<Item = &'a VibrationTrack>) -> [f64; CHANNELS] {
    let mut m = [0.0; CHANNELS];
    for t in tracks {
        for (a, b) in m.iter_mut().zip(t.max_abs()) {
            *a = f64::max(*a, b);
        }
    }
    m
}

fn quantize_image(img: &mut Array) {
    for v in img.data_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}

fn quantize_depth(depths: &mut [Array]) -> f64 {
    let max = depths
        .iter()
        .flat_map(|d| d.data().iter().copied())
        .fold(0.0, f64::max);
    let scale = max / 65535.0;
    for d in depths {
        for v in d.data_mut() {
            *v = io::dequantize_depth(io::quantize_depth_value(*v, scale), scale);
        }
    }
    scale
}

/// Poses at arbitrary times from per-component splines through the track.
fn pose_splines(times: &[f64], poses: &[Pose6]) -> Result<Vec<CubicSpline>> {
    (0..6)
        .map(|c| CubicSpline::new(times.to_vec(), poses.iter().map(|p| p.to_array()[c]).collect()))
        .collect()
}

/// Renders sequence `index` of `cfg`.
pub fn generate_sequence(cfg: &DatasetConfig, index: usize) -> Result<Sequence> {
    cfg.validate()?;
    let k = cfg.intrinsics();
    let scene_seed = seed::derive(cfg.seed, &format!("sequence{index}.scene"));
    let scene = generate_scene(scene_seed, &cfg.scene)?;
    let total = cfg.frames + 2 * cfg.pad_frames;
    let traj = generate_trajectory(
        &scene,
        total,
        cfg.level,
        cfg.profile,
        seed::derive(cfg.seed, &format!("sequence{index}.trajectory")),
        &cfg.trajectory,
    )?;
    let vibration = synthesize_vibration(&traj.times, &traj.noisy)?;
    let splines = if cfg.exposure > 0.0 {
        Some(pose_splines(&traj.times, &traj.noisy)?)
    } else {
        None
    };
    let range = cfg.pad_frames..cfg.pad_frames + cfg.frames;
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut depths = Vec::with_capacity(cfg.frames);
    for i in range.clone() {
        let pose = traj.noisy[i];
        let mut f = match &splines {
            Some(sp) => {
                let n = cfg.exposure_samples;
                let subs: Vec<Pose6> = (0..n)
                    .map(|j| {
                        let t = traj.times[i] + cfg.exposure * ((j as f64 + 0.5) / n as f64 - 0.5);
                        let mut a = [0.0; 6];
                        for (v, s) in a.iter_mut().zip(sp) {
                            *v = s.eval(t);
                        }
                        Pose6::from_array(a)
                    })
                    .collect();
                render_exposure(&scene, &pose, &subs, &k)?
            }
            None => render_frame(&scene, &pose, &k)?,
        };
        quantize_image(&mut f.image);
        frames.push(f.image);
        depths.push(f.depth);
    }
    let depth_scale = quantize_depth(&mut depths);
    Ok(Sequence {
        name: format!("seq_{index:03}"),
        times: (0..cfg.frames)
            .map(|j| traj.times[cfg.pad_frames] + j as f64 / FRAME_RATE)
            .collect(),
        frames,
        depths,
        poses: traj.noisy[range.clone()].to_vec(),
        clean_poses: traj.clean[range].to_vec(),
        vibration,
        depth_scale,
        scene_seed,
        level: cfg.level,
        profile: cfg.profile,
    })
}

/// Renders every sequence of `cfg`; deterministic in the config.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let sequences = (0..cfg.sequences)
        .map(|i| generate_sequence(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let max_abs = vibration_max_abs(sequences.iter().map(|s| &s.vibration));
    Ok(Dataset {
        config: cfg.clone(),
        intrinsics: cfg.intrinsics(),
        sequences,
        max_abs,
    })
}

/// Masked mean squared error between `target` and `source` warped into the
/// target view with ground-truth depth and poses. Returns the error and the
/// number of valid pixels.
pub fn reprojection_mse(
    target: &Array,
    target_depth: &Array,
    source: &Array,
    target_pose: &Pose6,
    source_pose: &Pose6,
    k: &Intrinsics,
) -> Result<(f64, usize)> {
    let tr = relative_transform(&pose_to_matrix(source_pose), &pose_to_matrix(target_pose));
    let mut tape = Tape::new();
    let d = tape.constant(target_depth.clone())?;
    let tr = DiffTransform::constant(&mut tape, &tr)?;
    let w = warp_coords_diff(&mut tape, d, &tr, k)?;
    let img = tape.constant(source.clone())?;
    let (warped, mask) = synthesize_view(&mut tape, img, w.coords, &w.mask)?;
    let (c, n) = (target.shape()[0], k.height * k.width);
    let valid = mask.data().iter().filter(|&&m| m > 0.5).count();
    if valid == 0 {
        return Err(Error::DegenerateWarp("no target pixel lands in the source view".into()));
    }
    let (wv, tv) = (tape.value(warped).data(), target.data());
    let sse: f64 = (0..c * n).filter(|&i| mask.data()[i % n] > 0.5).map(|i| (wv[i] - tv[i]).powi(2)).sum();
    Ok((sse / (c * valid) as f64, valid))
}
