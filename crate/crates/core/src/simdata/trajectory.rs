//! Capsule trajectories along the tube with level-scaled motion noise.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scene::TubeScene;
use crate::geometry::Pose6;
use crate::seed;
use crate::{Error, Result};

pub const FRAME_RATE: f64 = 3.0;
pub const MAX_LEVEL: u8 = 5;

/// Positional jitter standard deviation per vibration level, scene units.
pub const JITTER_PER_LEVEL: f64 = 0.004;
/// Amplitude of the peristaltic radial sway per level.
pub const SWAY_PER_LEVEL: f64 = 0.002;
pub const SWAY_FREQUENCY: f64 = 0.3;
pub const COLLISION_PROBABILITY: f64 = 0.05;
/// Collision impulse magnitude in units of the jitter deviation.
pub const COLLISION_SCALE: f64 = 5.0;
/// Draws allowed per frame before the inside-tube constraint is declared
/// unsatisfiable.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VibrationProfile {
    Peristalsis,
    Collision,
}

impl VibrationProfile {
    pub const ALL: [VibrationProfile; 2] = [VibrationProfile::Peristalsis, VibrationProfile::Collision];

    pub fn as_str(self) -> &'static str {
        match self {
            VibrationProfile::Peristalsis => "peristalsis",
            VibrationProfile::Collision => "collision",
        }
    }
}

impl fmt::Display for VibrationProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VibrationProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "peristalsis" => Ok(VibrationProfile::Peristalsis),
            "collision" => Ok(VibrationProfile::Collision),
            other => Err(Error::Config(format!("unknown vibration profile `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Forward speed along world z, scene units per second.
    pub speed: f64,
    /// World z of the first frame.
    pub start_z: f64,
    /// Amplitude of the slow lateral drift away from the centreline.
    pub drift: f64,
    /// Minimum clearance between camera and wall.
    pub wall_margin: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            speed: 0.24,
            start_z: 1.0,
            drift: 0.12,
            wall_margin: 0.25,
        }
    }
}

/// Camera-to-world poses sampled at `FRAME_RATE`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub clean: Vec<Pose6>,
    pub noisy: Vec<Pose6>,
    pub level: u8,
    pub profile: VibrationProfile,
}

/// Pose looking along the unit direction `dir` from `pos`, with extra `yaw`
/// about the optical axis.
fn look_along(pos: [f64; 3], dir: [f64; 3], yaw: f64) -> Pose6 {
    // R = Ry(pitch) Rx(roll) maps the camera z axis to (sp cr, -sr, cp cr)
    let roll = -dir[1].clamp(-1.0, 1.0).asin();
    let pitch = dir[0].atan2(dir[2]);
    Pose6::new(pos[0], pos[1], pos[2], roll, pitch, yaw)
}

fn clean_pose(scene: &TubeScene, cfg: &TrajectoryConfig, t: f64, phases: [f64; 3]) -> Pose6 {
    let z = cfg.start_z + cfg.speed * t;
    let (cx, cy) = scene.center(z);
    let pos = [
        cx + cfg.drift * (0.35 * t + phases[0]).sin(),
        cy + cfg.drift * (0.27 * t + phases[1]).sin(),
        z,
    ];
    // aim at the centreline a little ahead so the view follows the bends
    let ahead = z + 1.5;
    let (ax, ay) = scene.center(ahead);
    let d = [ax - pos[0], ay - pos[1], ahead - z];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    look_along(pos, [d[0] / n, d[1] / n, d[2] / n], 0.05 * (0.4 * t + phases[2]).sin())
}

/// Per-frame positional perturbation for `level` and `profile`.
///
/// Standard-normal draws are scaled by the level, so for a fixed seed the
/// Gaussian part grows linearly with the level.
struct NoiseSampler {
    rng: rand_chacha::ChaCha8Rng,
    sigma: f64,
    sway: f64,
    sway_dir: [f64; 2],
    sway_phase: f64,
    profile: VibrationProfile,
}

impl NoiseSampler {
    fn new(level: u8, profile: VibrationProfile, seed: u64) -> Self {
        let mut rng = seed::rng(seed, "trajectory.noise");
        let angle: f64 = rng.random_range(0.0..TAU);
        let sway_phase = rng.random_range(0.0..TAU);
        Self {
            rng,
            sigma: JITTER_PER_LEVEL * f64::from(level),
            sway: SWAY_PER_LEVEL * f64::from(level),
            sway_dir: [angle.cos(), angle.sin()],
            sway_phase,
            profile,
        }
    }

    fn draw(&mut self, t: f64) -> [f64; 3] {
        let mut n = [0.0; 3];
        for v in &mut n {
            let g: f64 = self.rng.sample(StandardNormal);
            *v = self.sigma * g;
        }
        match self.profile {
            VibrationProfile::Peristalsis => {
                let s = self.sway * (TAU * SWAY_FREQUENCY * t + self.sway_phase).sin();
                n[0] += s * self.sway_dir[0];
                n[1] += s * self.sway_dir[1];
            }
            VibrationProfile::Collision => {
                let hit = self.rng.random::<f64>() < COLLISION_PROBABILITY;
                let mut dir = [0.0_f64; 3];
                for v in &mut dir {
                    *v = self.rng.sample(StandardNormal);
                }
                if hit {
                    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt().max(1e-12);
                    for (v, d) in n.iter_mut().zip(dir) {
                        *v += COLLISION_SCALE * self.sigma * d / norm;
                    }
                }
            }
        }
        n
    }
}

/// Clean path following the centreline plus the noisy path the capsule
/// actually takes, both sampled at `FRAME_RATE` from time 0.
pub fn generate_trajectory(
    scene: &TubeScene,
    n_frames: usize,
    level: u8,
    profile: VibrationProfile,
    seed: u64,
    cfg: &TrajectoryConfig,
) -> Result<Trajectory> {
    if n_frames < 3 {
        return Err(Error::Config(format!("trajectory needs at least 3 frames, got {n_frames}")));
    }
    if level > MAX_LEVEL {
        return Err(Error::Config(format!("vibration level {level} outside 0..={MAX_LEVEL}")));
    }
    let mut prng = seed::rng(seed, "trajectory.path");
    let phases = [
        prng.random_range(0.0..TAU),
        prng.random_range(0.0..TAU),
        prng.random_range(0.0..TAU),
    ];
    let end_z = cfg.start_z + cfg.speed * (n_frames - 1) as f64 / FRAME_RATE;
    if cfg.start_z < 0.0 || end_z > scene.config.length {
        return Err(Error::Config(format!(
            "trajectory z range [{}, {end_z:.2}] leaves the scene (length {})",
            cfg.start_z, scene.config.length
        )));
    }
    let mut noise = NoiseSampler::new(level, profile, seed);
    let mut times = Vec::with_capacity(n_frames);
    let mut clean = Vec::with_capacity(n_frames);
    let mut noisy = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = i as f64 / FRAME_RATE;
        let c = clean_pose(scene, cfg, t, phases);
        if scene.signed_distance(c.translation()) > -cfg.wall_margin {
            return Err(Error::Scene(format!("clean path at frame {i} violates the wall margin")));
        }
        let mut accepted = None;
        for _ in 0..MAX_RESAMPLES {
            let d = noise.draw(t);
            let p = Pose6 {
                tx: c.tx + d[0],
                ty: c.ty + d[1],
                tz: c.tz + d[2],
                ..c
            };
            if scene.signed_distance(p.translation()) < -cfg.wall_margin {
                accepted = Some(p);
                break;
            }
        }
        let p = accepted.ok_or_else(|| {
            Error::Scene(format!("no perturbation inside the tube after {MAX_RESAMPLES} draws at frame {i}"))
        })?;
        times.push(t);
        clean.push(c);
        noisy.push(p);
    }
    Ok(Trajectory {
        times,
        clean,
        noisy,
        level,
        profile,
    })
}
