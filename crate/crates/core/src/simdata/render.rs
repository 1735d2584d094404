//! Ray casting of tube scenes from a pinhole camera.

use super::scene::TubeScene;
use crate::diffnum::Array;
use crate::geometry::{rotation_entries, Intrinsics, Pose6, D_MAX, D_MIN};
use crate::{Error, Result};

/// Bound on the spatial rate of change of the signed radial distance; the
/// marcher advances by `|f| / LIPSCHITZ` so it cannot step over the wall.
const LIPSCHITZ: f64 = 2.0;

/// Smallest marching step along the ray, in scene units.
const MIN_STEP: f64 = 1e-4;

/// Bisection stops once the bracket is shorter than this, in scene units.
pub const HIT_TOLERANCE: f64 = 1e-8;

/// Distance at which the headlight leaves the albedo unattenuated.
pub const LIGHT_REFERENCE: f64 = 1.5;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    /// `[3, H, W]` RGB in `[0, 1]`.
    pub image: Array,
    /// `[1, H, W]` camera z-depth clamped to `[D_MIN, D_MAX]`.
    pub depth: Array,
}

/// Camera-to-world rotation and centre of a pose.
pub(crate) fn camera_frame(pose: &Pose6) -> ([[f64; 3]; 3], [f64; 3]) {
    (rotation_entries(pose.roll, pose.pitch, pose.yaw), pose.translation())
}

/// Ray parameter of the first wall crossing of `origin + t * dir`, searched
/// up to `t_max`. `None` if the ray stays inside the lumen.
pub fn intersect(scene: &TubeScene, origin: [f64; 3], dir: [f64; 3], t_max: f64) -> Option<f64> {
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    let at = |t: f64| [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
    let mut t = 0.0;
    let mut f = scene.signed_distance(origin);
    while t < t_max {
        let step = (-f / LIPSCHITZ).max(MIN_STEP) / norm;
        let next = (t + step).min(t_max);
        let fn_ = scene.signed_distance(at(next));
        if fn_ >= 0.0 {
            let (mut lo, mut hi) = (t, next);
            while (hi - lo) * norm > HIT_TOLERANCE {
                let mid = 0.5 * (lo + hi);
                if scene.signed_distance(at(mid)) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        t = next;
        f = fn_;
    }
    None
}

/// Renders image and ground-truth depth from camera-to-world `pose`.
///
/// Each pixel's ray `R K^-1 (u, v, 1)` has unit camera-z component, so the
/// ray parameter at the hit is the z-depth. Shading is the wall albedo times
/// an inverse-square headlight falloff; rays reaching `D_MAX` without a hit
/// are black with depth `D_MAX`.
pub fn render_frame(scene: &TubeScene, pose: &Pose6, k: &Intrinsics) -> Result<RenderedFrame> {
    k.validate()?;
    let (r, c) = camera_frame(pose);
    if scene.signed_distance(c) >= 0.0 {
        return Err(Error::Scene(format!("camera at {c:?} is outside the tube")));
    }
    let (h, w) = (k.height, k.width);
    let mut image = vec![0.0; 3 * h * w];
    let mut depth = vec![D_MAX; h * w];
    for v in 0..h {
        for u in 0..w {
            let d_cam = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
            let dir = [
                r[0][0] * d_cam[0] + r[0][1] * d_cam[1] + r[0][2],
                r[1][0] * d_cam[0] + r[1][1] * d_cam[1] + r[1][2],
                r[2][0] * d_cam[0] + r[2][1] * d_cam[1] + r[2][2],
            ];
            let p = v * w + u;
            let Some(t) = intersect(scene, c, dir, D_MAX) else {
                continue;
            };
            depth[p] = t.clamp(D_MIN, D_MAX);
            let hit = [c[0] + t * dir[0], c[1] + t * dir[1], c[2] + t * dir[2]];
            let dist2 = t * t * (d_cam[0] * d_cam[0] + d_cam[1] * d_cam[1] + 1.0);
            let falloff = (LIGHT_REFERENCE * LIGHT_REFERENCE / dist2).min(1.0);
            let albedo = scene.albedo(hit);
            for ch in 0..3 {
                image[ch * h * w + p] = (albedo[ch] * falloff).clamp(0.0, 1.0);
            }
        }
    }
    Ok(RenderedFrame {
        image: Array::new(&[3, h, w], image)?,
        depth: Array::new(&[1, h, w], depth)?,
    })
}

/// Image integrated over an exposure: the mean of renders at `sub_poses`,
/// with ground-truth depth from `pose`.
pub fn render_exposure(scene: &TubeScene, pose: &Pose6, sub_poses: &[Pose6], k: &Intrinsics) -> Result<RenderedFrame> {
    let mut frame = render_frame(scene, pose, k)?;
    if sub_poses.is_empty() {
        return Ok(frame);
    }
    let mut acc = vec![0.0; frame.image.len()];
    for p in sub_poses {
        let sub = render_frame(scene, p, k)?;
        for (a, v) in acc.iter_mut().zip(sub.image.data()) {
            *a += v;
        }
    }
    let n = sub_poses.len() as f64;
    for (o, a) in frame.image.data_mut().iter_mut().zip(acc) {
        *o = a / n;
    }
    Ok(frame)
}
