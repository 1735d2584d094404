//! Pinhole camera, 6-DoF pose algebra and inverse warping.
//!
//! Camera frame: x right, y down, z forward, so depth is the z coordinate.
//! Rotations use `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. A [`TransformSE3`]
//! used for warping maps points expressed in the target camera into the
//! source camera: `X_s = R X_t + t`.

mod warp;

pub use warp::{pose_transform, synthesize_view, warp_coords_diff, DiffTransform, Warp, Z_EPS};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::diffnum::{Array, Tape};
use crate::{Error, Result};

/// Default valid depth range in scene units.
pub const D_MIN: f64 = 0.1;
pub const D_MAX: f64 = 10.0;

/// Pitch closer than this to `±π/2` is rejected by [`matrix_to_pose`].
pub const GIMBAL_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with a 0.6 * width focal length and centred
    /// principal point.
    pub fn centered(width: usize, height: usize) -> Self {
        let f = 0.6 * width as f64;
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Same camera at a different resolution (focal lengths and principal
    /// point scaled with the image).
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }
}

/// Translation plus roll/pitch/yaw in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose6 {
    pub fn new(tx: f64, ty: f64, tz: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            tx,
            ty,
            tz,
            roll,
            pitch,
            yaw,
        }
    }

    /// `[tx, ty, tz, roll, pitch, yaw]`
    pub fn to_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.roll, self.pitch, self.yaw]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.tx, self.ty, self.tz]
    }

    pub fn angles(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }
}

/// Rigid transform stored as a 4x4 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformSE3 {
    m: Matrix4<f64>,
}

impl TransformSE3 {
    pub fn identity() -> Self {
        Self { m: Matrix4::identity() }
    }

    /// Validates orthonormality, orientation and the homogeneous row.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::DegeneratePose("non-finite matrix entry".into()));
        }
        if ortho >= 1e-9 || r.determinant() <= 0.0 {
            return Err(Error::DegeneratePose(format!(
                "rotation block not proper orthonormal (|RtR - I| = {ortho:e})"
            )));
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(Error::DegeneratePose("bottom row is not [0, 0, 0, 1]".into()));
        }
        Ok(Self { m })
    }

    pub fn from_parts(r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self { m }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.m.fixed_view::<3, 1>(0, 3).into()
    }

    /// Closed-form rigid inverse `[R^T | -R^T t]`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        Self::from_parts(rt, -(rt * self.translation()))
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self { m: self.m * other.m }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.rotation() * Vector3::from(p) + self.translation();
        [v.x, v.y, v.z]
    }

    /// Row-major entries.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.m[(r, c)];
            }
        }
        out
    }
}

/// Rotation matrix entries of `Rz(yaw) Ry(pitch) Rx(roll)`, row-major.
pub fn rotation_entries(roll: f64, pitch: f64, yaw: f64) -> [[f64; 3]; 3] {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

pub fn pose_to_matrix(p: &Pose6) -> TransformSE3 {
    let e = rotation_entries(p.roll, p.pitch, p.yaw);
    let r = Matrix3::from_fn(|i, j| e[i][j]);
    TransformSE3::from_parts(r, Vector3::new(p.tx, p.ty, p.tz))
}

/// Inverse of [`pose_to_matrix`] on the principal branch
/// (`|pitch| < π/2`, roll and yaw in `(-π, π]`).
pub fn matrix_to_pose(t: &TransformSE3) -> Result<Pose6> {
    let m = t.matrix();
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    if std::f64::consts::FRAC_PI_2 - pitch.abs() <= GIMBAL_MARGIN {
        return Err(Error::DegeneratePose(format!(
            "pitch {pitch} within {GIMBAL_MARGIN} rad of gimbal lock"
        )));
    }
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    let tr = t.translation();
    Ok(Pose6::new(tr.x, tr.y, tr.z, roll, pitch, yaw))
}

/// Motion taking points from camera `target` into camera `source`, given
/// camera-to-world poses of both: `C_s^-1 C_t`.
pub fn relative_transform(source: &TransformSE3, target: &TransformSE3) -> TransformSE3 {
    source.inverse().compose(target)
}

/// `depth * K^-1 (u, v, 1)`.
pub fn backproject(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Result<[f64; 3]> {
    if !(depth > 0.0) {
        return Err(Error::Domain {
            op: "backproject",
            count: 1,
            positions: vec![],
        });
    }
    Ok([depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth])
}

/// Pixel position and depth of a camera-frame point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    /// `false` when `z < Z_EPS`; `u` and `v` are then meaningless.
    pub in_front: bool,
}

pub fn project(p: [f64; 3], k: &Intrinsics) -> Projection {
    let [x, y, z] = p;
    if z < Z_EPS {
        return Projection {
            u: f64::NAN,
            v: f64::NAN,
            z,
            in_front: false,
        };
    }
    Projection {
        u: k.fx * x / z + k.cx,
        v: k.fy * y / z + k.cy,
        z,
        in_front: true,
    }
}

/// Per-pixel depth with an optional validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    values: Array,
    mask: Option<Array>,
}

impl DepthMap {
    /// `values` is `[H, W]`; every valid entry must lie in `[d_min, d_max]`.
    pub fn new(values: Array, mask: Option<Array>, d_min: f64, d_max: f64) -> Result<Self> {
        if values.ndim() != 2 {
            return Err(Error::shape("DepthMap", format!("expected [H, W], got {:?}", values.shape())));
        }
        if let Some(m) = &mask {
            if m.shape() != values.shape() {
                return Err(Error::shape("DepthMap", "mask shape differs from depth"));
            }
        }
        let bad = (0..values.len())
            .filter(|&i| mask.as_ref().is_none_or(|m| m.data()[i] > 0.5))
            .filter(|&i| {
                let d = values.data()[i];
                !(d >= d_min && d <= d_max)
            })
            .count();
        if bad > 0 {
            return Err(Error::Dataset(format!(
                "{bad} valid depth entries outside [{d_min}, {d_max}]"
            )));
        }
        Ok(Self { values, mask })
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Array {
        &self.values
    }

    pub fn mask(&self) -> Option<&Array> {
        self.mask.as_ref()
    }
}

/// Plain-value warp result; see [`warp_coords_diff`].
#[derive(Clone, Debug)]
pub struct WarpResult {
    pub coords: Array,
    pub z_proj: Array,
    pub mask: Array,
}

fn check_size(depth: &DepthMap, k: &Intrinsics) -> Result<()> {
    if depth.height() != k.height || depth.width() != k.width {
        return Err(Error::shape(
            "warp_coords",
            format!(
                "depth {}x{} vs intrinsics {}x{}",
                depth.height(),
                depth.width(),
                k.height,
                k.width
            ),
        ));
    }
    Ok(())
}

/// Source-frame pixel coordinates of every target pixel.
pub fn warp_coords(depth: &DepthMap, t: &TransformSE3, k: &Intrinsics) -> Result<WarpResult> {
    check_size(depth, k)?;
    let mut tape = Tape::new();
    let d = tape.constant(depth.values.clone().reshape(&[1, k.height, k.width])?)?;
    let tr = DiffTransform::constant(&mut tape, t)?;
    let w = warp_coords_diff(&mut tape, d, &tr, k)?;
    Ok(WarpResult {
        coords: tape.value(w.coords).clone(),
        z_proj: tape.value(w.z_proj).clone().reshape(&[k.height, k.width])?,
        mask: w.mask,
    })
}

/// Depth of each target pixel expressed in the source camera (`z` after the
/// transform), alongside the coordinates it lands on.
pub fn project_depth(depth: &DepthMap, t: &TransformSE3, k: &Intrinsics) -> Result<WarpResult> {
    warp_coords(depth, t, k)
}
