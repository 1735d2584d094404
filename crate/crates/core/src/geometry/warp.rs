//! Differentiable inverse warping on the tape.

use super::{rotation_entries, Intrinsics, TransformSE3};
use crate::diffnum::{Array, Tape, Var};
use crate::{Error, Result};

/// Points with camera-frame depth below this are treated as behind the camera.
pub const Z_EPS: f64 = 1e-6;

/// Rigid transform whose entries are scalar tape variables.
#[derive(Clone, Copy, Debug)]
pub struct DiffTransform {
    pub r: [[Var; 3]; 3],
    pub t: [Var; 3],
}

impl DiffTransform {
    /// Non-differentiable copy of a plain transform.
    pub fn constant(tape: &mut Tape, tr: &TransformSE3) -> Result<Self> {
        let m = tr.matrix();
        let mut r = [[Var(0); 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = tape.scalar(m[(i, j)])?;
            }
        }
        let t = [tape.scalar(m[(0, 3)])?, tape.scalar(m[(1, 3)])?, tape.scalar(m[(2, 3)])?];
        Ok(Self { r, t })
    }

    /// Current numeric value.
    pub fn value(&self, tape: &Tape) -> TransformSE3 {
        let r = nalgebra::Matrix3::from_fn(|i, j| tape.value(self.r[i][j]).item());
        let t = nalgebra::Vector3::new(
            tape.value(self.t[0]).item(),
            tape.value(self.t[1]).item(),
            tape.value(self.t[2]).item(),
        );
        TransformSE3::from_parts(r, t)
    }
}

/// Builds `Rz(yaw) Ry(pitch) Rx(roll)` and the translation from a `[6]`
/// pose variable ordered `[tx, ty, tz, roll, pitch, yaw]`.
pub fn pose_transform(tape: &mut Tape, pose: Var) -> Result<DiffTransform> {
    if tape.shape(pose) != [6] {
        return Err(Error::shape("pose_transform", format!("expected [6], got {:?}", tape.shape(pose))));
    }
    let mut c = [Var(0); 6];
    for (i, v) in c.iter_mut().enumerate() {
        *v = tape.slice(pose, 0, i, 1)?;
    }
    let (sr, cr) = (tape.sin(c[3])?, tape.cos(c[3])?);
    let (sp, cp) = (tape.sin(c[4])?, tape.cos(c[4])?);
    let (sy, cy) = (tape.sin(c[5])?, tape.cos(c[5])?);

    let cy_sp = tape.mul(cy, sp)?;
    let sy_sp = tape.mul(sy, sp)?;
    let r00 = tape.mul(cy, cp)?;
    let a = tape.mul(cy_sp, sr)?;
    let b = tape.mul(sy, cr)?;
    let r01 = tape.sub(a, b)?;
    let a = tape.mul(cy_sp, cr)?;
    let b = tape.mul(sy, sr)?;
    let r02 = tape.add(a, b)?;
    let r10 = tape.mul(sy, cp)?;
    let a = tape.mul(sy_sp, sr)?;
    let b = tape.mul(cy, cr)?;
    let r11 = tape.add(a, b)?;
    let a = tape.mul(sy_sp, cr)?;
    let b = tape.mul(cy, sr)?;
    let r12 = tape.sub(a, b)?;
    let r20 = tape.neg(sp)?;
    let r21 = tape.mul(cp, sr)?;
    let r22 = tape.mul(cp, cr)?;
    debug_assert!({
        let e = rotation_entries(
            tape.value(c[3]).item(),
            tape.value(c[4]).item(),
            tape.value(c[5]).item(),
        );
        (tape.value(r01).item() - e[0][1]).abs() < 1e-15
    });
    Ok(DiffTransform {
        r: [[r00, r01, r02], [r10, r11, r12], [r20, r21, r22]],
        t: [c[0], c[1], c[2]],
    })
}

/// Differentiable warp outputs.
#[derive(Clone, Debug)]
pub struct Warp {
    /// `[2, H, W]` source pixel coordinates (x then y).
    pub coords: Var,
    /// `[1, H, W]` depth of each target point in the source camera.
    pub z_proj: Var,
    /// `[H, W]`, 1 where the point is in front of the source camera and
    /// lands inside the source image.
    pub mask: Array,
}

fn ray_grids(k: &Intrinsics) -> (Array, Array, Array, Array) {
    let (h, w) = (k.height, k.width);
    let u = Array::from_fn(&[1, h, w], |i| (i % w) as f64);
    let v = Array::from_fn(&[1, h, w], |i| (i / w) as f64);
    let rx = u.map(|x| (x - k.cx) / k.fx);
    let ry = v.map(|y| (y - k.cy) / k.fy);
    (u, v, rx, ry)
}

/// Maps every target pixel through depth `[1, H, W]` and transform `tr`
/// into source pixel coordinates.
///
/// The pixel offset is computed as `u + fx * (x_n - r_x)` with normalised
/// rays, so the identity transform reproduces the integer grid exactly.
pub fn warp_coords_diff(tape: &mut Tape, depth: Var, tr: &DiffTransform, k: &Intrinsics) -> Result<Warp> {
    let (h, w) = (k.height, k.width);
    if tape.shape(depth) != [1, h, w] {
        return Err(Error::shape(
            "warp_coords",
            format!("depth {:?} vs intrinsics {h}x{w}", tape.shape(depth)),
        ));
    }
    let (u, v, rx, ry) = ray_grids(k);
    let u = tape.constant(u)?;
    let v = tape.constant(v)?;
    let rx = tape.constant(rx)?;
    let ry = tape.constant(ry)?;
    let one = tape.scalar(1.0)?;
    let q = tape.div(one, depth)?;

    let mut rows = [Var(0); 3];
    for (i, row) in rows.iter_mut().enumerate() {
        // r_i0 * rx + r_i1 * ry + r_i2 + t_i / D
        let a = tape.mul(tr.r[i][0], rx)?;
        let b = tape.mul(tr.r[i][1], ry)?;
        let s = tape.add(a, b)?;
        let s = tape.add(s, tr.r[i][2])?;
        let tq = tape.mul(tr.t[i], q)?;
        *row = tape.add(s, tq)?;
    }
    let [nx, ny, den] = rows;
    let z_proj = tape.mul(depth, den)?;

    let front = tape.value(z_proj).map(|z| if z > Z_EPS { 1.0 } else { 0.0 });
    let fm = tape.constant(front.clone())?;
    let back = tape.constant(front.map(|m| 1.0 - m))?;
    let den_masked = tape.mul(den, fm)?;
    let den_safe = tape.add(den_masked, back)?;

    let xn = tape.div(nx, den_safe)?;
    let yn = tape.div(ny, den_safe)?;
    let dx = tape.sub(xn, rx)?;
    let dy = tape.sub(yn, ry)?;
    let dx = tape.scale(dx, k.fx)?;
    let dy = tape.scale(dy, k.fy)?;
    let uu = tape.add(u, dx)?;
    let vv = tape.add(v, dy)?;
    let coords = tape.concat(&[uu, vv], 0)?;

    let cu = tape.value(uu).data();
    let cv = tape.value(vv).data();
    let (wmax, hmax) = ((w - 1) as f64, (h - 1) as f64);
    let mask = Array::from_fn(&[h, w], |i| {
        let inside = cu[i] >= 0.0 && cu[i] <= wmax && cv[i] >= 0.0 && cv[i] <= hmax;
        if front.data()[i] > 0.0 && inside {
            1.0
        } else {
            0.0
        }
    });
    Ok(Warp { coords, z_proj, mask })
}

/// Samples `image [C, H, W]` at `coords`, zeroing pixels outside `mask`.
/// Returns the warped image and the mask actually applied.
pub fn synthesize_view(tape: &mut Tape, image: Var, coords: Var, mask: &Array) -> Result<(Var, Array)> {
    let (sampled, in_range) = tape.bilinear_sample(image, coords)?;
    let s = tape.shape(sampled).to_vec();
    if mask.shape() != [s[1], s[2]] {
        return Err(Error::shape("synthesize_view", format!("mask {:?} vs image {s:?}", mask.shape())));
    }
    let combined = Array::from_fn(&[s[1], s[2]], |i| mask.data()[i] * in_range.data()[i]);
    let m = tape.constant(combined.clone().reshape(&[1, s[1], s[2]])?)?;
    let out = tape.mul(sampled, m)?;
    Ok((out, combined))
}
