//! Self-supervised training losses.
//!
//! For a target frame and a source frame warped into it, the training
//! objective combines a brightness-aware photometric error (SSIM plus a
//! per-pixel L2 norm after an affine intensity correction), an edge-aware
//! smoothness prior on the normalised disparity and a symmetric relative
//! depth-consistency term between the projected target depth and the
//! source depth sampled at the warp coordinates.

use serde::{Deserialize, Serialize};

use crate::diffnum::{Array, Tape, Var};
use crate::geometry::{synthesize_view, warp_coords_diff, DiffTransform, Intrinsics};
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Allowed range of the fitted brightness gain.
pub const GAIN_MIN: f64 = 0.5;
pub const GAIN_MAX: f64 = 2.0;

/// Added under the square root of the per-pixel L2 norm so its gradient is
/// defined where the residual vanishes.
const L2_EPS: f64 = 1e-24;

/// Smallest disparity mean accepted by the smoothness normalisation.
const DISP_MEAN_MIN: f64 = 1e-8;

/// Variance below which the warped image is treated as constant.
const FIT_VAR_MIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Photometric weight.
    pub alpha: f64,
    /// Smoothness weight.
    pub beta: f64,
    /// Geometry-consistency weight.
    pub gamma: f64,
    /// SSIM share inside the photometric term.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            gamma: 0.5,
            epsilon: 0.85,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.epsilon];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if self.epsilon > 1.0 {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        Ok(())
    }
}

/// Affine intensity map `a * I + c` applied to the warped image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrightnessAffine {
    pub a: f64,
    pub c: f64,
}

impl BrightnessAffine {
    pub const IDENTITY: Self = Self { a: 1.0, c: 0.0 };
}

fn check_image_mask(op: &'static str, img: &[usize], other: &[usize], mask: &[usize]) -> Result<()> {
    if img.len() != 3 || img != other || mask != [img[1], img[2]] {
        return Err(Error::shape(op, format!("images {img:?} / {other:?}, mask {mask:?}")));
    }
    Ok(())
}

fn valid_count(mask: &Array) -> usize {
    mask.data().iter().filter(|&&m| m > 0.0).count()
}

/// Least-squares fit of `target ~ a * warped + c` over masked pixels of all
/// channels, with `a` clamped to `[GAIN_MIN, GAIN_MAX]` and `c` refitted for
/// the clamped gain. A constant warped image yields `a = 1` and the mean
/// difference as offset.
pub fn brightness_fit(warped: &Array, target: &Array, mask: &Array) -> Result<BrightnessAffine> {
    check_image_mask("brightness_fit", warped.shape(), target.shape(), mask.shape())?;
    let hw = mask.len();
    let mut pairs = Vec::new();
    for (i, (&w, &t)) in warped.data().iter().zip(target.data()).enumerate() {
        if mask.data()[i % hw] > 0.0 {
            pairs.push((w, t));
        }
    }
    if pairs.is_empty() {
        return Err(Error::DegenerateWarp("no valid pixels for the brightness fit".into()));
    }
    let n = pairs.len() as f64;
    let mw = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mt = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let var = pairs.iter().map(|p| (p.0 - mw).powi(2)).sum::<f64>() / n;
    if pairs.len() < 2 || var < FIT_VAR_MIN {
        return Ok(BrightnessAffine { a: 1.0, c: mt - mw });
    }
    let cov = pairs.iter().map(|p| (p.0 - mw) * (p.1 - mt)).sum::<f64>() / n;
    let a = (cov / var).clamp(GAIN_MIN, GAIN_MAX);
    Ok(BrightnessAffine { a, c: mt - a * mw })
}

/// Per-pixel, per-channel SSIM of `[C, H, W]` images with a uniform
/// `SSIM_WINDOW` box and reflection padding.
pub fn ssim_map_diff(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(y) {
        return Err(Error::shape(
            "ssim_map",
            format!("{:?} vs {:?}", tape.shape(x), tape.shape(y)),
        ));
    }
    let mu_x = tape.avg_pool_reflect(x, SSIM_WINDOW)?;
    let mu_y = tape.avg_pool_reflect(y, SSIM_WINDOW)?;
    let xx = tape.pow2(x)?;
    let yy = tape.pow2(y)?;
    let xy = tape.mul(x, y)?;
    let e_xx = tape.avg_pool_reflect(xx, SSIM_WINDOW)?;
    let e_yy = tape.avg_pool_reflect(yy, SSIM_WINDOW)?;
    let e_xy = tape.avg_pool_reflect(xy, SSIM_WINDOW)?;
    let mu_xx = tape.pow2(mu_x)?;
    let mu_yy = tape.pow2(mu_y)?;
    let mu_xy = tape.mul(mu_x, mu_y)?;
    let var_x = tape.sub(e_xx, mu_xx)?;
    let var_y = tape.sub(e_yy, mu_yy)?;
    let cov = tape.sub(e_xy, mu_xy)?;

    let n1 = tape.scale(mu_xy, 2.0)?;
    let n1 = tape.offset(n1, SSIM_C1)?;
    let n2 = tape.scale(cov, 2.0)?;
    let n2 = tape.offset(n2, SSIM_C2)?;
    let d1 = tape.add(mu_xx, mu_yy)?;
    let d1 = tape.offset(d1, SSIM_C1)?;
    let d2 = tape.add(var_x, var_y)?;
    let d2 = tape.offset(d2, SSIM_C2)?;
    let num = tape.mul(n1, n2)?;
    let den = tape.mul(d1, d2)?;
    tape.div(num, den)
}

/// Plain-array SSIM map; see [`ssim_map_diff`].
pub fn ssim_map(x: &Array, y: &Array) -> Result<Array> {
    let mut tape = Tape::new();
    let (xv, yv) = (tape.constant(x.clone())?, tape.constant(y.clone())?);
    let s = ssim_map_diff(&mut tape, xv, yv)?;
    Ok(tape.value(s).clone())
}

/// Mean of the `[H, W]` map `per_pixel` over pixels where `mask > 0`.
fn masked_mean(tape: &mut Tape, per_pixel: Var, mask: &Array) -> Result<Var> {
    let n = valid_count(mask);
    if n == 0 {
        return Err(Error::DegenerateWarp("mask has no valid pixels".into()));
    }
    let m = tape.constant(mask.clone().reshape(tape.shape(per_pixel))?)?;
    let masked = tape.mul(per_pixel, m)?;
    let s = tape.sum(masked)?;
    tape.scale(s, 1.0 / n as f64)
}

/// Brightness-corrected photometric error between `warped` and `target`
/// (`[C, H, W]`), averaged over `mask` (`[H, W]`).
///
/// The affine correction is fitted on the current values and enters the tape
/// as constants. Per pixel the error is
/// `epsilon / 2 * (1 - SSIM) + (1 - epsilon) * ||target - warped'||_2`, with
/// SSIM averaged over channels and the norm taken across channels.
pub fn photometric_loss_diff(tape: &mut Tape, warped: Var, target: Var, mask: &Array, epsilon: f64) -> Result<Var> {
    let fit = brightness_fit(tape.value(warped), tape.value(target), mask)?;
    photometric_loss_with_fit(tape, warped, target, mask, epsilon, fit)
}

/// Photometric loss with a given brightness correction instead of a fresh
/// fit. Finite-difference checks use this to hold the correction fixed at
/// the base point, matching how the tape treats it.
pub fn photometric_loss_with_fit(
    tape: &mut Tape,
    warped: Var,
    target: Var,
    mask: &Array,
    epsilon: f64,
    fit: BrightnessAffine,
) -> Result<Var> {
    let s = tape.shape(target).to_vec();
    check_image_mask("photometric_loss", tape.shape(warped), &s, mask.shape())?;
    let (h, w) = (s[1], s[2]);
    let m = tape.constant(mask.clone().reshape(&[1, h, w])?)?;
    let corrected = tape.scale(warped, fit.a)?;
    let corrected = tape.offset(corrected, fit.c)?;
    let corrected = tape.mul(corrected, m)?;

    let ssim = ssim_map_diff(tape, corrected, target)?;
    let ssim = tape.mean_axis(ssim, 0)?;
    let dssim = tape.scale(ssim, -epsilon / 2.0)?;
    let dssim = tape.offset(dssim, epsilon / 2.0)?;

    let diff = tape.sub(target, corrected)?;
    let sq = tape.pow2(diff)?;
    let sq = tape.sum_axis(sq, 0)?;
    let sq = tape.offset(sq, L2_EPS)?;
    let l2 = tape.sqrt(sq)?;
    let l2 = tape.scale(l2, 1.0 - epsilon)?;

    let per_pixel = tape.add(dssim, l2)?;
    masked_mean(tape, per_pixel, mask)
}

/// Plain-array photometric loss; see [`photometric_loss_diff`].
pub fn photometric_loss(warped: &Array, target: &Array, mask: &Array, epsilon: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (w, t) = (tape.constant(warped.clone())?, tape.constant(target.clone())?);
    let l = photometric_loss_diff(&mut tape, w, t, mask, epsilon)?;
    Ok(tape.value(l).item())
}

/// Forward difference along the last (`axis = 2`) or middle (`axis = 1`)
/// axis of a `[C, H, W]` variable.
fn forward_diff(tape: &mut Tape, x: Var, axis: usize) -> Result<Var> {
    let n = tape.shape(x)[axis];
    let hi = tape.slice(x, axis, 1, n - 1)?;
    let lo = tape.slice(x, axis, 0, n - 1)?;
    tape.sub(hi, lo)
}

/// Edge-aware smoothness of the mean-normalised disparity `[1, H, W]`
/// against image `[C, H, W]`:
/// `mean |dx d*| exp(-|dx I|) + mean |dy d*| exp(-|dy I|)`, with the image
/// gradient magnitude averaged over channels.
pub fn smoothness_loss_diff(tape: &mut Tape, disp: Var, image: Var) -> Result<Var> {
    let (sd, si) = (tape.shape(disp).to_vec(), tape.shape(image).to_vec());
    if sd.len() != 3 || sd[0] != 1 || si.len() != 3 || si[1..] != sd[1..] || sd[1] < 2 || sd[2] < 2 {
        return Err(Error::shape("smoothness_loss", format!("disparity {sd:?}, image {si:?}")));
    }
    let mean = tape.mean(disp)?;
    if tape.value(mean).item() <= DISP_MEAN_MIN {
        return Err(Error::Domain {
            op: "smoothness_loss",
            count: 1,
            positions: vec![0],
        });
    }
    let norm = tape.div(disp, mean)?;
    let mut total = None;
    for axis in [2, 1] {
        let dd = forward_diff(tape, norm, axis)?;
        let dd = tape.abs(dd)?;
        let di = forward_diff(tape, image, axis)?;
        let di = tape.abs(di)?;
        let di = tape.mean_axis(di, 0)?;
        let weight = tape.neg(di)?;
        let weight = tape.exp(weight)?;
        let ws = tape.shape(weight).to_vec();
        let weight = tape.reshape(weight, &[1, ws[0], ws[1]])?;
        let term = tape.mul(dd, weight)?;
        let term = tape.mean(term)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    Ok(total.expect("two axes"))
}

/// Plain-array smoothness loss; see [`smoothness_loss_diff`].
pub fn smoothness_loss(disp: &Array, image: &Array) -> Result<f64> {
    let mut tape = Tape::new();
    let (d, i) = (tape.constant(disp.clone())?, tape.constant(image.clone())?);
    let l = smoothness_loss_diff(&mut tape, d, i)?;
    Ok(tape.value(l).item())
}

/// Masked mean of `|a - b| / (a + b)` for depth maps `[1, H, W]`.
pub fn geometry_loss_diff(tape: &mut Tape, projected: Var, interpolated: Var, mask: &Array) -> Result<Var> {
    let s = tape.shape(projected).to_vec();
    if s.len() != 3 || s[0] != 1 || tape.shape(interpolated) != s || mask.shape() != [s[1], s[2]] {
        return Err(Error::shape(
            "geometry_loss",
            format!("{s:?} / {:?}, mask {:?}", tape.shape(interpolated), mask.shape()),
        ));
    }
    let (pa, pb) = (tape.value(projected).data(), tape.value(interpolated).data());
    let bad: Vec<usize> = (0..mask.len())
        .filter(|&i| mask.data()[i] > 0.0 && (pa[i] <= 0.0 || pb[i] <= 0.0))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Domain {
            op: "geometry_loss",
            count: bad.len(),
            positions: bad.into_iter().take(8).collect(),
        });
    }
    let m = tape.constant(mask.clone().reshape(&s)?)?;
    let outside = tape.constant(mask.map(|v| if v > 0.0 { 0.0 } else { 1.0 }).reshape(&s)?)?;
    let diff = tape.sub(projected, interpolated)?;
    let diff = tape.abs(diff)?;
    let den = tape.add(projected, interpolated)?;
    let den = tape.mul(den, m)?;
    let den = tape.add(den, outside)?;
    let ratio = tape.div(diff, den)?;
    let ratio = tape.reshape(ratio, &[s[1], s[2]])?;
    masked_mean(tape, ratio, mask)
}

/// Plain-array geometry loss; see [`geometry_loss_diff`].
pub fn geometry_loss(projected: &Array, interpolated: &Array, mask: &Array) -> Result<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(projected.clone())?, tape.constant(interpolated.clone())?);
    let l = geometry_loss_diff(&mut tape, a, b, mask)?;
    Ok(tape.value(l).item())
}

/// Weighted combination `alpha * photometric + beta * smoothness + gamma * geometry`.
pub fn total_loss(photometric: f64, smoothness: f64, geometry: f64, weights: &LossWeights) -> Result<f64> {
    if ![photometric, smoothness, geometry].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "total_loss" });
    }
    Ok(weights.alpha * photometric + weights.beta * smoothness + weights.gamma * geometry)
}

/// Loss components on the tape, each a `[1]` variable, plus the brightness
/// correction used for each pairing.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub photometric: Var,
    pub smoothness: Var,
    pub geometry: Var,
    pub total: Var,
    pub fits: Vec<BrightnessAffine>,
}

impl LossTerms {
    /// Numeric values `(total, photometric, smoothness, geometry)`.
    pub fn values(&self, tape: &Tape) -> (f64, f64, f64, f64) {
        let v = |x: Var| tape.value(x).item();
        (v(self.total), v(self.photometric), v(self.smoothness), v(self.geometry))
    }
}

/// One source frame seen from the target: its image `[C, H, W]`, its depth
/// `[1, H, W]` and the transform taking target-camera points into the source
/// camera.
#[derive(Clone, Copy, Debug)]
pub struct SourceView {
    pub image: Var,
    pub depth: Var,
    pub transform: DiffTransform,
}

/// Target-frame quantities shared by every pairing.
#[derive(Clone, Copy, Debug)]
pub struct TargetView {
    pub image: Var,
    pub disparity: Var,
    pub depth: Var,
}

/// Full objective for one target frame against each source view, with each
/// component averaged over the pairings.
///
/// Per pairing the target depth is warped into the source camera, the source
/// image is sampled at the warp coordinates for the photometric term, and
/// the source depth is sampled at the same coordinates and compared with the
/// projected target depth for the geometry term. Smoothness depends only on
/// the target and is computed once.
///
/// `frozen` supplies one brightness correction per source view in place of
/// fitting them on the current values.
pub fn snippet_loss(
    tape: &mut Tape,
    target: &TargetView,
    sources: &[SourceView],
    k: &Intrinsics,
    weights: &LossWeights,
    frozen: Option<&[BrightnessAffine]>,
) -> Result<LossTerms> {
    weights.validate()?;
    if sources.is_empty() {
        return Err(Error::Config("snippet loss needs at least one source view".into()));
    }
    if let Some(f) = frozen {
        if f.len() != sources.len() {
            return Err(Error::Config(format!(
                "{} frozen brightness fits for {} source views",
                f.len(),
                sources.len()
            )));
        }
    }
    let mut fits = Vec::with_capacity(sources.len());
    let mut photo = Vec::with_capacity(sources.len());
    let mut geom = Vec::with_capacity(sources.len());
    for (i, src) in sources.iter().enumerate() {
        let warp = warp_coords_diff(tape, target.depth, &src.transform, k)?;
        let (warped, valid) = synthesize_view(tape, src.image, warp.coords, &warp.mask)?;
        let fit = match frozen {
            Some(f) => f[i],
            None => brightness_fit(tape.value(warped), tape.value(target.image), &valid)?,
        };
        fits.push(fit);
        photo.push(photometric_loss_with_fit(tape, warped, target.image, &valid, weights.epsilon, fit)?);
        let (interp, _) = synthesize_view(tape, src.depth, warp.coords, &valid)?;
        geom.push(geometry_loss_diff(tape, warp.z_proj, interp, &valid)?);
    }
    let photometric = mean_of(tape, &photo)?;
    let geometry = mean_of(tape, &geom)?;
    let smoothness = smoothness_loss_diff(tape, target.disparity, target.image)?;
    let total = weighted_total(tape, photometric, smoothness, geometry, weights)?;
    Ok(LossTerms {
        photometric,
        smoothness,
        geometry,
        total,
        fits,
    })
}

fn mean_of(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    tape.scale(acc, 1.0 / xs.len() as f64)
}

/// Tape version of [`total_loss`].
pub fn weighted_total(tape: &mut Tape, photometric: Var, smoothness: Var, geometry: Var, w: &LossWeights) -> Result<Var> {
    let p = tape.scale(photometric, w.alpha)?;
    let s = tape.scale(smoothness, w.beta)?;
    let g = tape.scale(geometry, w.gamma)?;
    let t = tape.add(p, s)?;
    let t = tape.add(t, g)?;
    if !tape.value(t).all_finite() {
        return Err(Error::NonFinite { op: "total_loss" });
    }
    Ok(t)
}
