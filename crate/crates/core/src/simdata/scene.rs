//! Procedural tube scenes.
//!
//! The lumen is a generalised cylinder: cross-sections are taken in planes
//! of constant world `z`, centred on a spline centreline `(cx(z), cy(z))`,
//! with a radius that varies with `z` and the polar angle around the centre.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spline::CubicSpline;
use crate::seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Axial extent along world `z`.
    pub length: f64,
    /// Base radius, within `[0.5, 2.0]`.
    pub radius: f64,
    /// Total amplitude of the sinusoidal radius bumps.
    pub bump_amplitude: f64,
    pub bumps: usize,
    /// Largest lateral offset of centreline control points.
    pub wander: f64,
    pub control_spacing: f64,
    /// Bound on the centreline curvature `|c''(z)|`.
    pub max_curvature: f64,
    /// Base texture frequency in cycles per scene unit.
    pub texture_frequency: f64,
    pub texture_octaves: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            length: 40.0,
            radius: 1.0,
            bump_amplitude: 0.12,
            bumps: 3,
            wander: 0.2,
            control_spacing: 5.0,
            max_curvature: 0.25,
            texture_frequency: 1.5,
            texture_octaves: 3,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=2.0).contains(&self.radius) {
            return Err(Error::Config(format!("tube radius {} outside [0.5, 2]", self.radius)));
        }
        if !(self.bump_amplitude >= 0.0 && self.bump_amplitude <= 0.3 * self.radius) {
            return Err(Error::Config(format!(
                "bump amplitude {} must lie in [0, 0.3 * radius]",
                self.bump_amplitude
            )));
        }
        if !(self.length > 0.0 && self.control_spacing > 0.0 && self.wander >= 0.0) {
            return Err(Error::Config("scene length, control spacing and wander must be positive".into()));
        }
        if !(self.max_curvature > 0.0 && self.max_curvature * self.radius < 1.0) {
            return Err(Error::Config(format!(
                "curvature bound {} must be positive and below 1 / radius",
                self.max_curvature
            )));
        }
        if self.texture_frequency <= 0.0 || self.texture_octaves == 0 {
            return Err(Error::Config("texture needs a positive frequency and at least one octave".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Bump {
    amplitude: f64,
    axial: f64,
    angular: f64,
    phase: f64,
}

#[derive(Clone, Debug)]
pub struct TubeScene {
    pub config: SceneConfig,
    pub seed: u64,
    cx: CubicSpline,
    cy: CubicSpline,
    bumps: Vec<Bump>,
    texture_seed: u64,
}

/// Builds the scene for `seed`; identical inputs give identical scenes.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<TubeScene> {
    cfg.validate()?;
    let mut rng = seed::rng(seed, "scene.centerline");
    let n = (cfg.length / cfg.control_spacing).ceil() as usize + 1;
    // one extra knot on each side keeps the natural-spline ends outside the tube
    let knots: Vec<f64> = (0..n + 2).map(|i| (i as f64 - 1.0) * cfg.control_spacing).collect();
    let mut off = |_: &f64| rng.random_range(-cfg.wander..=cfg.wander);
    let xs: Vec<f64> = knots.iter().map(&mut off).collect();
    let ys: Vec<f64> = knots.iter().map(&mut off).collect();
    let cx = CubicSpline::new(knots.clone(), xs)?;
    let cy = CubicSpline::new(knots, ys)?;

    let steps = (cfg.length * 20.0).ceil() as usize;
    for i in 0..=steps {
        let z = cfg.length * i as f64 / steps as f64;
        let k = cx.second_derivative(z).hypot(cy.second_derivative(z));
        if k > cfg.max_curvature {
            return Err(Error::Config(format!(
                "centreline curvature {k:.3} at z = {z:.2} exceeds bound {}",
                cfg.max_curvature
            )));
        }
    }

    let mut rng = seed::rng(seed, "scene.bumps");
    let bumps = (0..cfg.bumps)
        .map(|_| Bump {
            amplitude: cfg.bump_amplitude / cfg.bumps as f64 * rng.random_range(0.5..=1.0),
            axial: rng.random_range(0.5..2.0),
            angular: f64::from(rng.random_range(0..4u8)),
            phase: rng.random_range(0.0..TAU),
        })
        .collect();
    Ok(TubeScene {
        config: cfg.clone(),
        seed,
        cx,
        cy,
        bumps,
        texture_seed: seed::derive(seed, "scene.texture"),
    })
}

impl TubeScene {
    pub fn center(&self, z: f64) -> (f64, f64) {
        (self.cx.eval(z), self.cy.eval(z))
    }

    /// Unit tangent of the centreline at `z`.
    pub fn tangent(&self, z: f64) -> [f64; 3] {
        let (dx, dy) = (self.cx.derivative(z), self.cy.derivative(z));
        let n = (dx * dx + dy * dy + 1.0).sqrt();
        [dx / n, dy / n, 1.0 / n]
    }

    pub fn radius_at(&self, z: f64, angle: f64) -> f64 {
        self.config.radius
            + self
                .bumps
                .iter()
                .map(|b| b.amplitude * (b.axial * z + b.angular * angle + b.phase).sin())
                .sum::<f64>()
    }

    /// Cross-section coordinates of `p`: radial distance from the centreline
    /// and polar angle in `[0, 2 pi)`.
    pub fn polar(&self, p: [f64; 3]) -> (f64, f64) {
        let (cx, cy) = self.center(p[2]);
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        (dx.hypot(dy), dy.atan2(dx).rem_euclid(TAU))
    }

    /// Radial distance minus wall radius: negative inside the lumen.
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        let (rho, angle) = self.polar(p);
        rho - self.radius_at(p[2], angle)
    }

    /// Mucosa-like albedo at a wall point.
    pub fn albedo(&self, p: [f64; 3]) -> [f64; 3] {
        let (_, angle) = self.polar(p);
        let t = self.texture(p[2], angle);
        palette(t)
    }

    /// Band-limited value noise in `[0, 1]` over (axial position, angle),
    /// periodic in the angle.
    fn texture(&self, z: f64, angle: f64) -> f64 {
        let cfg = &self.config;
        let (mut sum, mut norm, mut amp) = (0.0, 0.0, 1.0);
        for o in 0..cfg.texture_octaves {
            let freq = cfg.texture_frequency * f64::from(1u32 << o);
            let around = ((TAU * cfg.radius * freq).round() as i64).max(3);
            let u = angle / TAU * around as f64;
            let v = z * freq;
            sum += amp * value_noise(self.texture_seed ^ seed::mix(o as u64), u, v, around);
            norm += amp;
            amp *= 0.55;
        }
        (sum / norm).clamp(0.0, 1.0)
    }
}

fn lattice(seed: u64, i: i64, j: i64) -> f64 {
    let h = seed::mix(seed ^ seed::mix((i as u64) ^ seed::mix(j as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, u: f64, v: f64, period: i64) -> f64 {
    let (i0, j0) = (u.floor(), v.floor());
    let (fu, fv) = (fade(u - i0), fade(v - j0));
    let (i0, j0) = (i0 as i64, j0 as i64);
    let at = |i: i64, j: i64| lattice(seed, i.rem_euclid(period), j);
    let a = at(i0, j0) + fu * (at(i0 + 1, j0) - at(i0, j0));
    let b = at(i0, j0 + 1) + fu * (at(i0 + 1, j0 + 1) - at(i0, j0 + 1));
    a + fv * (b - a)
}

fn palette(t: f64) -> [f64; 3] {
    const DARK: [f64; 3] = [0.42, 0.10, 0.12];
    const MID: [f64; 3] = [0.86, 0.42, 0.38];
    const PALE: [f64; 3] = [0.97, 0.80, 0.66];
    // stretch the noise (concentrated near 0.5) over the palette
    let s = (0.5 + (t - 0.5) * 2.2).clamp(0.0, 1.0);
    let (a, b, w) = if s < 0.5 { (DARK, MID, s * 2.0) } else { (MID, PALE, s * 2.0 - 1.0) };
    [
        a[0] + w * (b[0] - a[0]),
        a[1] + w * (b[1] - a[1]),
        a[2] + w * (b[2] - a[2]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_is_periodic_in_angle() {
        let s = generate_scene(3, &SceneConfig::default()).unwrap();
        for z in [0.3, 5.1, 12.7] {
            let a = s.texture(z, 0.0);
            let b = s.texture(z, TAU - 1e-12);
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn palette_in_unit_range() {
        for i in 0..=100 {
            let c = palette(i as f64 / 100.0);
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
