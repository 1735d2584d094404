//! The twelve image corruptions used for robustness evaluation.
//!
//! Random draws depend only on the seed and the kind, never the severity,
//! so for a fixed seed stronger severities perturb the same pixels further.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffnum::Array;
use crate::seed;
use crate::{Error, Result};

pub const MAX_SEVERITY: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    ImpulseNoise,
    SpeckleNoise,
    ShotNoise,
    GaussianNoise,
    GlassBlur,
    GaussianBlur,
    DefocusBlur,
    Saturate,
    Brightness,
    Contrast,
    Spatter,
    ElasticTransform,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 12] = [
        CorruptionKind::ImpulseNoise,
        CorruptionKind::SpeckleNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::GaussianNoise,
        CorruptionKind::GlassBlur,
        CorruptionKind::GaussianBlur,
        CorruptionKind::DefocusBlur,
        CorruptionKind::Saturate,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Spatter,
        CorruptionKind::ElasticTransform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::SpeckleNoise => "speckle_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::GlassBlur => "glass_blur",
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::Saturate => "saturate",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Spatter => "spatter",
            CorruptionKind::ElasticTransform => "elastic_transform",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown corruption kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// 1..=5; 0 is accepted as the identity.
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if severity > MAX_SEVERITY {
            return Err(Error::Config(format!("severity {severity} outside 0..={MAX_SEVERITY}")));
        }
        Ok(Self { kind, severity })
    }

    /// Every kind at severities 1 to 5, kind-major.
    pub fn grid() -> Vec<CorruptionSpec> {
        CorruptionKind::ALL
            .into_iter()
            .flat_map(|kind| (1..=MAX_SEVERITY).map(move |severity| CorruptionSpec { kind, severity }))
            .collect()
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.severity)
    }
}

impl FromStr for CorruptionSpec {
    type Err = Error;

    /// Parses `kind:severity`.
    fn from_str(s: &str) -> Result<Self> {
        let (k, sev) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("corruption `{s}` is not of the form kind:severity")))?;
        let severity = sev
            .parse::<u8>()
            .map_err(|_| Error::Config(format!("bad corruption severity `{sev}`")))?;
        Self::new(k.parse()?, severity)
    }
}

const GAUSSIAN_SIGMA: [f64; 5] = [0.04, 0.06, 0.09, 0.13, 0.18];
const SHOT_PHOTONS: [f64; 5] = [500.0, 250.0, 100.0, 75.0, 50.0];
const IMPULSE_FRACTION: [f64; 5] = [0.01, 0.02, 0.05, 0.08, 0.12];
const SPECKLE_SIGMA: [f64; 5] = [0.06, 0.1, 0.15, 0.2, 0.25];
const BLUR_SIGMA: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.5];
const DEFOCUS_RADIUS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
const GLASS: [(f64, usize); 5] = [(0.5, 1), (0.75, 1), (1.0, 2), (1.25, 2), (1.5, 3)];
/// Largest pixel swap offset per severity.
const GLASS_DELTA: [i64; 5] = [1, 2, 2, 3, 4];
const BRIGHTNESS_SHIFT: [f64; 5] = [0.1, 0.15, 0.2, 0.25, 0.3];
const CONTRAST_FACTOR: [f64; 5] = [0.75, 0.6, 0.5, 0.4, 0.3];
const SATURATE_FACTOR: [f64; 5] = [1.3, 1.6, 1.9, 2.2, 2.5];
const SPATTER_DENSITY: [f64; 5] = [0.01, 0.0225, 0.035, 0.0475, 0.06];
const ELASTIC_ALPHA: [f64; 5] = [8.0, 12.0, 16.0, 20.0, 24.0];
const ELASTIC_SIGMA: f64 = 4.0;

/// Gaussian-noise standard deviation at `severity` (1..=5).
pub fn gaussian_noise_sigma(severity: u8) -> f64 {
    GAUSSIAN_SIGMA[usize::from(severity.clamp(1, 5)) - 1]
}

/// Applies `spec` to an image `[C, H, W]` with values in `[0, 1]`; the
/// output is clipped to `[0, 1]` and deterministic in `seed`.
pub fn corrupt(image: &Array, spec: CorruptionSpec, seed: u64) -> Result<Array> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("corrupt", format!("expected [C, H, W], got {s:?}")));
    }
    if spec.severity > MAX_SEVERITY {
        return Err(Error::Config(format!("severity {} outside 0..={MAX_SEVERITY}", spec.severity)));
    }
    if spec.severity == 0 {
        return Ok(image.clone());
    }
    let i = usize::from(spec.severity) - 1;
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut rng = seed::rng(seed, spec.kind.as_str());
    let x = image.data();
    let out: Vec<f64> = match spec.kind {
        CorruptionKind::GaussianNoise => x
            .iter()
            .map(|&v| v + GAUSSIAN_SIGMA[i] * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        CorruptionKind::SpeckleNoise => x
            .iter()
            .map(|&v| v + v * SPECKLE_SIGMA[i] * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        CorruptionKind::ShotNoise => {
            let lam = SHOT_PHOTONS[i];
            x.iter()
                .map(|&v| {
                    let rate = (v.max(0.0) * lam).max(1e-12);
                    let k: f64 = Poisson::new(rate).expect("positive rate").sample(&mut rng);
                    if v <= 0.0 {
                        0.0
                    } else {
                        k / lam
                    }
                })
                .collect()
        }
        CorruptionKind::ImpulseNoise => x
            .iter()
            .map(|&v| {
                let u: f64 = rng.random();
                let salt: bool = rng.random();
                if u < IMPULSE_FRACTION[i] {
                    if salt {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
            .collect(),
        CorruptionKind::GaussianBlur => gaussian_blur(x, c, h, w, BLUR_SIGMA[i]),
        CorruptionKind::DefocusBlur => convolve(x, c, h, w, &disk_kernel(DEFOCUS_RADIUS[i])),
        CorruptionKind::GlassBlur => {
            let (sigma, iters) = GLASS[i];
            let delta = GLASS_DELTA[i];
            let mut y = gaussian_blur(x, c, h, w, sigma);
            for _ in 0..iters {
                for r in (0..h).rev() {
                    for col in (0..w).rev() {
                        let dr = rng.random_range(-delta..=delta);
                        let dc = rng.random_range(-delta..=delta);
                        let r2 = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                        let c2 = (col as i64 + dc).clamp(0, w as i64 - 1) as usize;
                        for ch in 0..c {
                            y.swap(ch * h * w + r * w + col, ch * h * w + r2 * w + c2);
                        }
                    }
                }
            }
            gaussian_blur(&y, c, h, w, sigma)
        }
        CorruptionKind::Brightness => {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            x.iter().map(|&v| v + sign * BRIGHTNESS_SHIFT[i]).collect()
        }
        CorruptionKind::Contrast => {
            let mut y = x.to_vec();
            for ch in 0..c {
                let plane = &mut y[ch * h * w..(ch + 1) * h * w];
                let m = plane.iter().sum::<f64>() / (h * w) as f64;
                for v in plane {
                    *v = (*v - m) * CONTRAST_FACTOR[i] + m;
                }
            }
            y
        }
        CorruptionKind::Saturate => {
            if c != 3 {
                return Err(Error::shape("corrupt", "saturate needs an RGB image"));
            }
            let f = SATURATE_FACTOR[i];
            let n = h * w;
            let mut y = x.to_vec();
            for p in 0..n {
                let gray = 0.299 * x[p] + 0.587 * x[n + p] + 0.114 * x[2 * n + p];
                for ch in 0..3 {
                    y[ch * n + p] = gray + f * (x[ch * n + p] - gray);
                }
            }
            y
        }
        CorruptionKind::Spatter => spatter(x, c, h, w, SPATTER_DENSITY[i], &mut rng),
        CorruptionKind::ElasticTransform => elastic(x, c, h, w, ELASTIC_ALPHA[i], &mut rng),
    };
    Array::new(s, out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m >= n { period - m } else { m }) as usize
}

fn gaussian_blur(x: &[f64], c: usize, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let mut tmp = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for row in 0..h {
            for col in 0..w {
                tmp[base + row * w + col] = (-r..=r)
                    .map(|d| k[(d + r) as usize] * x[base + row * w + reflect(col as i64 + d, w)])
                    .sum();
            }
        }
        for row in 0..h {
            for col in 0..w {
                out[base + row * w + col] = (-r..=r)
                    .map(|d| k[(d + r) as usize] * tmp[base + reflect(row as i64 + d, h) * w + col])
                    .sum();
            }
        }
    }
    out
}

/// Normalised uniform disk of the given radius as `(dy, dx, weight)` taps.
fn disk_kernel(radius: f64) -> Vec<(i64, i64, f64)> {
    let r = radius.ceil() as i64;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                taps.push((dy, dx, 1.0));
            }
        }
    }
    let n = taps.len() as f64;
    taps.into_iter().map(|(dy, dx, _)| (dy, dx, 1.0 / n)).collect()
}

fn convolve(x: &[f64], c: usize, h: usize, w: usize, taps: &[(i64, i64, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for row in 0..h {
            for col in 0..w {
                out[base + row * w + col] = taps
                    .iter()
                    .map(|&(dy, dx, k)| k * x[base + reflect(row as i64 + dy, h) * w + reflect(col as i64 + dx, w)])
                    .sum();
            }
        }
    }
    out
}

const SPATTER_COLOR: [f64; 3] = [0.33, 0.22, 0.12];
const SPATTER_ALPHA: f64 = 0.75;

/// Opaque-ish mud drops: `density * H * W` disks drawn from a fixed list, so
/// higher densities add drops on top of the lower-density ones.
fn spatter(x: &[f64], c: usize, h: usize, w: usize, density: f64, rng: &mut impl Rng) -> Vec<f64> {
    let max_drops = (SPATTER_DENSITY[4] * (h * w) as f64).round() as usize;
    let drops: Vec<(f64, f64, f64)> = (0..max_drops)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(0.8..2.2),
            )
        })
        .collect();
    let n = (density * (h * w) as f64).round() as usize;
    let mut y = x.to_vec();
    for &(cy, cx, r) in &drops[..n] {
        let (r0, r1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
        let (c0, c1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (dy, dx) = (row as f64 - cy, col as f64 - cx);
                if dy * dy + dx * dx <= r * r {
                    for ch in 0..c {
                        let v = &mut y[ch * h * w + row * w + col];
                        *v = SPATTER_ALPHA * SPATTER_COLOR[ch % 3] + (1.0 - SPATTER_ALPHA) * *v;
                    }
                }
            }
        }
    }
    y
}

/// Resamples along a smooth random displacement field scaled by `alpha`.
fn elastic(x: &[f64], c: usize, h: usize, w: usize, alpha: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = h * w;
    let raw: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let field = gaussian_blur(&raw, 2, h, w, ELASTIC_SIGMA);
    let mut out = vec![0.0; x.len()];
    for row in 0..h {
        for col in 0..w {
            let p = row * w + col;
            let sx = (col as f64 + alpha * field[p]).clamp(0.0, (w - 1) as f64);
            let sy = (row as f64 + alpha * field[n + p]).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let b = ch * n;
                let top = x[b + y0 * w + x0] * (1.0 - fx) + x[b + y0 * w + x1] * fx;
                let bot = x[b + y1 * w + x0] * (1.0 - fx) + x[b + y1 * w + x1] * fx;
                out[b + p] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`; infinite for
/// identical inputs.
pub fn psnr(a: &Array, b: &Array) -> f64 {
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.len().max(1) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
