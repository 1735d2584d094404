//! Fusion of vibration features into vision feature maps.
//!
//! The `fh` mode treats each encoder feature map as the output of a noisy
//! channel and applies a per-channel Wiener gain in the Fourier domain,
//! `F' = ifft2(F . conj(H) / (|H|^2 + 1/snr))`, with `snr` read off the
//! vibration feature and `H` the spectrum of a learnable spatial kernel.
//! `sum` and `concat` are the plain ablation baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffnum::{Array, Padding, Spectrum, Tape, Var};
use crate::networks::params::{Bound, Init, ParamSpec};
use crate::vibration::{snr_head, SNR_CAP, SNR_FLOOR};
use crate::{Error, Result};

/// Largest total absolute weight of the learned kernel residual; keeps
/// `|H| >= 1 - RESIDUAL_MASS` at every frequency.
pub const RESIDUAL_MASS: f64 = 0.9;

/// Initial SNR head bias: a Wiener gain of `10/11` before training.
pub const SNR_BIAS_INIT: f64 = 10.0;

/// Tolerance on the imaginary part left after the inverse transform.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Fh,
    Concat,
    Sum,
    None,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::Fh, FusionMode::Concat, FusionMode::Sum, FusionMode::None];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Fh => "fh",
            FusionMode::Concat => "concat",
            FusionMode::Sum => "sum",
            FusionMode::None => "none",
        }
    }

    pub fn uses_vibration(self) -> bool {
        self != FusionMode::None
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fh" => Ok(FusionMode::Fh),
            "concat" => Ok(FusionMode::Concat),
            "sum" => Ok(FusionMode::Sum),
            "none" => Ok(FusionMode::None),
            other => Err(Error::Config(format!("unknown fusion mode `{other}`"))),
        }
    }
}

/// Parameter declarations for one fusion level with `channels x h x w`
/// feature maps and `d_vib` vibration features.
pub fn level_param_specs(mode: FusionMode, level: usize, channels: usize, h: usize, w: usize, d_vib: usize) -> Vec<ParamSpec> {
    let p = format!("fusion.{level}");
    match mode {
        FusionMode::Fh => vec![
            ParamSpec::new(format!("{p}.kernel"), &[channels, h, w], Init::Constant(0.0)),
            ParamSpec::new(format!("{p}.snr_w"), &[d_vib], Init::Normal(0.01)),
            ParamSpec::new(format!("{p}.snr_b"), &[1], Init::Constant(SNR_BIAS_INIT)),
        ],
        FusionMode::Sum => vec![
            ParamSpec::new(format!("{p}.lin_w"), &[channels, d_vib], Init::Normal(0.01)),
            ParamSpec::new(format!("{p}.lin_b"), &[channels, 1, 1], Init::Constant(0.0)),
        ],
        FusionMode::Concat => vec![
            ParamSpec::new(format!("{p}.lin_w"), &[channels, d_vib], Init::Normal(0.01)),
            ParamSpec::new(format!("{p}.lin_b"), &[channels, 1, 1], Init::Constant(0.0)),
            ParamSpec::new(format!("{p}.mix_w"), &[channels, 2 * channels, 1, 1], Init::IdentityBlock),
            ParamSpec::new(format!("{p}.mix_b"), &[channels, 1, 1], Init::Constant(0.0)),
        ],
        FusionMode::None => vec![],
    }
}

/// Scalar count of [`level_param_specs`].
pub fn level_param_count(mode: FusionMode, channels: usize, h: usize, w: usize, d_vib: usize) -> usize {
    match mode {
        FusionMode::Fh => channels * h * w + d_vib + 1,
        FusionMode::Sum => channels * d_vib + channels,
        FusionMode::Concat => channels * d_vib + channels + 2 * channels * channels + channels,
        FusionMode::None => 0,
    }
}

/// Tape handles of one fusion level.
#[derive(Clone, Copy, Debug)]
pub enum FusionVars {
    Fh {
        /// `[C, h, w]` unconstrained kernel residual.
        kernel: Var,
        snr_w: Var,
        snr_b: Var,
    },
    Sum {
        lin_w: Var,
        lin_b: Var,
    },
    Concat {
        lin_w: Var,
        lin_b: Var,
        mix_w: Var,
        mix_b: Var,
    },
    None,
}

impl FusionVars {
    pub fn bind(bound: &Bound, mode: FusionMode, level: usize) -> Result<Self> {
        let g = |s: &str| bound.get(&format!("fusion.{level}.{s}"));
        Ok(match mode {
            FusionMode::Fh => FusionVars::Fh {
                kernel: g("kernel")?,
                snr_w: g("snr_w")?,
                snr_b: g("snr_b")?,
            },
            FusionMode::Sum => FusionVars::Sum {
                lin_w: g("lin_w")?,
                lin_b: g("lin_b")?,
            },
            FusionMode::Concat => FusionVars::Concat {
                lin_w: g("lin_w")?,
                lin_b: g("lin_b")?,
                mix_w: g("mix_w")?,
                mix_b: g("mix_b")?,
            },
            FusionMode::None => FusionVars::None,
        })
    }
}

/// Channel kernel `delta + (RESIDUAL_MASS / (h w)) tanh(residual)`, with the
/// delta at the origin so its spectrum is identically one.
pub fn kernel_from_residual(tape: &mut Tape, residual: Var) -> Result<Var> {
    let s = tape.shape(residual).to_vec();
    if s.len() != 3 {
        return Err(Error::shape("kernel_from_residual", format!("{s:?}")));
    }
    let hw = s[1] * s[2];
    let delta = tape.constant(Array::from_fn(&s, |i| if i % hw == 0 { 1.0 } else { 0.0 }))?;
    let t = tape.tanh(residual)?;
    let t = tape.scale(t, RESIDUAL_MASS / hw as f64)?;
    tape.add(delta, t)
}

/// Differentiable Wiener modulation of `f [C, H, W]` by `kernel [C, H, W]`
/// with SNR `snr [1]`.
pub fn wiener_modulate_diff(tape: &mut Tape, f: Var, kernel: Var, snr: Var) -> Result<Var> {
    if tape.shape(f) != tape.shape(kernel) || tape.shape(f).len() != 3 {
        return Err(Error::shape(
            "wiener_modulate",
            format!("feature {:?} vs kernel {:?}", tape.shape(f), tape.shape(kernel)),
        ));
    }
    if tape.shape(snr) != [1] {
        return Err(Error::shape("wiener_modulate", "snr must be a scalar"));
    }
    let fs = tape.fft2(f)?;
    let hs = tape.fft2(kernel)?;
    // |H|^2 + 1/snr
    let p2 = tape.pow2(hs.re)?;
    let q2 = tape.pow2(hs.im)?;
    let mag = tape.add(p2, q2)?;
    let one = tape.scalar(1.0)?;
    let inv_snr = tape.div(one, snr)?;
    let den = tape.add(mag, inv_snr)?;
    // F conj(H) = (a p + b q) + i (b p - a q)
    let ap = tape.mul(fs.re, hs.re)?;
    let bq = tape.mul(fs.im, hs.im)?;
    let bp = tape.mul(fs.im, hs.re)?;
    let aq = tape.mul(fs.re, hs.im)?;
    let nr = tape.add(ap, bq)?;
    let ni = tape.sub(bp, aq)?;
    let re = tape.div(nr, den)?;
    let im = tape.div(ni, den)?;
    let out = tape.ifft2(Spectrum { re, im })?;
    let residue = tape.value(out.im).max_abs();
    let scale = tape.value(out.re).max_abs().max(1.0);
    if residue > IMAG_RESIDUE_TOL * scale {
        return Err(Error::Numerical(format!(
            "wiener output has imaginary residue {residue:e}"
        )));
    }
    Ok(out.re)
}

/// Plain-value Wiener modulation.
pub fn wiener_modulate(f: &Array, kernel: &Array, snr: f64) -> Result<Array> {
    if !(SNR_FLOOR..=SNR_CAP).contains(&snr) {
        return Err(Error::Config(format!("snr {snr} outside [{SNR_FLOOR}, {SNR_CAP}]")));
    }
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone())?;
    let kv = tape.constant(kernel.clone())?;
    let sv = tape.scalar(snr)?;
    let out = wiener_modulate_diff(&mut tape, fv, kv, sv)?;
    Ok(tape.value(out).clone())
}

/// `[C, 1, 1]` projection `W feat + b` of a `[d_vib]` feature.
fn vib_plane(tape: &mut Tape, feat: Var, w: Var, b: Var) -> Result<Var> {
    let d = tape.shape(feat)[0];
    let col = tape.reshape(feat, &[d, 1])?;
    let y = tape.matmul(w, col)?;
    let c = tape.shape(y)[0];
    let y = tape.reshape(y, &[c, 1, 1])?;
    tape.add(y, b)
}

/// Applies one fusion level to feature map `f [C, H, W]`.
pub fn fuse(tape: &mut Tape, f: Var, vib_feat: Option<Var>, vars: &FusionVars) -> Result<Var> {
    let need = || vib_feat.ok_or_else(|| Error::Config("fusion needs a vibration feature".into()));
    match *vars {
        FusionVars::None => Ok(f),
        FusionVars::Fh { kernel, snr_w, snr_b } => {
            let snr = snr_head(tape, need()?, snr_w, snr_b)?;
            let k = kernel_from_residual(tape, kernel)?;
            wiener_modulate_diff(tape, f, k, snr)
        }
        FusionVars::Sum { lin_w, lin_b } => {
            let plane = vib_plane(tape, need()?, lin_w, lin_b)?;
            tape.add(f, plane)
        }
        FusionVars::Concat {
            lin_w,
            lin_b,
            mix_w,
            mix_b,
        } => {
            let plane = vib_plane(tape, need()?, lin_w, lin_b)?;
            let s = tape.shape(f).to_vec();
            let ones = tape.constant(Array::full(&[1, s[1], s[2]], 1.0))?;
            let plane = tape.mul(plane, ones)?;
            let cat = tape.concat(&[f, plane], 0)?;
            let y = tape.conv2d(cat, mix_w, 1, Padding::Same)?;
            tape.add(y, mix_b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_round_trips_through_strings() {
        for m in FusionMode::ALL {
            assert_eq!(m.as_str().parse::<FusionMode>().unwrap(), m);
        }
        assert!("gated".parse::<FusionMode>().is_err());
    }

    #[test]
    fn param_counts_match_specs() {
        for m in FusionMode::ALL {
            let n: usize = level_param_specs(m, 0, 8, 16, 16, 64).iter().map(ParamSpec::len).sum();
            assert_eq!(n, level_param_count(m, 8, 16, 16, 64));
        }
    }
}
