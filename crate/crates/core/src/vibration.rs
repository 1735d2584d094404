//! Vibration windows, the MLSTM encoder and the SNR head.
//!
//! A window holds 6 channels (3 accelerometer-like, 3 gyro-like) by 40
//! samples at 40 Hz. The encoder runs an LSTM over time in parallel with a
//! squeeze-excite gate over channels and mixes both into one feature
//! vector, from which each fusion level reads a positive SNR scalar.

use serde::{Deserialize, Serialize};

use crate::diffnum::{Array, Tape, Var};
use crate::networks::params::{Bound, Init, ParamSpec};
use crate::{Error, Result};

pub const CHANNELS: usize = 6;
pub const WINDOW: usize = 40;
/// Sample rate in Hz.
pub const RATE: f64 = 40.0;
pub const SNR_FLOOR: f64 = 1e-3;
pub const SNR_CAP: f64 = 1e6;

/// Normalised `[6, 40]` window.
#[derive(Clone, Debug, PartialEq)]
pub struct VibrationWindow {
    samples: Array,
    center_time: f64,
}

impl VibrationWindow {
    pub fn samples(&self) -> &Array {
        &self.samples
    }

    pub fn center_time(&self) -> f64 {
        self.center_time
    }
}

/// Divides each channel by its dataset-level max-abs and clips to `[-1, 1]`.
/// Channels with zero max-abs map to zero.
pub fn normalize_window(raw: &Array, max_abs: &[f64; CHANNELS], center_time: f64) -> Result<VibrationWindow> {
    if raw.shape() != [CHANNELS, WINDOW] {
        return Err(Error::shape(
            "normalize_window",
            format!("expected [{CHANNELS}, {WINDOW}], got {:?}", raw.shape()),
        ));
    }
    if !raw.all_finite() {
        return Err(Error::NonFinite { op: "normalize_window" });
    }
    let samples = Array::from_fn(raw.shape(), |i| {
        let m = max_abs[i / WINDOW];
        if m > 0.0 {
            (raw.data()[i] / m).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    });
    Ok(VibrationWindow { samples, center_time })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlstmConfig {
    pub hidden: usize,
    pub d_vib: usize,
    /// Squeeze-excite reduction ratio; must divide 6.
    pub reduction: usize,
}

impl Default for MlstmConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            d_vib: 64,
            reduction: 2,
        }
    }
}

impl MlstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.d_vib == 0 || self.reduction == 0 || CHANNELS % self.reduction != 0 {
            return Err(Error::Config(format!("invalid vibration encoder config {self:?}")));
        }
        Ok(())
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let (h, r) = (self.hidden, CHANNELS / self.reduction);
        let std_lstm = 1.0 / (h as f64).sqrt();
        vec![
            ParamSpec::new(format!("{prefix}.lstm.w_ih"), &[4 * h, CHANNELS], Init::Normal(std_lstm)),
            ParamSpec::new(format!("{prefix}.lstm.w_hh"), &[4 * h, h], Init::Normal(std_lstm)),
            ParamSpec::new(format!("{prefix}.lstm.b"), &[4 * h, 1], Init::Constant(0.0)),
            ParamSpec::new(format!("{prefix}.se.w1"), &[r, CHANNELS], Init::HeNormal { fan_in: CHANNELS }),
            ParamSpec::new(format!("{prefix}.se.w2"), &[CHANNELS, r], Init::HeNormal { fan_in: r }),
            ParamSpec::new(
                format!("{prefix}.out.w"),
                &[self.d_vib, h + CHANNELS],
                Init::HeNormal { fan_in: h + CHANNELS },
            ),
            ParamSpec::new(format!("{prefix}.out.b"), &[self.d_vib, 1], Init::Constant(0.0)),
        ]
    }

    /// Scalar count of [`Self::param_specs`].
    pub fn param_count(&self) -> usize {
        let (h, r) = (self.hidden, CHANNELS / self.reduction);
        4 * h * CHANNELS + 4 * h * h + 4 * h + 2 * r * CHANNELS + self.d_vib * (h + CHANNELS) + self.d_vib
    }
}

/// LSTM weights: gates stacked as `[input, forget, cell, output]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    /// `[4h, 6]`
    pub w_ih: Var,
    /// `[4h, h]`
    pub w_hh: Var,
    /// `[4h, 1]`
    pub b: Var,
}

/// Bias-free squeeze-excite weights.
#[derive(Clone, Copy, Debug)]
pub struct SeVars {
    /// `[6/r, 6]`
    pub w1: Var,
    /// `[6, 6/r]`
    pub w2: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct MlstmVars {
    pub lstm: LstmVars,
    pub se: SeVars,
    /// `[d_vib, h + 6]`
    pub w_out: Var,
    /// `[d_vib, 1]`
    pub b_out: Var,
}

impl MlstmVars {
    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        let g = |s: &str| bound.get(&format!("{prefix}.{s}"));
        Ok(Self {
            lstm: LstmVars {
                w_ih: g("lstm.w_ih")?,
                w_hh: g("lstm.w_hh")?,
                b: g("lstm.b")?,
            },
            se: SeVars {
                w1: g("se.w1")?,
                w2: g("se.w2")?,
            },
            w_out: g("out.w")?,
            b_out: g("out.b")?,
        })
    }
}

/// Hidden states of an LSTM run.
#[derive(Clone, Debug)]
pub struct LstmOutput {
    /// `[h, 1]` state after the last step.
    pub last: Var,
    /// `[h, 1]` state after every step.
    pub sequence: Vec<Var>,
}

/// Runs the LSTM over the time axis of `x [6, T]` from zero state.
pub fn lstm_forward(tape: &mut Tape, x: Var, p: &LstmVars) -> Result<LstmOutput> {
    let xs = tape.shape(x).to_vec();
    let (wi, wh, b) = (tape.shape(p.w_ih).to_vec(), tape.shape(p.w_hh).to_vec(), tape.shape(p.b).to_vec());
    if xs.len() != 2 || wi.len() != 2 || wi[1] != xs[0] || wi[0] % 4 != 0 {
        return Err(Error::shape("lstm_forward", format!("input {xs:?}, w_ih {wi:?}")));
    }
    let h = wi[0] / 4;
    if wh != [4 * h, h] || b != [4 * h, 1] {
        return Err(Error::shape("lstm_forward", format!("w_hh {wh:?}, b {b:?} for hidden {h}")));
    }
    let mut hs = tape.constant(Array::zeros(&[h, 1]))?;
    let mut cs = tape.constant(Array::zeros(&[h, 1]))?;
    let mut sequence = Vec::with_capacity(xs[1]);
    for t in 0..xs[1] {
        let xt = tape.slice(x, 1, t, 1)?;
        let a = tape.matmul(p.w_ih, xt)?;
        let r = tape.matmul(p.w_hh, hs)?;
        let z = tape.add(a, r)?;
        let z = tape.add(z, p.b)?;
        let i = tape.slice(z, 0, 0, h)?;
        let f = tape.slice(z, 0, h, h)?;
        let g = tape.slice(z, 0, 2 * h, h)?;
        let o = tape.slice(z, 0, 3 * h, h)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, cs)?;
        let ig = tape.mul(i, g)?;
        cs = tape.add(fc, ig)?;
        let tc = tape.tanh(cs)?;
        hs = tape.mul(o, tc)?;
        sequence.push(hs);
    }
    Ok(LstmOutput { last: hs, sequence })
}

/// Per-channel gate `sigmoid(W2 relu(W1 mean_t(x)))` applied to `x [C, T]`.
pub fn se_attention(tape: &mut Tape, x: Var, p: &SeVars) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let (w1, w2) = (tape.shape(p.w1).to_vec(), tape.shape(p.w2).to_vec());
    if xs.len() != 2 || w1.len() != 2 || w1[1] != xs[0] || w2 != [xs[0], w1[0]] {
        return Err(Error::shape("se_attention", format!("x {xs:?}, w1 {w1:?}, w2 {w2:?}")));
    }
    let s = tape.mean_axis(x, 1)?;
    let s = tape.reshape(s, &[xs[0], 1])?;
    let z = tape.matmul(p.w1, s)?;
    let z = tape.relu(z)?;
    let e = tape.matmul(p.w2, z)?;
    let e = tape.sigmoid(e)?;
    tape.mul(x, e)
}

/// Feature vector `[d_vib]` of a window `[6, 40]`: the LSTM's last state
/// concatenated with the time-mean of the gated channels, then one linear
/// layer.
pub fn mlstm_forward(tape: &mut Tape, window: Var, p: &MlstmVars) -> Result<Var> {
    let lstm = lstm_forward(tape, window, &p.lstm)?;
    let gated = se_attention(tape, window, &p.se)?;
    let pooled = tape.mean_axis(gated, 1)?;
    let pooled = tape.reshape(pooled, &[CHANNELS, 1])?;
    let joint = tape.concat(&[lstm.last, pooled], 0)?;
    let y = tape.matmul(p.w_out, joint)?;
    let y = tape.add(y, p.b_out)?;
    let d = tape.shape(y)[0];
    tape.reshape(y, &[d])
}

/// `clamp(relu(w . feat + b), SNR_FLOOR, SNR_CAP)` as a `[1]` variable.
pub fn snr_head(tape: &mut Tape, feat: Var, w: Var, b: Var) -> Result<Var> {
    if tape.shape(feat) != tape.shape(w) || tape.shape(b) != [1] {
        return Err(Error::shape(
            "snr_head",
            format!("feat {:?}, w {:?}, b {:?}", tape.shape(feat), tape.shape(w), tape.shape(b)),
        ));
    }
    let p = tape.mul(w, feat)?;
    let s = tape.sum(p)?;
    let s = tape.add(s, b)?;
    let s = tape.relu(s)?;
    tape.clamp(s, SNR_FLOOR, SNR_CAP)
}
