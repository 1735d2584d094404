//! Compact depth encoder-decoder and pose regressor.
//!
//! The depth network is a stride-2 residual encoder whose every block output
//! passes through the configured fusion level, followed by an
//! upsample-and-concatenate decoder ending in a sigmoid disparity head. The
//! pose network regresses `[tx, ty, tz, roll, pitch, yaw]` from two stacked
//! frames.

pub mod checkpoint;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::diffnum::{Array, Padding, Tape, Var};
use crate::fusion::{fuse, level_param_count, level_param_specs, FusionMode, FusionVars};
use crate::geometry::{Pose6, D_MAX, D_MIN};
use crate::vibration::{mlstm_forward, MlstmConfig, MlstmVars};
use crate::{Error, Result};
use params::{Bound, Init, ParamSpec, ParamStore};

/// Scale applied to the rotation outputs of the pose regressor.
pub const ROTATION_SCALE: f64 = 0.01;

/// Initial disparity-head bias; `sigmoid(-2.3)` maps to roughly one scene
/// unit of depth with the default range.
pub const DISP_BIAS_INIT: f64 = -2.3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthNetConfig {
    pub height: usize,
    pub width: usize,
    /// Output channels of each encoder level.
    pub channels: Vec<usize>,
    pub fusion: FusionMode,
}

impl Default for DepthNetConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: vec![8, 16, 32, 64],
            fusion: FusionMode::Fh,
        }
    }
}

impl DepthNetConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    /// Spatial size `(h, w)` after encoder level `l`.
    pub fn level_size(&self, l: usize) -> (usize, usize) {
        (self.height >> (l + 1), self.width >> (l + 1))
    }

    fn decoder_out(&self, l: usize) -> usize {
        self.channels[l.max(1) - 1]
    }

    fn decoder_in(&self, l: usize) -> usize {
        let up = if l + 1 == self.levels() {
            self.channels[l]
        } else {
            self.decoder_out(l + 1)
        };
        let skip = if l > 0 { self.channels[l - 1] } else { 3 };
        up + skip
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.levels();
        if l == 0 || self.channels.contains(&0) {
            return Err(Error::Config("depth net needs at least one non-empty level".into()));
        }
        let div = 1usize << l;
        if !self.height.is_power_of_two() || !self.width.is_power_of_two() || self.height < div || self.width < div {
            return Err(Error::Config(format!(
                "input {}x{} must be powers of two divisible by 2^{l}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseNetConfig {
    /// Output channels of the stride-2 convolution stack.
    pub channels: Vec<usize>,
}

impl Default for PoseNetConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: DepthNetConfig,
    pub pose: PoseNetConfig,
    pub vibration: MlstmConfig,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: DepthNetConfig::default(),
            pose: PoseNetConfig::default(),
            vibration: MlstmConfig::default(),
            d_min: D_MIN,
            d_max: D_MAX,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.depth.validate()?;
        self.vibration.validate()?;
        if self.pose.channels.is_empty() || self.pose.channels.contains(&0) {
            return Err(Error::Config("pose net needs at least one non-empty layer".into()));
        }
        if !(0.0 < self.d_min && self.d_min < self.d_max) {
            return Err(Error::Config(format!("need 0 < d_min < d_max, got {} / {}", self.d_min, self.d_max)));
        }
        Ok(())
    }

    /// Every parameter of the model, in declaration order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let d = &self.depth;
        let mut specs = Vec::new();
        let conv = |specs: &mut Vec<ParamSpec>, name: String, k: usize, c: usize, size: usize| {
            specs.push(ParamSpec::new(format!("{name}.w"), &[k, c, size, size], Init::HeNormal { fan_in: c * size * size }));
            specs.push(ParamSpec::new(format!("{name}.b"), &[k, 1, 1], Init::Constant(0.0)));
        };
        let mut c_in = 3;
        for (l, &c) in d.channels.iter().enumerate() {
            conv(&mut specs, format!("depth.enc.{l}.down"), c, c_in, 3);
            conv(&mut specs, format!("depth.enc.{l}.res"), c, c, 3);
            let (h, w) = d.level_size(l);
            specs.extend(level_param_specs(d.fusion, l, c, h, w, self.vibration.d_vib));
            c_in = c;
        }
        for l in (0..d.levels()).rev() {
            conv(&mut specs, format!("depth.dec.{l}"), d.decoder_out(l), d.decoder_in(l), 3);
        }
        specs.push(ParamSpec::new("depth.head.w", &[1, d.channels[0], 3, 3], Init::HeNormal { fan_in: 9 * d.channels[0] }));
        specs.push(ParamSpec::new("depth.head.b", &[1, 1, 1], Init::Constant(DISP_BIAS_INIT)));

        let mut c_in = 6;
        for (i, &c) in self.pose.channels.iter().enumerate() {
            conv(&mut specs, format!("pose.conv.{i}"), c, c_in, 3);
            c_in = c;
        }
        specs.push(ParamSpec::new("pose.out.w", &[6, c_in], Init::Normal(0.01)));
        specs.push(ParamSpec::new("pose.out.b", &[6, 1], Init::Constant(0.0)));

        if d.fusion.uses_vibration() {
            specs.extend(self.vibration.param_specs("vib"));
        }
        specs
    }

    /// Closed-form parameter count, independent of [`Self::param_specs`].
    pub fn analytic_param_count(&self) -> usize {
        let d = &self.depth;
        let conv = |k: usize, c: usize| k * c * 9 + k;
        let mut n = 0;
        let mut c_in = 3;
        for (l, &c) in d.channels.iter().enumerate() {
            let (h, w) = d.level_size(l);
            n += conv(c, c_in) + conv(c, c) + level_param_count(d.fusion, c, h, w, self.vibration.d_vib);
            c_in = c;
        }
        for l in 0..d.levels() {
            n += conv(d.decoder_out(l), d.decoder_in(l));
        }
        n += conv(1, d.channels[0]);
        let mut c_in = 6;
        for &c in &self.pose.channels {
            n += conv(c, c_in);
            c_in = c;
        }
        n += 6 * c_in + 6;
        if d.fusion.uses_vibration() {
            n += self.vibration.param_count();
        }
        n
    }
}

/// Configuration plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config.param_specs(), seed)?;
        let model = Self { config, params };
        if model.params.count() != model.config.analytic_param_count() {
            return Err(Error::Config(format!(
                "parameter count {} differs from analytic count {}",
                model.params.count(),
                model.config.analytic_param_count()
            )));
        }
        Ok(model)
    }

    /// Disparity `[1, H, W]` of one frame, computed without gradients.
    pub fn predict_disparity(&self, frame: &Array, window: Option<&Array>) -> Result<Array> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false)?;
        let f = tape.constant(frame.clone())?;
        let feat = vib_feature(&mut tape, &bound, &self.config, window)?;
        let disp = depth_net_forward(&mut tape, f, feat, &bound, &self.config.depth)?;
        Ok(tape.value(disp).clone())
    }

    /// Depth `[1, H, W]` of one frame.
    pub fn predict_depth(&self, frame: &Array, window: Option<&Array>) -> Result<Array> {
        let disp = self.predict_disparity(frame, window)?;
        Ok(disparity_to_depth(&disp, self.config.d_min, self.config.d_max))
    }

    /// Motion taking target-camera points into the source camera.
    pub fn predict_pose(&self, target: &Array, source: &Array) -> Result<Pose6> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false)?;
        let a = tape.constant(target.clone())?;
        let b = tape.constant(source.clone())?;
        let p = pose_net_forward(&mut tape, a, b, &bound, &self.config.pose)?;
        let v = tape.value(p).data();
        Ok(Pose6::new(v[0], v[1], v[2], v[3], v[4], v[5]))
    }
}

/// Vibration feature for the configured fusion mode, `None` when unused.
pub fn vib_feature(tape: &mut Tape, bound: &Bound, config: &ModelConfig, window: Option<&Array>) -> Result<Option<Var>> {
    if !config.depth.fusion.uses_vibration() {
        return Ok(None);
    }
    let w = window.ok_or_else(|| Error::Config("fusion mode needs a vibration window".into()))?;
    let wv = tape.constant(w.clone())?;
    let vars = MlstmVars::bind(bound, "vib")?;
    Ok(Some(mlstm_forward(tape, wv, &vars)?))
}

fn conv_bias(tape: &mut Tape, x: Var, bound: &Bound, name: &str, stride: usize) -> Result<Var> {
    let w = bound.get(&format!("{name}.w"))?;
    let b = bound.get(&format!("{name}.b"))?;
    let y = tape.conv2d(x, w, stride, Padding::Same)?;
    tape.add(y, b)
}

/// Disparity `[1, H, W]` in `(0, 1)` for `frame [3, H, W]`.
pub fn depth_net_forward(tape: &mut Tape, frame: Var, vib_feat: Option<Var>, bound: &Bound, cfg: &DepthNetConfig) -> Result<Var> {
    if tape.shape(frame) != [3, cfg.height, cfg.width] {
        return Err(Error::shape(
            "depth_net_forward",
            format!("frame {:?} vs config {}x{}", tape.shape(frame), cfg.height, cfg.width),
        ));
    }
    let mut skips = Vec::with_capacity(cfg.levels());
    let mut x = frame;
    for l in 0..cfg.levels() {
        let a = conv_bias(tape, x, bound, &format!("depth.enc.{l}.down"), 2)?;
        let a = tape.relu(a)?;
        let r = conv_bias(tape, a, bound, &format!("depth.enc.{l}.res"), 1)?;
        let s = tape.add(a, r)?;
        let s = tape.relu(s)?;
        let vars = FusionVars::bind(bound, cfg.fusion, l)?;
        x = fuse(tape, s, vib_feat, &vars)?;
        skips.push(x);
    }
    for l in (0..cfg.levels()).rev() {
        let up = tape.upsample2(x)?;
        let skip = if l > 0 { skips[l - 1] } else { frame };
        let cat = tape.concat(&[up, skip], 0)?;
        let y = conv_bias(tape, cat, bound, &format!("depth.dec.{l}"), 1)?;
        x = tape.relu(y)?;
    }
    let y = conv_bias(tape, x, bound, "depth.head", 1)?;
    tape.sigmoid(y)
}

/// `[6]` motion from `target` to `source`, both `[3, H, W]`.
pub fn pose_net_forward(tape: &mut Tape, target: Var, source: Var, bound: &Bound, cfg: &PoseNetConfig) -> Result<Var> {
    if tape.shape(target) != tape.shape(source) {
        return Err(Error::shape(
            "pose_net_forward",
            format!("{:?} vs {:?}", tape.shape(target), tape.shape(source)),
        ));
    }
    let mut x = tape.concat(&[target, source], 0)?;
    for i in 0..cfg.channels.len() {
        let y = conv_bias(tape, x, bound, &format!("pose.conv.{i}"), 2)?;
        x = tape.relu(y)?;
    }
    let s = tape.shape(x).to_vec();
    let x = tape.reshape(x, &[s[0], s[1] * s[2]])?;
    let g = tape.mean_axis(x, 1)?;
    let g = tape.reshape(g, &[s[0], 1])?;
    let y = tape.matmul(bound.get("pose.out.w")?, g)?;
    let y = tape.add(y, bound.get("pose.out.b")?)?;
    let y = tape.reshape(y, &[6])?;
    let scale = tape.constant(Array::new(&[6], vec![1.0, 1.0, 1.0, ROTATION_SCALE, ROTATION_SCALE, ROTATION_SCALE])?)?;
    tape.mul(y, scale)
}

/// `1 / (disp (1/d_min - 1/d_max) + 1/d_max)`.
pub fn disparity_to_depth(disp: &Array, d_min: f64, d_max: f64) -> Array {
    let (lo, hi) = (1.0 / d_max, 1.0 / d_min);
    disp.map(|d| 1.0 / (d * (hi - lo) + lo))
}

/// Tape version of [`disparity_to_depth`].
pub fn disparity_to_depth_diff(tape: &mut Tape, disp: Var, d_min: f64, d_max: f64) -> Result<Var> {
    let (lo, hi) = (1.0 / d_max, 1.0 / d_min);
    let s = tape.scale(disp, hi - lo)?;
    let s = tape.offset(s, lo)?;
    let one = tape.scalar(1.0)?;
    tape.div(one, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disparity_formula() {
        let d = disparity_to_depth(&Array::new(&[3], vec![0.5, 1.0, 0.0]).unwrap(), 0.1, 10.0);
        assert!((d.data()[0] - 1.0 / (0.5 * 9.9 + 0.1)).abs() < 1e-15);
        assert!((d.data()[1] - 0.1).abs() < 1e-15);
        assert!((d.data()[2] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_count_matches_for_all_modes() {
        for fusion in FusionMode::ALL {
            let mut c = ModelConfig::default();
            c.depth.fusion = fusion;
            let n: usize = c.param_specs().iter().map(ParamSpec::len).sum();
            assert_eq!(n, c.analytic_param_count(), "{fusion}");
        }
    }

    #[test]
    fn rejects_non_divisible_size() {
        let mut c = ModelConfig::default();
        c.depth.height = 8;
        c.depth.channels = vec![2, 2, 2, 2];
        assert!(c.validate().is_err());
    }
}
