//! IMU-like vibration signals derived from a pose track.

use super::spline::CubicSpline;
use crate::diffnum::Array;
use crate::geometry::Pose6;
use crate::vibration::{CHANNELS, RATE, WINDOW};
use crate::{Error, Result};

/// Raw six-channel signal sampled at `RATE` Hz: channels 0-2 are second
/// differences of position, 3-5 first differences of the Euler angles.
#[derive(Clone, Debug, PartialEq)]
pub struct VibrationTrack {
    /// Time of sample 0 in seconds.
    pub start_time: f64,
    /// `[CHANNELS, N]`.
    pub samples: Array,
}

impl VibrationTrack {
    pub fn len(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, j: usize) -> f64 {
        self.start_time + j as f64 / RATE
    }

    /// Index of the first sample at or after `t`.
    fn first_at_or_after(&self, t: f64) -> i64 {
        ((t - self.start_time) * RATE - 1e-9).ceil() as i64
    }

    /// The `WINDOW` raw samples with timestamps in `[center - 0.5, center + 0.5)`,
    /// or `None` when the track does not cover that span.
    pub fn window(&self, center: f64) -> Option<Array> {
        let half = WINDOW as f64 / (2.0 * RATE);
        let start = self.first_at_or_after(center - half);
        let n = self.len() as i64;
        if start < 0 || start + WINDOW as i64 > n {
            return None;
        }
        let start = start as usize;
        let data = self.samples.data();
        Some(Array::from_fn(&[CHANNELS, WINDOW], |i| {
            let (c, j) = (i / WINDOW, i % WINDOW);
            data[c * n as usize + start + j]
        }))
    }

    /// Per-channel maximum absolute value.
    pub fn max_abs(&self) -> [f64; CHANNELS] {
        let n = self.len();
        let mut m = [0.0; CHANNELS];
        for (c, v) in m.iter_mut().enumerate() {
            *v = self.samples.data()[c * n..(c + 1) * n].iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        }
        m
    }

    /// Mean squared raw sample value over all channels.
    pub fn energy(&self) -> f64 {
        let d = self.samples.data();
        d.iter().map(|v| v * v).sum::<f64>() / d.len().max(1) as f64
    }
}

/// Upsamples the poses at `times` to `RATE` Hz with natural cubic splines
/// and takes finite differences on that grid.
///
/// Sample `j` of the output sits at `times[0] + (j + 1) / RATE` and holds
/// `p(j+1) - 2 p(j) + p(j-1)` for positions and `a(j+1) - a(j)` for angles,
/// indices on the upsampled grid.
pub fn synthesize_vibration(times: &[f64], poses: &[Pose6]) -> Result<VibrationTrack> {
    if times.len() != poses.len() || times.len() < 2 {
        return Err(Error::Config(format!(
            "need matching times and poses, got {} / {}",
            times.len(),
            poses.len()
        )));
    }
    let duration = times[times.len() - 1] - times[0];
    if duration < 1.0 {
        return Err(Error::Config(format!("trajectory lasts {duration:.3} s, at least 1 s is needed")));
    }
    let splines = (0..6)
        .map(|c| CubicSpline::new(times.to_vec(), poses.iter().map(|p| p.to_array()[c]).collect()))
        .collect::<Result<Vec<_>>>()?;
    let m = (duration * RATE + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..m).map(|j| times[0] + j as f64 / RATE).collect();
    let n = m - 2;
    let mut out = vec![0.0; CHANNELS * n];
    for (c, s) in splines.iter().enumerate() {
        let v: Vec<f64> = grid.iter().map(|&t| s.eval(t)).collect();
        for j in 0..n {
            out[c * n + j] = if c < 3 {
                v[j + 2] - 2.0 * v[j + 1] + v[j]
            } else {
                v[j + 2] - v[j + 1]
            };
        }
    }
    Ok(VibrationTrack {
        start_time: grid[1],
        samples: Array::new(&[CHANNELS, n], out)?,
    })
}
