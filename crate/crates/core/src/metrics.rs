//! Depth and ego-motion metrics, and grouping of per-snippet results into
//! report tables.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffnum::Array;
use crate::geometry::Pose6;
use crate::{Error, Result};

/// Ratio threshold of the depth accuracy metric.
pub const ACC_THRESHOLD: f64 = 1.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPolicy {
    /// Rescale predicted depth by `median(gt) / median(pred)` first.
    pub median_scaling: bool,
    /// Ground-truth motion components smaller than this in magnitude are
    /// left out of the relative errors.
    pub gt_floor: f64,
}

impl Default for EvalPolicy {
    fn default() -> Self {
        Self {
            median_scaling: true,
            gt_floor: 1e-6,
        }
    }
}

impl EvalPolicy {
    /// Policy for comparisons against exact values: no rescaling.
    pub fn unscaled() -> Self {
        Self {
            median_scaling: false,
            ..Self::default()
        }
    }
}

impl fmt::Display for EvalPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "median scaling {}, relative-error floor {:e}",
            if self.median_scaling { "on" } else { "off" },
            self.gt_floor
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_diff: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub log_rmse: f64,
    /// Percentage of pixels with `max(d/p, p/d) < 1.25`.
    pub acc: f64,
}

impl DepthMetrics {
    pub const NAMES: [&'static str; 6] = ["abs_diff", "abs_rel", "sq_rel", "rmse", "log_rmse", "acc"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.abs_diff, self.abs_rel, self.sq_rel, self.rmse, self.log_rmse, self.acc]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            abs_diff: a[0],
            abs_rel: a[1],
            sq_rel: a[2],
            rmse: a[3],
            log_rmse: a[4],
            acc: a[5],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionMetrics {
    pub ate: f64,
    pub abs_diff_t: f64,
    pub abs_rel_t: f64,
    pub are: f64,
    pub abs_diff_r: f64,
    pub abs_rel_r: f64,
}

impl MotionMetrics {
    pub const NAMES: [&'static str; 6] = ["ate", "abs_diff_t", "abs_rel_t", "are", "abs_diff_r", "abs_rel_r"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.ate, self.abs_diff_t, self.abs_rel_t, self.are, self.abs_diff_r, self.abs_rel_r]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            ate: a[0],
            abs_diff_t: a[1],
            abs_rel_t: a[2],
            are: a[3],
            abs_diff_r: a[4],
            abs_rel_r: a[5],
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Depth errors over the pixels where `mask > 0.5` (all pixels without a
/// mask). `gt`, `pred` and `mask` must have the same number of elements.
pub fn depth_metrics(gt: &Array, pred: &Array, mask: Option<&Array>, policy: &EvalPolicy) -> Result<DepthMetrics> {
    if gt.len() != pred.len() || mask.is_some_and(|m| m.len() != gt.len()) {
        return Err(Error::shape(
            "depth_metrics",
            format!("gt {:?}, pred {:?}, mask {:?}", gt.shape(), pred.shape(), mask.map(|m| m.shape())),
        ));
    }
    let idx: Vec<usize> = (0..gt.len()).filter(|&i| mask.is_none_or(|m| m.data()[i] > 0.5)).collect();
    if idx.is_empty() {
        return Err(Error::Evaluation("depth metrics over an empty mask".into()));
    }
    let bad: Vec<usize> = idx
        .iter()
        .copied()
        .filter(|&i| !(gt.data()[i] > 0.0 && pred.data()[i] > 0.0 && gt.data()[i].is_finite() && pred.data()[i].is_finite()))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Domain {
            op: "depth_metrics",
            count: bad.len(),
            positions: bad.into_iter().take(8).collect(),
        });
    }
    let g: Vec<f64> = idx.iter().map(|&i| gt.data()[i]).collect();
    let mut p: Vec<f64> = idx.iter().map(|&i| pred.data()[i]).collect();
    if policy.median_scaling {
        let s = median(g.clone()) / median(p.clone());
        p.iter_mut().for_each(|v| *v *= s);
    }
    let n = g.len() as f64;
    let mut acc = [0.0; 6];
    for (&d, &e) in g.iter().zip(&p) {
        let diff = d - e;
        acc[0] += diff.abs();
        acc[1] += diff.abs() / d;
        acc[2] += diff * diff / d;
        acc[3] += diff * diff;
        acc[4] += (d.ln() - e.ln()).powi(2);
        if (d / e).max(e / d) < ACC_THRESHOLD {
            acc[5] += 1.0;
        }
    }
    Ok(DepthMetrics {
        abs_diff: acc[0] / n,
        abs_rel: acc[1] / n,
        sq_rel: acc[2] / n,
        rmse: (acc[3] / n).sqrt(),
        log_rmse: (acc[4] / n).sqrt(),
        acc: 100.0 * acc[5] / n,
    })
}

/// Componentwise differences `[dx, dy, dz, droll, dpitch, dyaw]` between
/// consecutive poses.
pub fn pose_steps(traj: &[Pose6]) -> Vec<[f64; 6]> {
    traj.windows(2)
        .map(|w| {
            let (a, b) = (w[0].to_array(), w[1].to_array());
            std::array::from_fn(|c| b[c] - a[c])
        })
        .collect()
}

/// Motion errors between ground-truth and predicted per-step motions, each
/// `[dx, dy, dz, droll, dpitch, dyaw]`.
pub fn step_metrics(gt: &[[f64; 6]], pred: &[[f64; 6]], policy: &EvalPolicy) -> Result<MotionMetrics> {
    if gt.len() != pred.len() {
        return Err(Error::Evaluation(format!("{} ground-truth steps vs {} predicted", gt.len(), pred.len())));
    }
    if gt.is_empty() {
        return Err(Error::Evaluation("motion metrics need at least one step".into()));
    }
    let mut acc = [0.0; 6];
    for (g, p) in gt.iter().zip(pred) {
        for (half, base) in [(0, 0), (1, 3)] {
            let e: [f64; 3] = std::array::from_fn(|c| p[base + c] - g[base + c]);
            acc[3 * half] += (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            acc[3 * half + 1] += e.iter().map(|v| v.abs()).sum::<f64>();
            acc[3 * half + 2] += (0..3)
                .filter(|&c| g[base + c].abs() >= policy.gt_floor)
                .map(|c| e[c].abs() / g[base + c].abs().max(policy.gt_floor))
                .sum::<f64>();
        }
    }
    let n = gt.len() as f64;
    Ok(MotionMetrics::from_array(acc.map(|v| v / n)))
}

/// Per-step motion errors of a predicted trajectory against ground truth.
pub fn egomotion_metrics(gt: &[Pose6], pred: &[Pose6], policy: &EvalPolicy) -> Result<MotionMetrics> {
    if gt.len() != pred.len() {
        return Err(Error::Evaluation(format!("trajectories of {} and {} frames", gt.len(), pred.len())));
    }
    if gt.len() < 2 {
        return Err(Error::Evaluation("motion metrics need at least two frames".into()));
    }
    step_metrics(&pose_steps(gt), &pose_steps(pred), policy)
}

/// Experimental condition a snippet result belongs to. Unused fields stay
/// `None`; ordering is field by field.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub model: String,
    pub level: Option<u8>,
    pub profile: Option<String>,
    pub corruption: Option<String>,
    pub severity: Option<u8>,
    pub sequence: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupField {
    Model,
    Level,
    Profile,
    Corruption,
    Severity,
    Sequence,
}

impl Condition {
    /// Copy keeping only `fields`.
    pub fn project(&self, fields: &[GroupField]) -> Condition {
        let keep = |f| fields.contains(&f);
        Condition {
            model: if keep(GroupField::Model) { self.model.clone() } else { String::new() },
            level: self.level.filter(|_| keep(GroupField::Level)),
            profile: self.profile.clone().filter(|_| keep(GroupField::Profile)),
            corruption: self.corruption.clone().filter(|_| keep(GroupField::Corruption)),
            severity: self.severity.filter(|_| keep(GroupField::Severity)),
            sequence: self.sequence.clone().filter(|_| keep(GroupField::Sequence)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnippetRecord {
    pub condition: Condition,
    pub depth: DepthMetrics,
    pub motion: MotionMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: Condition,
    pub count: usize,
    pub depth: DepthMetrics,
    pub motion: MotionMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub policy: EvalPolicy,
    pub rows: Vec<ReportRow>,
}

/// Means per group of the conditions projected onto `grouping`, rows in
/// condition order. Sums run in input order, so the result is deterministic.
pub fn aggregate_report(records: &[SnippetRecord], grouping: &[GroupField], policy: &EvalPolicy) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::Evaluation("cannot aggregate an empty set of results".into()));
    }
    let mut groups: BTreeMap<Condition, (usize, [f64; 6], [f64; 6])> = BTreeMap::new();
    for r in records {
        let g = groups.entry(r.condition.project(grouping)).or_insert((0, [0.0; 6], [0.0; 6]));
        g.0 += 1;
        for (a, v) in g.1.iter_mut().zip(r.depth.to_array()) {
            *a += v;
        }
        for (a, v) in g.2.iter_mut().zip(r.motion.to_array()) {
            *a += v;
        }
    }
    let rows = groups
        .into_iter()
        .map(|(condition, (count, d, m))| {
            let n = count as f64;
            ReportRow {
                condition,
                count,
                depth: DepthMetrics::from_array(d.map(|v| v / n)),
                motion: MotionMetrics::from_array(m.map(|v| v / n)),
            }
        })
        .collect();
    Ok(MetricReport { policy: *policy, rows })
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per condition; the last two columns restate the policy.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = vec!["model", "level", "profile", "corruption", "severity", "sequence", "count"];
        header.extend(DepthMetrics::NAMES);
        header.extend(MotionMetrics::NAMES);
        header.extend(["median_scaling", "gt_floor"]);
        w.write_record(&header)?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.rows {
            let c = &r.condition;
            let mut row = vec![
                c.model.clone(),
                opt(c.level.map(|v| v.to_string())),
                opt(c.profile.clone()),
                opt(c.corruption.clone()),
                opt(c.severity.map(|v| v.to_string())),
                opt(c.sequence.clone()),
                r.count.to_string(),
            ];
            row.extend(r.depth.to_array().iter().map(|v| v.to_string()));
            row.extend(r.motion.to_array().iter().map(|v| v.to_string()));
            row.push(if self.policy.median_scaling { "on".into() } else { "off".into() });
            row.push(self.policy.gt_floor.to_string());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Evaluation(format!("csv buffer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Evaluation(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn projection_drops_fields() {
        let c = Condition {
            model: "fh".into(),
            level: Some(3),
            corruption: Some("contrast".into()),
            severity: Some(2),
            ..Condition::default()
        };
        let p = c.project(&[GroupField::Corruption]);
        assert_eq!(p.corruption.as_deref(), Some("contrast"));
        assert_eq!((p.model.as_str(), p.level, p.severity), ("", None, None));
    }
}
