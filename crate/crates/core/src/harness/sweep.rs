//! Ablation grids: one training or evaluation per cell, combined into a
//! single report.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::metrics::{Condition, EvalPolicy, MetricReport};
use crate::networks::Model;
use crate::simdata::{generate_dataset, CorruptionSpec, Dataset, VibrationProfile};

use super::config::TrainConfig;
use super::eval::{evaluate, Predictor};
use super::train::{load_dataset, train_on};

pub const LEVELS: [u8; 5] = [1, 2, 3, 4, 5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Vibration levels 1 to 5, fused and vision-only.
    Intensity,
    /// Every fusion mode at the base level.
    FusionMode,
    /// Both vibration profiles with the base fusion mode.
    VibrationType,
    /// Every corruption kind and severity on one trained model.
    Robustness,
}

impl SweepKind {
    pub const ALL: [SweepKind; 4] = [
        SweepKind::Intensity,
        SweepKind::FusionMode,
        SweepKind::VibrationType,
        SweepKind::Robustness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Intensity => "intensity",
            SweepKind::FusionMode => "fusion_mode",
            SweepKind::VibrationType => "vibration_type",
            SweepKind::Robustness => "robustness",
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep kind `{s}`")))
    }
}

/// A cell that failed, with its error message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub condition: Condition,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub report: MetricReport,
    pub failures: Vec<CellFailure>,
}

impl SweepReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Training cells of a sweep: `(fusion, level, profile)`.
pub fn training_cells(kind: SweepKind, base: &TrainConfig) -> Vec<(FusionMode, u8, VibrationProfile)> {
    let (level, profile) = (base.data.level, base.data.profile);
    match kind {
        SweepKind::Intensity => LEVELS
            .iter()
            .flat_map(|&l| [FusionMode::Fh, FusionMode::None].map(|f| (f, l, profile)))
            .collect(),
        SweepKind::FusionMode => FusionMode::ALL.iter().map(|&f| (f, level, profile)).collect(),
        SweepKind::VibrationType => VibrationProfile::ALL.iter().map(|&p| (base.fusion, level, p)).collect(),
        SweepKind::Robustness => vec![(base.fusion, level, profile)],
    }
}

/// Runs the grid of `kind` from `base`.
///
/// Intensity and vibration-type cells regenerate the dataset from
/// `base.data` with the cell's level or profile; the other kinds use the
/// dataset `base` names. Robustness trains one model and evaluates it under
/// every corruption. Failed cells are recorded and the sweep continues; it
/// errors only when no cell succeeds.
pub fn sweep(kind: SweepKind, base: &TrainConfig) -> Result<SweepReport> {
    base.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let shared = match kind {
        SweepKind::FusionMode | SweepKind::Robustness => Some(load_dataset(base)?),
        _ => None,
    };
    for (fusion, level, profile) in training_cells(kind, base) {
        let mut cfg = base.clone();
        cfg.fusion = fusion;
        cfg.data.level = level;
        cfg.data.profile = profile;
        if let Some(dir) = &base.checkpoint_dir {
            cfg.checkpoint_dir = Some(dir.join(format!("{fusion}_level{level}_{profile}")));
        }
        let cell = Condition {
            model: fusion.to_string(),
            level: Some(level),
            profile: Some(profile.to_string()),
            ..Condition::default()
        };
        let generated;
        let ds = match &shared {
            Some(ds) => ds,
            None => {
                cfg.dataset = None;
                match generate_dataset(&cfg.data) {
                    Ok(d) => {
                        generated = d;
                        &generated
                    }
                    Err(e) => {
                        record(&mut failures, cell, e);
                        continue;
                    }
                }
            }
        };
        let model = match train_on(&cfg, ds) {
            Ok(out) => out.model,
            Err(e) => {
                record(&mut failures, cell, e);
                continue;
            }
        };
        if kind == SweepKind::Robustness {
            let r = robustness(&model, ds, base.seed, &base.policy);
            rows.extend(r.report.rows);
            failures.extend(r.failures);
        } else {
            match evaluate(Predictor::Model(&model), ds, None, base.seed, &base.policy) {
                Ok(r) => rows.extend(r.rows),
                Err(e) => record(&mut failures, cell, e),
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Evaluation(format!("every {kind} cell failed")));
    }
    Ok(SweepReport {
        kind,
        report: MetricReport {
            policy: base.policy,
            rows,
        },
        failures,
    })
}

fn record(failures: &mut Vec<CellFailure>, condition: Condition, e: Error) {
    log::warn!("sweep cell {condition:?} failed: {e}");
    failures.push(CellFailure {
        condition,
        error: e.to_string(),
    });
}

/// Evaluates `model` under each of the 12 x 5 corruptions.
pub fn robustness(model: &Model, ds: &Dataset, seed: u64, policy: &EvalPolicy) -> SweepReport {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for spec in CorruptionSpec::grid() {
        match evaluate(Predictor::Model(model), ds, Some(spec), seed, policy) {
            Ok(r) => rows.extend(r.rows),
            Err(e) => record(
                &mut failures,
                Condition {
                    model: model.config.depth.fusion.to_string(),
                    corruption: Some(spec.kind.to_string()),
                    severity: Some(spec.severity),
                    ..Condition::default()
                },
                e,
            ),
        }
    }
    SweepReport {
        kind: SweepKind::Robustness,
        report: MetricReport { policy: *policy, rows },
        failures,
    }
}
