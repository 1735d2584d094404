//! Depth and ego-motion metrics on hand-made inputs, and a grouped report.

use v2sfm::diffnum::Array;
use v2sfm::geometry::Pose6;
use v2sfm::metrics::{aggregate_report, depth_metrics, egomotion_metrics, Condition, EvalPolicy, GroupField, SnippetRecord};

fn main() -> v2sfm::Result<()> {
    let gt = Array::new(&[4], vec![0.5, 1.0, 2.0, 4.0])?;
    let pred = gt.map(|v| 1.2 * v);
    for policy in [EvalPolicy::unscaled(), EvalPolicy::default()] {
        println!("{policy}: {:?}", depth_metrics(&gt, &pred, None, &policy)?);
    }

    let gt_traj = [0.0, 1.2, 2.0].map(|z| Pose6::new(0.0, 0.0, z, 0.0, 0.0, 0.0));
    let pred_traj = [0.0, 1.0, 2.0].map(|z| Pose6::new(0.0, 0.0, z, 0.0, 0.0, 0.05 * z));
    let motion = egomotion_metrics(&gt_traj, &pred_traj, &EvalPolicy::default())?;
    println!("{motion:?}");

    let records: Vec<SnippetRecord> = (0..6)
        .map(|i| SnippetRecord {
            condition: Condition {
                model: if i % 2 == 0 { "fh" } else { "none" }.into(),
                level: Some(1 + (i % 3) as u8),
                ..Condition::default()
            },
            depth: depth_metrics(&gt, &gt.map(|v| v * (1.0 + 0.05 * i as f64)), None, &EvalPolicy::unscaled()).unwrap(),
            motion,
        })
        .collect();
    let report = aggregate_report(&records, &[GroupField::Model], &EvalPolicy::unscaled())?;
    print!("{}", report.to_csv()?);
    Ok(())
}
