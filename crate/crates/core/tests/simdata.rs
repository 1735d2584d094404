use std::fs;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2sfm::diffnum::Array;
use v2sfm::geometry::{rotation_entries, Intrinsics, Pose6, D_MAX};
use v2sfm::simdata::render::intersect;
use v2sfm::simdata::trajectory::JITTER_PER_LEVEL;
use v2sfm::simdata::{
    corrupt, generate_dataset, generate_scene, generate_sequence, generate_trajectory, psnr, read_dataset,
    render_frame, reprojection_mse, slice_snippets, synthesize_vibration, write_dataset, CorruptionKind,
    CorruptionSpec, DatasetConfig, SceneConfig, TrajectoryConfig, VibrationProfile, FRAME_RATE,
};
use v2sfm::vibration::{RATE, WINDOW};
use v2sfm::Error;

fn cylinder(radius: f64) -> SceneConfig {
    SceneConfig {
        radius,
        bump_amplitude: 0.0,
        wander: 0.0,
        ..SceneConfig::default()
    }
}

fn small(frames: usize, size: usize) -> DatasetConfig {
    DatasetConfig {
        sequences: 2,
        frames,
        width: size,
        height: size,
        ..DatasetConfig::toy()
    }
}

fn long_scene() -> SceneConfig {
    SceneConfig {
        length: 860.0,
        ..SceneConfig::default()
    }
}

#[test]
fn scene_is_deterministic() {
    let a = generate_scene(11, &SceneConfig::default()).unwrap();
    let b = generate_scene(11, &SceneConfig::default()).unwrap();
    let c = generate_scene(12, &SceneConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut differs = false;
    for _ in 0..200 {
        let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..40.0)];
        assert_eq!(a.signed_distance(p).to_bits(), b.signed_distance(p).to_bits());
        assert_eq!(a.albedo(p), b.albedo(p));
        differs |= a.signed_distance(p) != c.signed_distance(p);
    }
    assert!(differs);
}

#[test]
fn zero_bumps_give_constant_radius() {
    let s = generate_scene(5, &cylinder(0.8)).unwrap();
    for z in [0.0, 3.3, 17.0, 39.9] {
        for a in [0.0, 1.0, 4.0] {
            assert_eq!(s.radius_at(z, a), 0.8);
        }
        assert!((s.signed_distance([0.0, 0.0, z]) + 0.8).abs() < 1e-15);
    }
}

#[test]
fn curvature_violation_is_config_error() {
    let cfg = SceneConfig {
        wander: 0.5,
        control_spacing: 1.0,
        max_curvature: 0.01,
        ..SceneConfig::default()
    };
    assert!(matches!(generate_scene(1, &cfg), Err(Error::Config(_))));
    let bad_radius = SceneConfig {
        radius: 3.0,
        ..SceneConfig::default()
    };
    assert!(matches!(generate_scene(1, &bad_radius), Err(Error::Config(_))));
}

#[test]
fn cylinder_depth_matches_closed_form() {
    let r = 1.0;
    let s = generate_scene(2, &cylinder(r)).unwrap();
    let k = Intrinsics::centered(48, 48);
    let pose = Pose6::new(0.0, 0.0, 5.0, 0.0, 0.0, 0.0);
    let f = render_frame(&s, &pose, &k).unwrap();
    let mut checked = 0;
    for v in 0..k.height {
        for u in 0..k.width {
            let x = (u as f64 - k.cx) / k.fx;
            let y = (v as f64 - k.cy) / k.fy;
            let tan = x.hypot(y);
            let z = r / tan;
            let got = f.depth.data()[v * k.width + u];
            if z < D_MAX - 1e-3 {
                // z-depth along a ray at angle theta from the axis is r / tan(theta)
                assert!((got - z).abs() < 1e-6, "pixel ({u},{v}): {got} vs {z}");
                // and the Euclidean hit distance is r / sin(theta)
                let norm = (1.0 + tan * tan).sqrt();
                let dir = [x / norm, y / norm, 1.0 / norm];
                let d = intersect(&s, [0.0, 0.0, 5.0], dir, 2.0 * D_MAX).unwrap();
                let sin = tan / norm;
                assert!((d - r / sin).abs() < 1e-6);
                checked += 1;
            } else {
                assert_eq!(got, D_MAX);
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn depth_agrees_with_brute_force_march() {
    let s = generate_scene(21, &SceneConfig::default()).unwrap();
    let traj = generate_trajectory(&s, 12, 4, VibrationProfile::Collision, 3, &TrajectoryConfig::default()).unwrap();
    let k = Intrinsics::centered(64, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frames: Vec<_> = traj.noisy.iter().map(|p| render_frame(&s, p, &k).unwrap()).collect();
    let mut hits = 0;
    for n in 0..1000 {
        let pose = traj.noisy[n % traj.noisy.len()];
        let f = &frames[n % traj.noisy.len()];
        let (u, v) = (rng.random_range(0..k.width), rng.random_range(0..k.height));
        let r = rotation_entries(pose.roll, pose.pitch, pose.yaw);
        let c = pose.translation();
        let d = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
        let dir: Vec<f64> = (0..3).map(|i| r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2]).collect();
        let mut t = 0.0;
        let mut oracle = D_MAX;
        while t < D_MAX {
            t += 1e-4;
            if s.signed_distance([c[0] + t * dir[0], c[1] + t * dir[1], c[2] + t * dir[2]]) >= 0.0 {
                oracle = t;
                break;
            }
        }
        let got = f.depth.data()[v * k.width + u];
        assert!((got - oracle.min(D_MAX)).abs() < 1e-3, "pixel ({u},{v}): {got} vs {oracle}");
        hits += usize::from(oracle < D_MAX);
    }
    assert!(hits > 500, "only {hits} pixels hit the wall");
}

#[test]
fn renders_are_deterministic_and_bounded() {
    let s = generate_scene(4, &SceneConfig::default()).unwrap();
    let k = Intrinsics::centered(24, 20);
    let pose = Pose6::new(0.1, -0.05, 3.0, 0.02, 0.1, -0.3);
    let a = render_frame(&s, &pose, &k).unwrap();
    let b = render_frame(&s, &pose, &k).unwrap();
    assert_eq!(a, b);
    assert!(a.depth.data().iter().all(|d| (0.1..=D_MAX).contains(d)));
    assert!(a.image.data().iter().all(|x| (0.0..=1.0).contains(x)));
    let outside = Pose6::new(5.0, 0.0, 3.0, 0.0, 0.0, 0.0);
    assert!(matches!(render_frame(&s, &outside, &k), Err(Error::Scene(_))));
}

#[test]
fn level_zero_is_clean() {
    let s = generate_scene(1, &SceneConfig::default()).unwrap();
    for profile in VibrationProfile::ALL {
        let t = generate_trajectory(&s, 40, 0, profile, 8, &TrajectoryConfig::default()).unwrap();
        assert_eq!(t.clean, t.noisy);
    }
}

#[test]
fn trajectory_rejects_bad_inputs() {
    let s = generate_scene(1, &SceneConfig::default()).unwrap();
    let cfg = TrajectoryConfig::default();
    assert!(generate_trajectory(&s, 2, 1, VibrationProfile::Collision, 0, &cfg).is_err());
    assert!(generate_trajectory(&s, 10, 6, VibrationProfile::Collision, 0, &cfg).is_err());
    assert!(generate_trajectory(&s, 1000, 1, VibrationProfile::Collision, 0, &cfg).is_err());
    let tight = TrajectoryConfig {
        wall_margin: 0.999,
        ..cfg
    };
    assert!(matches!(
        generate_trajectory(&s, 10, 5, VibrationProfile::Collision, 0, &tight),
        Err(Error::Scene(_))
    ));
}

fn displacements(level: u8, profile: VibrationProfile) -> Vec<[f64; 3]> {
    let s = generate_scene(31, &long_scene()).unwrap();
    let t = generate_trajectory(&s, 10_000, level, profile, 17, &TrajectoryConfig::default()).unwrap();
    t.clean
        .iter()
        .zip(&t.noisy)
        .map(|(c, n)| [n.tx - c.tx, n.ty - c.ty, n.tz - c.tz])
        .collect()
}

#[test]
fn jitter_sigma_matches_level() {
    // the sway moves the camera in the cross-section only, so the axial
    // component carries the Gaussian jitter alone
    for level in 1..=5u8 {
        let d = displacements(level, VibrationProfile::Peristalsis);
        let n = d.len() as f64;
        let mean = d.iter().map(|v| v[2]).sum::<f64>() / n;
        let sd = (d.iter().map(|v| (v[2] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let want = JITTER_PER_LEVEL * f64::from(level);
        assert!((sd / want - 1.0).abs() < 0.05, "level {level}: {sd} vs {want}");
    }
}

fn kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

#[test]
fn collisions_have_heavier_tails() {
    let pooled = |p| -> Vec<f64> { displacements(5, p).into_iter().flatten().collect() };
    let kc = kurtosis(&pooled(VibrationProfile::Collision));
    let kp = kurtosis(&pooled(VibrationProfile::Peristalsis));
    assert!(kc > kp, "collision {kc} vs peristalsis {kp}");
    assert!(kc > 3.5);
}

#[test]
fn straight_constant_velocity_has_zero_vibration() {
    let times: Vec<f64> = (0..30).map(|i| i as f64 / FRAME_RATE).collect();
    let poses: Vec<Pose6> = times.iter().map(|&t| Pose6::new(0.1, -0.2, 1.0 + 0.24 * t, 0.0, 0.3, 0.0)).collect();
    let v = synthesize_vibration(&times, &poses).unwrap();
    assert!(v.len() > 300);
    for x in v.samples.data() {
        assert!(x.abs() < 1e-9, "{x}");
    }
}

#[test]
fn sinusoid_second_difference_amplitude() {
    let (amp, omega) = (0.05, std::f64::consts::TAU * 0.1);
    let times: Vec<f64> = (0..120).map(|i| i as f64 / FRAME_RATE).collect();
    let poses: Vec<Pose6> = times
        .iter()
        .map(|&t| Pose6::new(0.0, 0.0, amp * (omega * t).sin(), 0.0, 0.0, 0.0))
        .collect();
    let v = synthesize_vibration(&times, &poses).unwrap();
    let dt = 1.0 / RATE;
    let scale = amp * omega * omega * dt * dt;
    let n = v.len();
    let z = &v.samples.data()[2 * n..3 * n];
    let mut peak = 0.0_f64;
    for (j, &x) in z.iter().enumerate().take(n - 200).skip(200) {
        let want = -scale * (omega * v.time(j)).sin();
        assert!((x - want).abs() < 0.01 * scale, "sample {j}: {x} vs {want}");
        peak = peak.max(x.abs());
    }
    assert!((peak / scale - 1.0).abs() < 0.01);
}

#[test]
fn short_trajectory_is_rejected() {
    let times = [0.0, 1.0 / 3.0, 2.0 / 3.0];
    let poses = [Pose6::default(); 3];
    assert!(matches!(synthesize_vibration(&times, &poses), Err(Error::Config(_))));
}

#[test]
fn vibration_energy_increases_with_level() {
    let s = generate_scene(8, &SceneConfig::default()).unwrap();
    for profile in VibrationProfile::ALL {
        let energy: Vec<f64> = (1..=5)
            .map(|level| {
                let t = generate_trajectory(&s, 60, level, profile, 4, &TrajectoryConfig::default()).unwrap();
                synthesize_vibration(&t.times, &t.noisy).unwrap().energy()
            })
            .collect();
        assert!(energy.windows(2).all(|w| w[1] > w[0]), "{profile}: {energy:?}");
    }
}

#[test]
fn snippets_slide_with_stride_one() {
    let cfg = small(10, 16);
    let seq = generate_sequence(&cfg, 0).unwrap();
    let (snips, dropped) = slice_snippets(&seq, 0, &seq.vibration.max_abs()).unwrap();
    assert_eq!((snips.len(), dropped), (8, 0));
    for (k, s) in snips.iter().enumerate() {
        assert_eq!(s.first, k);
        let t = seq.times[k];
        assert_eq!(s.window.center_time(), t);
        assert!(s.window.samples().data().iter().all(|x| (-1.0..=1.0).contains(x)));
        // locate the window in the raw track and check its time span
        let raw = seq.vibration.window(t).unwrap();
        let n = seq.vibration.len();
        let j0 = (0..n)
            .find(|&j| (0..6).all(|c| seq.vibration.samples.data()[c * n + j] == raw.data()[c * WINDOW]))
            .unwrap();
        let (first, last) = (seq.vibration.time(j0), seq.vibration.time(j0 + WINDOW - 1));
        assert!(first >= t - 0.5 - 1e-9 && first < t - 0.5 + 1.0 / RATE);
        assert!(last < t + 0.5);
    }
}

#[test]
fn unpadded_sequences_drop_edge_snippets() {
    let cfg = DatasetConfig {
        pad_frames: 0,
        ..small(10, 16)
    };
    let seq = generate_sequence(&cfg, 0).unwrap();
    let (snips, dropped) = slice_snippets(&seq, 0, &seq.vibration.max_abs()).unwrap();
    assert_eq!(snips.len() + dropped, 8);
    assert!(dropped >= 2);
}

#[test]
fn toy_config_gives_two_hundred_snippets() {
    let cfg = DatasetConfig {
        width: 8,
        height: 8,
        ..DatasetConfig::toy()
    };
    let ds = generate_dataset(&cfg).unwrap();
    let (all, dropped) = ds.snippets().unwrap();
    assert_eq!((all.len(), dropped), (200, 0));
    let (train, val) = ds.split_snippets().unwrap();
    assert_eq!((train.len(), val.len()), (160, 40));
    let (tr, va) = ds.split();
    assert!(tr.iter().all(|i| !va.contains(i)));
}

#[test]
fn ground_truth_reprojection_is_consistent() {
    let cfg = DatasetConfig {
        sequences: 1,
        ..DatasetConfig::toy()
    };
    let ds = generate_dataset(&cfg).unwrap();
    let seq = &ds.sequences[0];
    for i in 0..seq.len() - 1 {
        let d = seq.depths[i].clone();
        let (mse, valid) =
            reprojection_mse(&seq.frames[i], &d, &seq.frames[i + 1], &seq.poses[i], &seq.poses[i + 1], &ds.intrinsics)
                .unwrap();
        assert!(mse < 2e-3, "frame {i}: {mse}");
        assert!(valid > 2000);
    }
}

#[test]
fn dataset_is_deterministic() {
    let cfg = small(4, 12);
    assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
}

#[test]
fn dataset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&small(5, 16)).unwrap();
    let m = write_dataset(&ds, dir.path()).unwrap();
    assert_eq!(m.sequences.len(), 2);
    assert_eq!((m.frame_rate, m.vibration_rate), (3.0, 40.0));
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.sequences.iter().zip(&ds.sequences) {
        for (x, y) in a.depths.iter().zip(&b.depths) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| (p - q).abs() <= 1e-6));
        }
    }
}

#[test]
fn missing_vibration_names_the_sequence() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&generate_dataset(&small(4, 12)).unwrap(), dir.path()).unwrap();
    fs::remove_file(dir.path().join("seq_001/vibration.csv")).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("seq_001") && err.contains("vibration"), "{err}");
}

#[test]
fn frame_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&generate_dataset(&small(4, 12)).unwrap(), dir.path()).unwrap();
    fs::remove_file(dir.path().join("seq_000/frames/000003.png")).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)), "{err}");
}

#[test]
fn tampering_and_versions_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&generate_dataset(&small(4, 12)).unwrap(), dir.path()).unwrap();
    let poses = dir.path().join("seq_000/poses.csv");
    let mut text = fs::read_to_string(&poses).unwrap();
    text.push_str("4,0,0,0,0,0,0\n");
    fs::write(&poses, text).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Checksum { .. })));

    let dir = tempfile::tempdir().unwrap();
    write_dataset(&generate_dataset(&small(4, 12)).unwrap(), dir.path()).unwrap();
    let root = dir.path().join("manifest.json");
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&root).unwrap()).unwrap();
    v["version"] = 99.into();
    fs::write(&root, serde_json::to_vec(&v).unwrap()).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Version { found: 99, .. })));
}

fn sample_images(count: usize, size: usize) -> Vec<Array> {
    let cfg = DatasetConfig {
        sequences: count.div_ceil(20),
        frames: 20,
        width: size,
        height: size,
        ..DatasetConfig::toy()
    };
    let ds = generate_dataset(&cfg).unwrap();
    ds.sequences.into_iter().flat_map(|s| s.frames).take(count).collect()
}

#[test]
fn gaussian_noise_sigma_matches_table() {
    let img = Array::full(&[3, 578, 578], 0.5);
    for (sev, want) in [(1u8, 0.04), (2, 0.06), (3, 0.09), (4, 0.13), (5, 0.18)] {
        let out = corrupt(&img, CorruptionSpec::new(CorruptionKind::GaussianNoise, sev).unwrap(), 3).unwrap();
        let d: Vec<f64> = out.data().iter().map(|x| x - 0.5).collect();
        let n = d.len() as f64;
        let m = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd / want - 1.0).abs() < 0.05, "severity {sev}: {sd} vs {want}");
    }
}

#[test]
fn psnr_does_not_increase_with_severity() {
    let images = sample_images(100, 32);
    for kind in CorruptionKind::ALL {
        let mean: Vec<f64> = (1..=5)
            .map(|sev| {
                let spec = CorruptionSpec::new(kind, sev).unwrap();
                images
                    .iter()
                    .enumerate()
                    .map(|(i, x)| psnr(x, &corrupt(x, spec, i as u64).unwrap()))
                    .sum::<f64>()
                    / images.len() as f64
            })
            .collect();
        assert!(mean.iter().all(|p| p.is_finite()), "{kind}: {mean:?}");
        assert!(mean.windows(2).all(|w| w[1] <= w[0]), "{kind}: {mean:?}");
    }
}

#[test]
fn severity_zero_is_identity_and_output_is_clipped() {
    let img = &sample_images(1, 24)[0];
    for kind in CorruptionKind::ALL {
        assert_eq!(&corrupt(img, CorruptionSpec { kind, severity: 0 }, 5).unwrap(), img);
        for sev in 1..=5 {
            let spec = CorruptionSpec::new(kind, sev).unwrap();
            let a = corrupt(img, spec, 5).unwrap();
            assert_eq!(a, corrupt(img, spec, 5).unwrap());
            assert_eq!(a.shape(), img.shape());
            assert!(a.data().iter().all(|x| (0.0..=1.0).contains(x)), "{spec}");
        }
    }
    assert!("fog:1".parse::<CorruptionSpec>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn corruptions_stay_in_range(seed in 0u64..1000, kind in 0usize..12, sev in 1u8..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Array::from_fn(&[3, 12, 12], |_| rng.random::<f64>());
        let out = corrupt(&img, CorruptionSpec::new(CorruptionKind::ALL[kind], sev).unwrap(), seed).unwrap();
        prop_assert!(out.data().iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
