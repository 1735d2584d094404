use v2sfm::diffnum::{grad_check_multi, Array, Tape};
use v2sfm::fusion::FusionMode;
use v2sfm::networks::checkpoint;
use v2sfm::networks::params::Bound;
use v2sfm::networks::{
    depth_net_forward, disparity_to_depth, pose_net_forward, vib_feature, DepthNetConfig, Model, ModelConfig,
    PoseNetConfig,
};
use v2sfm::vibration::MlstmConfig;
use v2sfm::Error;

fn random(shape: &[usize], seed: u64) -> Array {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    Array::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

fn small(fusion: FusionMode, size: usize) -> ModelConfig {
    ModelConfig {
        depth: DepthNetConfig {
            height: size,
            width: size,
            channels: vec![2, 3, 4],
            fusion,
        },
        pose: PoseNetConfig { channels: vec![3, 4] },
        vibration: MlstmConfig {
            hidden: 3,
            d_vib: 4,
            reduction: 3,
        },
        ..ModelConfig::default()
    }
}

#[test]
fn disparity_in_open_unit_interval_and_shape() {
    for fusion in FusionMode::ALL {
        let mut cfg = ModelConfig::default();
        cfg.depth.fusion = fusion;
        let m = Model::new(cfg, 1).unwrap();
        let frame = random(&[3, 64, 64], 2);
        let win = random(&[6, 40], 3).map(|v| 2.0 * v - 1.0);
        let d = m.predict_disparity(&frame, Some(&win)).unwrap();
        assert_eq!(d.shape(), &[1, 64, 64]);
        assert!(d.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn fh_identity_limit_matches_no_fusion() {
    let frame = random(&[3, 64, 64], 4);
    let win = random(&[6, 40], 5).map(|v| 2.0 * v - 1.0);
    let mut cfg = ModelConfig::default();
    cfg.depth.fusion = FusionMode::None;
    let plain = Model::new(cfg.clone(), 7).unwrap();
    cfg.depth.fusion = FusionMode::Fh;
    let mut fh = Model::new(cfg, 7).unwrap();
    for l in 0..4 {
        fh.params.set(&format!("fusion.{l}.snr_b"), Array::scalar(1e7)).unwrap();
        let w = fh.params.get(&format!("fusion.{l}.snr_w")).unwrap().map(|_| 0.0);
        fh.params.set(&format!("fusion.{l}.snr_w"), w).unwrap();
    }
    let a = plain.predict_disparity(&frame, None).unwrap();
    let b = fh.predict_disparity(&frame, Some(&win)).unwrap();
    let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() / x).fold(0.0, f64::max);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn no_fusion_ignores_vibration() {
    let mut cfg = ModelConfig::default();
    cfg.depth.fusion = FusionMode::None;
    let m = Model::new(cfg, 8).unwrap();
    let frame = random(&[3, 64, 64], 9);
    let a = m.predict_disparity(&frame, Some(&random(&[6, 40], 10))).unwrap();
    let b = m.predict_disparity(&frame, Some(&random(&[6, 40], 11))).unwrap();
    let c = m.predict_disparity(&frame, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn fused_model_needs_window() {
    let m = Model::new(ModelConfig::default(), 1).unwrap();
    assert!(matches!(m.predict_disparity(&random(&[3, 64, 64], 1), None), Err(Error::Config(_))));
    assert!(m.predict_disparity(&random(&[3, 32, 64], 1), Some(&random(&[6, 40], 1))).is_err());
}

#[test]
fn pose_output_and_asymmetry() {
    let m = Model::new(ModelConfig::default(), 12).unwrap();
    let (a, b) = (random(&[3, 64, 64], 13), random(&[3, 64, 64], 14));
    let p = m.predict_pose(&a, &b).unwrap();
    let q = m.predict_pose(&b, &a).unwrap();
    assert_eq!(p.to_array().len(), 6);
    assert_ne!(p, q);
    assert_eq!(p, m.predict_pose(&a, &b).unwrap());
}

#[test]
fn depth_range() {
    let d = disparity_to_depth(&Array::new(&[4], vec![1e-9, 0.25, 0.75, 1.0 - 1e-9]).unwrap(), 0.1, 10.0);
    assert!(d.data().windows(2).all(|w| w[0] > w[1]));
    assert!(d.data().iter().all(|&v| (0.1..=10.0).contains(&v)));
}

/// Runs `f` over every model parameter as a separate gradient-check input.
fn check_model(model: &Model, f: impl Fn(&mut Tape, &Bound) -> v2sfm::Result<v2sfm::diffnum::Var>) -> f64 {
    let names: Vec<String> = model.params.names().cloned().collect();
    let points: Vec<Array> = names.iter().map(|n| model.params.get(n).unwrap().clone()).collect();
    let r = grad_check_multi(
        |t, vars| {
            let b: Bound = names.iter().cloned().zip(vars.iter().copied()).collect();
            f(t, &b)
        },
        &points,
        1e-5,
    )
    .unwrap();
    assert!(r.excluded.iter().all(|e| e.within_band), "{r:?}");
    assert!(r.excluded.len() * 20 < r.checked, "{} excluded of {}", r.excluded.len(), r.checked);
    r.max_rel_error
}

#[test]
fn depth_net_gradient_32() {
    for fusion in [FusionMode::Concat, FusionMode::Sum, FusionMode::Fh] {
        let m = Model::new(small(fusion, 32), 15).unwrap();
        let frame = random(&[3, 32, 32], 16);
        let win = random(&[6, 40], 17).map(|v| 2.0 * v - 1.0);
        let target = random(&[1, 32, 32], 18);
        let err = check_model(&m, |t, b| {
            let f = t.constant(frame.clone())?;
            let feat = vib_feature(t, b, &m.config, Some(&win))?;
            let d = depth_net_forward(t, f, feat, b, &m.config.depth)?;
            let tg = t.constant(target.clone())?;
            let e = t.sub(d, tg)?;
            let e = t.pow2(e)?;
            t.mean(e)
        });
        assert!(err < 1e-4, "{fusion}: {err}");
    }
}

#[test]
fn pose_net_gradient() {
    let m = Model::new(small(FusionMode::None, 16), 19).unwrap();
    let (a, c) = (random(&[3, 16, 16], 20), random(&[3, 16, 16], 21));
    let err = check_model(&m, |t, b| {
        let x = t.constant(a.clone())?;
        let y = t.constant(c.clone())?;
        let p = pose_net_forward(t, x, y, b, &m.config.pose)?;
        let p = t.scale(p, 10.0)?;
        let p = t.sin(p)?;
        t.sum(p)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn checkpoint_round_trip_and_tamper() {
    let m = Model::new(ModelConfig::default(), 22).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let meta = serde_json::json!({"epoch": 3});
    checkpoint::save(&m, &path, &meta).unwrap();
    let (back, meta2) = checkpoint::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(meta2, meta);

    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(Error::Checksum { .. })));
    assert!(checkpoint::from_bytes(b"nonsense-bytes-here", &path).is_err());
}
