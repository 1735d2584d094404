use proptest::prelude::*;
use v2sfm::diffnum::{grad_check, grad_check_multi, Array, Tape};
use v2sfm::geometry::{pose_transform, DiffTransform, Intrinsics, TransformSE3};
use v2sfm::losses::{
    brightness_fit, geometry_loss, geometry_loss_diff, photometric_loss, photometric_loss_with_fit, smoothness_loss,
    smoothness_loss_diff, snippet_loss, ssim_map, total_loss, weighted_total, BrightnessAffine, LossWeights,
    SourceView, TargetView, SSIM_C1, SSIM_C2,
};

fn random(shape: &[usize], seed: u64) -> Array {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    Array::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

fn ones(h: usize, w: usize) -> Array {
    Array::full(&[h, w], 1.0)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let i = if i < 0 { -i } else { i };
    (if i >= n { 2 * (n - 1) - i } else { i }) as usize
}

/// SSIM evaluated pixel by pixel from window sums.
fn ssim_oracle(x: &Array, y: &Array) -> Array {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    Array::from_fn(s, |i| {
        let (ch, r, col) = (i / (h * w), (i / w) % h, i % w);
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for dr in -3isize..=3 {
            for dc in -3isize..=3 {
                let rr = reflect(r as isize + dr, h);
                let cc = reflect(col as isize + dc, w);
                let a = x.at3(ch, rr, cc);
                let b = y.at3(ch, rr, cc);
                sx += a;
                sy += b;
                sxx += a * a;
                syy += b * b;
                sxy += a * b;
            }
        }
        let n = 49.0;
        let (mx, my) = (sx / n, sy / n);
        let vx = sxx / n - mx * mx;
        let vy = syy / n - my * my;
        let cxy = sxy / n - mx * my;
        let _ = c;
        ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
    })
}

#[test]
fn ssim_self_and_inverse() {
    let x = random(&[3, 16, 16], 1);
    let s = ssim_map(&x, &x).unwrap();
    assert!(s.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    let inv = x.map(|v| 1.0 - v);
    let s = ssim_map(&x, &inv).unwrap();
    assert!(s.data().iter().all(|&v| v < 1.0));
    assert!(s.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
}

#[test]
fn ssim_matches_direct_formula() {
    let x = random(&[2, 16, 16], 2);
    let y = random(&[2, 16, 16], 3);
    let got = ssim_map(&x, &y).unwrap();
    let want = ssim_oracle(&x, &y);
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn ssim_window_larger_than_image() {
    let x = random(&[1, 5, 5], 4);
    assert!(ssim_map(&x, &x).is_err());
}

#[test]
fn brightness_fit_recovers_affine_pair() {
    let w = random(&[3, 12, 12], 5);
    let t = w.map(|v| 2.0 * v + 0.1);
    let f = brightness_fit(&w, &t, &ones(12, 12)).unwrap();
    assert!((f.a - 2.0).abs() < 1e-12 && (f.c - 0.1).abs() < 1e-12, "{f:?}");
}

#[test]
fn photometric_zero_cases() {
    let x = random(&[3, 16, 16], 6);
    assert!(photometric_loss(&x, &x, &ones(16, 16), 0.85).unwrap().abs() < 1e-10);
    let t = x.map(|v| 1.3 * v - 0.05);
    assert!(photometric_loss(&x, &t, &ones(16, 16), 0.85).unwrap().abs() < 1e-10);
}

#[test]
fn photometric_without_ssim_is_masked_l2() {
    let w = random(&[3, 16, 16], 7);
    let t = random(&[3, 16, 16], 8);
    let mask = random(&[16, 16], 9).map(|v| if v > 0.3 { 1.0 } else { 0.0 });
    let fit = brightness_fit(&w, &t, &mask).unwrap();
    let got = photometric_loss(&w, &t, &mask, 0.0).unwrap();
    let (mut sum, mut n) = (0.0, 0.0);
    for p in 0..256 {
        if mask.data()[p] > 0.0 {
            let sq: f64 = (0..3)
                .map(|c| (t.data()[c * 256 + p] - (fit.a * w.data()[c * 256 + p] + fit.c)).powi(2))
                .sum();
            sum += sq.sqrt();
            n += 1.0;
        }
    }
    assert!((got - sum / n).abs() < 1e-12, "{got} vs {}", sum / n);
}

#[test]
fn smoothness_examples() {
    let img = random(&[3, 8, 8], 10);
    assert_eq!(smoothness_loss(&Array::full(&[1, 8, 8], 0.4), &img).unwrap(), 0.0);

    // vertical disparity step between columns 3 and 4
    let disp = Array::from_fn(&[1, 8, 8], |i| if i % 8 < 4 { 0.2 } else { 0.6 });
    let edge = Array::from_fn(&[3, 8, 8], |i| if i % 8 < 4 { 0.1 } else { 0.9 });
    let flat = Array::full(&[3, 8, 8], 0.5);
    assert!(smoothness_loss(&disp, &edge).unwrap() < smoothness_loss(&disp, &flat).unwrap());

    assert!(smoothness_loss(&Array::zeros(&[1, 8, 8]), &img).is_err());
}

#[test]
fn smoothness_hand_3x3() {
    let d: [[f64; 3]; 3] = [[1.0, 2.0, 4.0], [1.0, 1.0, 3.0], [2.0, 5.0, 1.0]];
    let img: [[[f64; 3]; 3]; 2] = [
        [[0.0, 0.5, 0.5], [0.2, 0.2, 0.9], [0.1, 0.4, 0.3]],
        [[0.3, 0.5, 0.1], [0.2, 0.6, 0.9], [0.0, 0.4, 0.7]],
    ];
    let mean: f64 = d.iter().flatten().sum::<f64>() / 9.0;
    let mut gx = 0.0;
    let mut gy = 0.0;
    for r in 0..3 {
        for c in 0..2 {
            let di = (img[0][r][c + 1] - img[0][r][c]).abs() + (img[1][r][c + 1] - img[1][r][c]).abs();
            gx += ((d[r][c + 1] - d[r][c]) / mean).abs() * (-di / 2.0).exp();
        }
    }
    for r in 0..2 {
        for c in 0..3 {
            let di = (img[0][r + 1][c] - img[0][r][c]).abs() + (img[1][r + 1][c] - img[1][r][c]).abs();
            gy += ((d[r + 1][c] - d[r][c]) / mean).abs() * (-di / 2.0).exp();
        }
    }
    let want = gx / 6.0 + gy / 6.0;
    let disp = Array::new(&[1, 3, 3], d.iter().flatten().copied().collect()).unwrap();
    let image = Array::new(&[2, 3, 3], img.iter().flatten().flatten().copied().collect()).unwrap();
    let got = smoothness_loss(&disp, &image).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn geometry_examples() {
    let a = Array::full(&[1, 4, 4], 3.0);
    let b = Array::full(&[1, 4, 4], 1.0);
    let m = ones(4, 4);
    assert_eq!(geometry_loss(&a, &a, &m).unwrap(), 0.0);
    assert!((geometry_loss(&a, &b, &m).unwrap() - 0.5).abs() < 1e-15);
    assert_eq!(geometry_loss(&a, &b, &m).unwrap(), geometry_loss(&b, &a, &m).unwrap());
    let neg = Array::full(&[1, 4, 4], -1.0);
    assert!(geometry_loss(&a, &neg, &m).is_err());
    // non-positive values outside the mask are ignored
    let mut partial = Array::zeros(&[4, 4]);
    partial.data_mut()[5] = 1.0;
    let mut c = b.clone();
    c.data_mut()[0] = 0.0;
    assert!((geometry_loss(&a, &c, &partial).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert_eq!(total_loss(0.0, 0.0, 0.0, &w).unwrap(), 0.0);
    assert!((total_loss(0.2, 0.3, 0.4, &w).unwrap() - 0.43).abs() < 1e-15);
    let only_photo = LossWeights {
        beta: 0.0,
        gamma: 0.0,
        ..w
    };
    assert_eq!(total_loss(0.2, 0.3, 0.4, &only_photo).unwrap(), 0.2);
    assert!(total_loss(f64::NAN, 0.0, 0.0, &w).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn photometric_affine_invariance(seed in 0u64..1000, a in 0.6f64..1.8, c in -0.2f64..0.2) {
        let w = random(&[3, 12, 12], seed);
        let noise = random(&[3, 12, 12], seed + 7);
        let t = Array::from_fn(&[3, 12, 12], |i| 1.1 * w.data()[i] + 0.05 + 0.2 * (noise.data()[i] - 0.5));
        let mask = random(&[12, 12], seed + 3).map(|v| if v > 0.2 { 1.0 } else { 0.0 });
        let base = photometric_loss(&w, &t, &mask, 0.85).unwrap();
        let fit = brightness_fit(&w, &t, &mask).unwrap();
        // stay where the refitted gain is not clamped
        prop_assume!(fit.a > 0.5 && fit.a < 2.0 && fit.a / a > 0.5 && fit.a / a < 2.0);
        let shifted = Array::from_fn(&[3, 12, 12], |i| {
            if mask.data()[i % 144] > 0.0 { a * w.data()[i] + c } else { 0.0 }
        });
        let wz = Array::from_fn(&[3, 12, 12], |i| if mask.data()[i % 144] > 0.0 { w.data()[i] } else { 0.0 });
        let base_z = photometric_loss(&wz, &t, &mask, 0.85).unwrap();
        prop_assert!((base - base_z).abs() < 1e-10);
        let moved = photometric_loss(&shifted, &t, &mask, 0.85).unwrap();
        prop_assert!((moved - base).abs() < 1e-10, "{} vs {}", moved, base);
    }

    #[test]
    fn losses_are_non_negative(seed in 0u64..1000) {
        let w = random(&[3, 10, 10], seed);
        let t = random(&[3, 10, 10], seed + 1);
        prop_assert!(photometric_loss(&w, &t, &ones(10, 10), 0.85).unwrap() >= 0.0);
        let d = random(&[1, 10, 10], seed + 2).map(|v| v + 0.01);
        prop_assert!(smoothness_loss(&d, &t).unwrap() >= 0.0);
    }

    #[test]
    fn geometry_loss_in_unit_interval(seed in 0u64..1000, scale in 1e-3f64..1e3) {
        let a = random(&[1, 8, 8], seed).map(|v| (v + 1e-3) * scale);
        let b = random(&[1, 8, 8], seed + 11).map(|v| v * 1e3 + 1e-9);
        let g = geometry_loss(&a, &b, &ones(8, 8)).unwrap();
        prop_assert!((0.0..1.0).contains(&g));
        let g2 = geometry_loss(&b, &a, &ones(8, 8)).unwrap();
        prop_assert!((g - g2).abs() < 1e-15);
    }

    #[test]
    fn total_is_affine_in_each_component(p in 0.0f64..2.0, s in 0.0f64..2.0, g in 0.0f64..1.0, d in -0.5f64..0.5) {
        let w = LossWeights::default();
        let base = total_loss(p, s, g, &w).unwrap();
        prop_assert!((total_loss(p + d, s, g, &w).unwrap() - base - w.alpha * d).abs() < 1e-12);
        prop_assert!((total_loss(p, s + d, g, &w).unwrap() - base - w.beta * d).abs() < 1e-12);
        prop_assert!((total_loss(p, s, g + d, &w).unwrap() - base - w.gamma * d).abs() < 1e-12);
    }
}

#[test]
fn photometric_gradient_16() {
    let w0 = random(&[3, 16, 16], 20);
    let t = random(&[3, 16, 16], 21);
    let mask = random(&[16, 16], 22).map(|v| if v > 0.1 { 1.0 } else { 0.0 });
    let fit = brightness_fit(&w0, &t, &mask).unwrap();
    let r = grad_check_multi(
        |tp, v| photometric_loss_with_fit(tp, v[0], v[1], &mask, 0.85, fit),
        &[w0.clone(), t.clone()],
        1e-5,
    )
    .unwrap();
    assert!(r.passes(1e-4), "{r:?}");
}

#[test]
fn smoothness_gradient_16() {
    let d = random(&[1, 16, 16], 23).map(|v| v + 0.05);
    let img = random(&[3, 16, 16], 24);
    let r = grad_check_multi(|tp, v| smoothness_loss_diff(tp, v[0], v[1]), &[d, img], 1e-5).unwrap();
    assert!(r.passes(1e-4), "{r:?}");
}

#[test]
fn geometry_gradient_16() {
    let a = random(&[1, 16, 16], 25).map(|v| v + 0.5);
    let b = random(&[1, 16, 16], 26).map(|v| v + 0.5);
    let mask = random(&[16, 16], 27).map(|v| if v > 0.2 { 1.0 } else { 0.0 });
    let r = grad_check_multi(|tp, v| geometry_loss_diff(tp, v[0], v[1], &mask), &[a, b], 1e-5).unwrap();
    assert!(r.passes(1e-4), "{r:?}");
}

#[test]
fn weighted_total_gradient() {
    let x = Array::new(&[3], vec![0.2, 0.3, 0.4]).unwrap();
    let r = grad_check(
        |tp, v| {
            let p = tp.slice(v, 0, 0, 1)?;
            let s = tp.slice(v, 0, 1, 1)?;
            let g = tp.slice(v, 0, 2, 1)?;
            weighted_total(tp, p, s, g, &LossWeights::default())
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(r.passes(1e-8), "{r:?}");
}

fn smooth_image(phase: f64, n: usize) -> Array {
    Array::from_fn(&[3, n, n], |i| {
        let (c, v, u) = (i / (n * n), (i / n) % n, i % n);
        let (u, v) = (u as f64, v as f64);
        0.5 + 0.2 * (0.5 * u + phase + c as f64).sin() * (0.4 * v).cos() + 0.1 * (0.3 * (u + v)).sin()
    })
}

/// Full snippet objective over depth, disparity, both images and both poses.
#[test]
fn snippet_loss_gradient_16() {
    let n = 16;
    let k = Intrinsics::centered(n, n);
    let target = smooth_image(0.0, n);
    let prev = smooth_image(0.3, n);
    let next = smooth_image(-0.3, n);
    let disp = random(&[1, n, n], 30).map(|v| 0.3 + 0.2 * v);
    let depth = disp.map(|d| 1.0 / d);
    let dprev = random(&[1, n, n], 31).map(|v| 2.5 + v);
    let dnext = random(&[1, n, n], 32).map(|v| 2.5 + v);
    let p_prev = Array::new(&[6], vec![0.03, -0.02, 0.05, 0.01, -0.02, 0.015]).unwrap();
    let p_next = Array::new(&[6], vec![-0.02, 0.03, -0.04, -0.01, 0.02, -0.01]).unwrap();
    let points = [target, prev, next, disp, depth, dprev, dnext, p_prev, p_next];
    let w = LossWeights::default();

    let build = |tp: &mut Tape, v: &[v2sfm::diffnum::Var], frozen: Option<&[BrightnessAffine]>| {
        let tv = TargetView {
            image: v[0],
            disparity: v[3],
            depth: v[4],
        };
        let sources = [
            SourceView {
                image: v[1],
                depth: v[5],
                transform: pose_transform(tp, v[7])?,
            },
            SourceView {
                image: v[2],
                depth: v[6],
                transform: pose_transform(tp, v[8])?,
            },
        ];
        snippet_loss(tp, &tv, &sources, &k, &w, frozen)
    };

    let mut tape = Tape::new();
    let vars: Vec<_> = points.iter().map(|p| tape.constant(p.clone()).unwrap()).collect();
    let terms = build(&mut tape, &vars, None).unwrap();
    let (total, p, s, g) = terms.values(&tape);
    assert!((total - (p + 0.1 * s + 0.5 * g)).abs() < 1e-14);
    assert!(g < 1.0 && p > 0.0 && s > 0.0);
    let fits = terms.fits.clone();

    let r = grad_check_multi(|tp, v| Ok(build(tp, v, Some(&fits))?.total), &points, 1e-5).unwrap();
    assert!(r.passes(1e-4), "{r:?}");
    assert!(r.excluded.len() * 20 < r.checked, "{} excluded of {}", r.excluded.len(), r.checked);
}

#[test]
fn identity_pair_has_zero_photometric_and_geometry() {
    let n = 16;
    let k = Intrinsics::centered(n, n);
    let img = smooth_image(0.0, n);
    let depth = Array::full(&[1, n, n], 2.0);
    let mut tape = Tape::new();
    let i = tape.constant(img).unwrap();
    let d = tape.constant(depth.clone()).unwrap();
    let disp = tape.constant(depth.map(|v| 1.0 / v)).unwrap();
    let tr = DiffTransform::constant(&mut tape, &TransformSE3::identity()).unwrap();
    let terms = snippet_loss(
        &mut tape,
        &TargetView {
            image: i,
            disparity: disp,
            depth: d,
        },
        &[SourceView {
            image: i,
            depth: d,
            transform: tr,
        }],
        &k,
        &LossWeights::default(),
        None,
    )
    .unwrap();
    let (total, p, s, g) = terms.values(&tape);
    assert!(p < 1e-10 && g < 1e-12 && s == 0.0 && total < 1e-10, "{p} {s} {g}");
}
