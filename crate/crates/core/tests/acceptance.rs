//! Acceptance run: one pass/fail line per criterion.
//!
//! Set `V2SFM_ACCEPTANCE=1,3,4` to run a subset. Artifacts (checkpoints,
//! logs, reports) go under the cargo target tmpdir.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use v2sfm::diffnum::{Array, Tape};
use v2sfm::fusion::{wiener_modulate, FusionMode};
use v2sfm::geometry::{warp_coords, warp_coords_diff, DepthMap, DiffTransform, Pose6, TransformSE3, D_MAX, D_MIN};
use v2sfm::harness::train::{CHECKPOINT_FILE, LOG_FILE};
use v2sfm::harness::{gradcheck_full, robustness, train_on, TrainConfig};
use v2sfm::metrics::{depth_metrics, egomotion_metrics, EvalPolicy};
use v2sfm::networks::checkpoint;
use v2sfm::simdata::{corrupt, generate_dataset, psnr, reprojection_mse, CorruptionKind, CorruptionSpec, Dataset, DatasetConfig};
use v2sfm::vibration::SNR_CAP;

type Check = Result<(bool, String), String>;

struct Ctx {
    dir: PathBuf,
    toy: Option<Dataset>,
    pretrained: Option<PathBuf>,
}

impl Ctx {
    fn toy(&mut self) -> &Dataset {
        self.toy
            .get_or_insert_with(|| generate_dataset(&DatasetConfig::toy()).expect("toy dataset"))
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// 1. gradient integrity

fn gradient_integrity(_: &mut Ctx) -> Check {
    let r = gradcheck_full(32, 2, 1).map_err(err)?;
    let bad = r.excluded.iter().filter(|e| !e.within_band).count();
    Ok((
        r.passes(1e-4),
        format!(
            "max rel error {:.3e} over {} coordinates, {} non-smooth ({} outside one-sided band)",
            r.max_rel_error,
            r.checked,
            r.excluded.len(),
            bad
        ),
    ))
}

// ---------------------------------------------------------------------------
// 2. Wiener oracle

fn xorshift(shape: &[usize], seed: u64) -> Array {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    Array::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

fn delta(shape: &[usize]) -> Array {
    let hw = shape[1] * shape[2];
    Array::from_fn(shape, |i| if i % hw == 0 { 1.0 } else { 0.0 })
}

/// Complex-arithmetic Wiener deconvolution `F conj(H) / (|H|^2 + 1/snr)`
/// per channel, using an independent FFT.
fn reference_wiener(f: &Array, k: &Array, snr: f64) -> Vec<f64> {
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let mut planner = FftPlanner::<f64>::new();
    let mut fft2 = |data: &mut [Complex<f64>], inverse: bool| {
        let (pr, pc) = if inverse {
            (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
        } else {
            (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
        };
        for row in data.chunks_mut(w) {
            pr.process(row);
        }
        for col in 0..w {
            let mut v: Vec<_> = (0..h).map(|r| data[r * w + col]).collect();
            pc.process(&mut v);
            for r in 0..h {
                data[r * w + col] = v[r];
            }
        }
    };
    let mut out = Vec::with_capacity(f.len());
    for ch in 0..c {
        let plane = |a: &Array| -> Vec<Complex<f64>> {
            a.data()[ch * h * w..(ch + 1) * h * w].iter().map(|&v| Complex::new(v, 0.0)).collect()
        };
        let (mut fs, mut ks) = (plane(f), plane(k));
        fft2(&mut fs, false);
        fft2(&mut ks, false);
        let mut g: Vec<Complex<f64>> =
            fs.iter().zip(&ks).map(|(fv, hv)| fv * hv.conj() / (hv.norm_sqr() + 1.0 / snr)).collect();
        fft2(&mut g, true);
        out.extend(g.iter().map(|z| z.re / (h * w) as f64));
    }
    out
}

fn wiener_oracle(_: &mut Ctx) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..50u64 {
        let shape = [1 + (i % 3) as usize, 4 << (i % 3), 8 >> (i % 2)];
        let f = xorshift(&shape, 100 + i);
        let noise = xorshift(&shape, 200 + i);
        let d = delta(&shape);
        let k = Array::from_fn(&shape, |j| d.data()[j] + 0.3 * noise.data()[j]);
        let snr = 10f64.powf(-3.0 + 9.0 * (i as f64 / 49.0));
        let ours = wiener_modulate(&f, &k, snr).map_err(err)?;
        let theirs = reference_wiener(&f, &k, snr);
        for (a, b) in ours.data().iter().zip(&theirs) {
            worst = worst.max((a - b).abs());
        }
    }
    let f = xorshift(&[3, 16, 16], 1);
    let out = wiener_modulate(&f, &delta(&[3, 16, 16]), SNR_CAP).map_err(err)?;
    let ident = out.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((
        worst < 1e-10 && ident < 1e-5,
        format!("max abs deviation {worst:.2e} on 50 triples; identity limit {ident:.2e}"),
    ))
}

// ---------------------------------------------------------------------------
// 3. geometry consistency

fn geometry_consistency(ctx: &mut Ctx) -> Check {
    let ds = ctx.toy();
    let (snippets, _) = ds.snippets().map_err(err)?;
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for s in snippets.iter().take(100) {
        let (frames, depths, poses) = (ds.snippet_frames(s), ds.snippet_depths(s), ds.snippet_poses(s));
        for src in [0, 2] {
            let (mse, _) =
                reprojection_mse(frames[1], depths[1], frames[src], &poses[1], &poses[src], &ds.intrinsics).map_err(err)?;
            worst = worst.max(mse);
            n += 1;
        }
    }

    let k = &ds.intrinsics;
    let (h, w) = (k.height, k.width);
    let d = ds.sequences[0].depths[0].clone();
    let in_range = d.map(|v| if (D_MIN..=D_MAX).contains(&v) { 1.0 } else { 0.0 }).reshape(&[h, w]).map_err(err)?;
    let plain = DepthMap::new(d.clone().reshape(&[h, w]).map_err(err)?, Some(in_range), D_MIN, D_MAX).map_err(err)?;
    let wp = warp_coords(&plain, &TransformSE3::identity(), k).map_err(err)?;
    let mut tape = Tape::new();
    let dv = tape.constant(d).map_err(err)?;
    let tr = DiffTransform::constant(&mut tape, &TransformSE3::identity()).map_err(err)?;
    let wd = warp_coords_diff(&mut tape, dv, &tr, k).map_err(err)?;
    let cd = tape.value(wd.coords);
    let exact = (0..h * w).all(|i| {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        wp.coords.data()[i] == x && wp.coords.data()[h * w + i] == y && cd.data()[i] == x && cd.data()[h * w + i] == y
    });
    Ok((
        worst < 2e-3 && n == 200 && exact,
        format!("max masked MSE {worst:.2e} over {n} pairings of 100 snippets; identity warp exact grid: {exact}"),
    ))
}

// ---------------------------------------------------------------------------
// 4. metric oracles

fn depth_oracle(gt: &[f64], pred: &[f64]) -> [f64; 6] {
    let n = gt.len() as f64;
    let mut out = [0.0; 6];
    let (mut sq, mut lg, mut hits) = (0.0, 0.0, 0usize);
    for i in 0..gt.len() {
        let (d, e) = (gt[i], pred[i]);
        out[0] += (d - e).abs() / n;
        out[1] += (d - e).abs() / d / n;
        out[2] += (d - e) * (d - e) / d / n;
        sq += (d - e) * (d - e);
        lg += (d.ln() - e.ln()) * (d.ln() - e.ln());
        if f64::max(d / e, e / d) < 1.25 {
            hits += 1;
        }
    }
    out[3] = (sq / n).sqrt();
    out[4] = (lg / n).sqrt();
    out[5] = 100.0 * hits as f64 / n;
    out
}

fn motion_oracle(gt: &[Pose6], pred: &[Pose6], floor: f64) -> [f64; 6] {
    let steps = gt.len() - 1;
    let mut out = [0.0; 6];
    for j in 0..steps {
        let (g0, g1, p0, p1) = (gt[j].to_array(), gt[j + 1].to_array(), pred[j].to_array(), pred[j + 1].to_array());
        for off in [0, 3] {
            let (mut sq, mut l1, mut rel) = (0.0, 0.0, 0.0);
            for c in off..off + 3 {
                let (g, p) = (g1[c] - g0[c], p1[c] - p0[c]);
                sq += (p - g) * (p - g);
                l1 += (p - g).abs();
                if g.abs() >= floor {
                    rel += (p - g).abs() / g.abs();
                }
            }
            out[off] += sq.sqrt();
            out[off + 1] += l1;
            out[off + 2] += rel;
        }
    }
    out.map(|v| v / steps as f64)
}

fn metric_oracles(_: &mut Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = EvalPolicy::unscaled();
    let rel = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max);
    let (mut dworst, mut mworst): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let n = rng.random_range(1..300);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let (ga, pa) = (Array::new(&[n], g.clone()).map_err(err)?, Array::new(&[n], p.clone()).map_err(err)?);
        let m = depth_metrics(&ga, &pa, None, &policy).map_err(err)?;
        dworst = dworst.max(rel(&m.to_array(), &depth_oracle(&g, &p)));

        let f = rng.random_range(2..30);
        let mut traj = || -> Vec<Pose6> {
            (0..f)
                .map(|_| Pose6::from_array(std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
                .collect()
        };
        let (gt, pr) = (traj(), traj());
        let m = egomotion_metrics(&gt, &pr, &policy).map_err(err)?;
        mworst = mworst.max(rel(&m.to_array(), &motion_oracle(&gt, &pr, policy.gt_floor)));
    }
    let gt = [0.0, 1.2, 2.0].map(|z| Pose6::new(0.0, 0.0, z, 0.0, 0.0, 0.0));
    let pr = [0.0, 1.0, 2.0].map(|z| Pose6::new(0.0, 0.0, z, 0.0, 0.0, 0.0));
    let ate = egomotion_metrics(&gt, &pr, &EvalPolicy::default()).map_err(err)?.ate;
    Ok((
        dworst <= 1e-12 && mworst <= 1e-12 && (ate - 0.2).abs() < 1e-12,
        format!("depth deviation {dworst:.1e}, motion deviation {mworst:.1e} on 1000 instances; 3-frame ATE {ate}"),
    ))
}

// ---------------------------------------------------------------------------
// 5. learning at desk scale

fn learning(ctx: &mut Ctx) -> Check {
    let dir = ctx.dir.join("learning");
    let cfg = TrainConfig {
        seed: 0,
        checkpoint_dir: Some(dir.clone()),
        ..TrainConfig::default()
    };
    let ds = ctx.toy().clone();
    let out = train_on(&cfg, &ds).map_err(err)?;
    ctx.pretrained = Some(dir.join(CHECKPOINT_FILE));
    let log = &out.log;
    let (init, fin) = (log.initial_loss.total, log.final_loss.map_or(f64::NAN, |l| l.total));
    let val = log.final_val_depth().map_or(f64::NAN, |d| d.abs_rel);
    let base = log.baseline_depth.abs_rel;
    Ok((
        fin <= 0.5 * init && val < base,
        format!(
            "{} snippets ({}/{}), {} epochs: loss {init:.5} -> {fin:.5} (ratio {:.3}); val AbsRel {val:.4} vs constant-depth {base:.4}",
            log.train_snippets + log.val_snippets,
            log.train_snippets,
            log.val_snippets,
            log.epochs.len(),
            fin / init
        ),
    ))
}

// ---------------------------------------------------------------------------
// 6. fusion benefit trend

fn median3(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn fusion_trend(ctx: &mut Ctx) -> Check {
    let mut table = Vec::new();
    for level in [1u8, 5] {
        let data = DatasetConfig {
            level,
            ..DatasetConfig::toy()
        };
        let ds = generate_dataset(&data).map_err(err)?;
        for fusion in [FusionMode::Fh, FusionMode::None] {
            let mut vals = Vec::new();
            for seed in 0..3u64 {
                let cfg = TrainConfig {
                    seed,
                    fusion,
                    data: data.clone(),
                    checkpoint_dir: Some(ctx.dir.join(format!("trend/{fusion}_level{level}_seed{seed}"))),
                    ..TrainConfig::default()
                };
                let out = train_on(&cfg, &ds).map_err(err)?;
                let v = out.log.final_val_depth().map_or(f64::NAN, |d| d.abs_rel);
                eprintln!("  trend cell level {level} {fusion} seed {seed}: val AbsRel {v:.4}");
                vals.push(v);
            }
            table.push((level, fusion, median3(vals)));
        }
    }
    let get = |l: u8, f: FusionMode| table.iter().find(|t| t.0 == l && t.1 == f).map(|t| t.2).unwrap();
    let (fh1, fh5, n1, n5) = (
        get(1, FusionMode::Fh),
        get(5, FusionMode::Fh),
        get(1, FusionMode::None),
        get(5, FusionMode::None),
    );
    Ok((
        fh5 <= n5 && fh5 >= fh1 && n5 >= n1,
        format!("median val AbsRel: level 1 fh {fh1:.4} none {n1:.4}; level 5 fh {fh5:.4} none {n5:.4}"),
    ))
}

// ---------------------------------------------------------------------------
// 7. robustness protocol

fn robustness_protocol(ctx: &mut Ctx) -> Check {
    let ckpt = match ctx.pretrained.clone() {
        Some(p) if p.exists() => p,
        _ => {
            // the learning criterion was skipped: train a short desk model
            let dir = ctx.dir.join("robustness");
            let cfg = TrainConfig {
                epochs: 5,
                checkpoint_dir: Some(dir.clone()),
                ..TrainConfig::default()
            };
            let ds = ctx.toy().clone();
            train_on(&cfg, &ds).map_err(err)?;
            dir.join(CHECKPOINT_FILE)
        }
    };
    let (model, _) = checkpoint::load(&ckpt).map_err(err)?;
    let ds = ctx.toy();
    let r = robustness(&model, ds, 0, &EvalPolicy::default());
    let kinds = CorruptionKind::ALL.iter().all(|k| {
        let sev: Vec<u8> = r
            .report
            .rows
            .iter()
            .filter(|row| row.condition.corruption.as_deref() == Some(k.as_str()))
            .filter_map(|row| row.condition.severity)
            .collect();
        sev == [1, 2, 3, 4, 5]
    });
    let finite = r
        .report
        .rows
        .iter()
        .all(|row| row.depth.to_array().iter().chain(row.motion.to_array().iter()).all(|v| v.is_finite()));

    let frames: Vec<&Array> = ds.sequences.iter().flat_map(|s| s.frames.iter()).take(100).collect();
    let mut non_monotone = Vec::new();
    for kind in CorruptionKind::ALL {
        let mean: Vec<f64> = (1..=5)
            .map(|sev| {
                let spec = CorruptionSpec::new(kind, sev).expect("valid severity");
                frames
                    .iter()
                    .enumerate()
                    .map(|(i, x)| psnr(x, &corrupt(x, spec, i as u64).expect("corruption")))
                    .sum::<f64>()
                    / frames.len() as f64
            })
            .collect();
        if !mean.windows(2).all(|w| w[1] <= w[0]) {
            non_monotone.push(format!("{kind} {mean:?}"));
        }
    }
    Ok((
        r.report.rows.len() == 60 && r.failures.is_empty() && kinds && finite && non_monotone.is_empty(),
        format!(
            "{} rows, {} failed cells, 5 severities per kind: {kinds}, finite: {finite}; PSNR non-increasing on {} frames{}",
            r.report.rows.len(),
            r.failures.len(),
            frames.len(),
            if non_monotone.is_empty() {
                String::new()
            } else {
                format!(" except {}", non_monotone.join("; "))
            }
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8. reproducibility

fn train_cli(config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_v2sfm"))
        .env("RUST_LOG", "warn")
        .stdout(std::process::Stdio::null())
        .args(["train", "--deterministic", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .map_err(err)?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("train exited with {status}"))
    }
}

fn reproducibility(ctx: &mut Ctx) -> Check {
    let dir = ctx.dir.join("repro");
    std::fs::create_dir_all(&dir).map_err(err)?;
    let cfg = TrainConfig {
        seed: 11,
        epochs: 2,
        data: DatasetConfig {
            sequences: 5,
            frames: 8,
            ..DatasetConfig::toy()
        },
        ..TrainConfig::default()
    };
    let config = dir.join("config.json");
    std::fs::write(&config, cfg.to_json().map_err(err)?).map_err(err)?;
    // both runs write to the same place: the logged config records the
    // output directory
    let (out, a, b) = (dir.join("run"), dir.join("a"), dir.join("b"));
    for d in [&a, &b] {
        let _ = std::fs::remove_dir_all(d);
        let _ = std::fs::remove_dir_all(&out);
        train_cli(&config, &out)?;
        std::fs::rename(&out, d).map_err(err)?;
    }
    let mut same = Vec::new();
    for f in [LOG_FILE, CHECKPOINT_FILE] {
        let (x, y) = (std::fs::read(a.join(f)).map_err(err)?, std::fs::read(b.join(f)).map_err(err)?);
        same.push((f, x.len(), x == y));
    }
    Ok((
        same.iter().all(|s| s.2),
        same.iter()
            .map(|(f, n, eq)| format!("{f} ({n} bytes) {}", if *eq { "identical" } else { "DIFFERS" }))
            .collect::<Vec<_>>()
            .join(", "),
    ))
}

// ---------------------------------------------------------------------------

type Criterion = (u32, &'static str, Duration, fn(&mut Ctx) -> Check);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "gradient integrity", Duration::from_secs(300), gradient_integrity),
        (2, "Wiener oracle equivalence", Duration::from_secs(60), wiener_oracle),
        (3, "geometry consistency", Duration::from_secs(120), geometry_consistency),
        (4, "metric oracle equivalence", Duration::from_secs(60), metric_oracles),
        (5, "learning at desk scale", Duration::from_secs(2 * 3600), learning),
        (6, "fusion benefit trend", Duration::from_secs(12 * 3600), fusion_trend),
        (7, "robustness protocol", Duration::from_secs(1800), robustness_protocol),
        (8, "reproducibility", Duration::from_secs(3600), reproducibility),
    ];
    let only: Option<Vec<u32>> = std::env::var("V2SFM_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut ctx = Ctx {
        dir: PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"),
        toy: None,
        pretrained: None,
    };
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match run(&mut ctx) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let took = start.elapsed();
        let in_budget = took <= budget;
        let pass = pass && in_budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id} {}: {name}: {detail} [{:.1} s of {} s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
