//! Renders one frame of a procedural tube and writes the image and a
//! depth visualisation as PNG.
//!
//! Usage: `cargo run --release --example render_tube [OUT_DIR]`

use std::path::PathBuf;

use v2sfm::diffnum::Array;
use v2sfm::geometry::{Intrinsics, D_MAX};
use v2sfm::simdata::{generate_scene, generate_trajectory, render_frame, SceneConfig, TrajectoryConfig, VibrationProfile};

fn save_rgb(img: &Array, path: &std::path::Path) -> Result<(), Box<dyn std::error::Error>> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let buf = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| (img.data()[(c * h + y as usize) * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([at(0), at(1), at(2)])
    });
    buf.save(path)?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("v2sfm_render"));
    std::fs::create_dir_all(&out)?;

    let scene = generate_scene(3, &SceneConfig::default())?;
    let traj = generate_trajectory(&scene, 10, 3, VibrationProfile::Peristalsis, 5, &TrajectoryConfig::default())?;
    let k = Intrinsics::centered(128, 128);
    let frame = render_frame(&scene, &traj.noisy[5], &k)?;

    let d = frame.depth.data();
    let near = d.iter().copied().fold(f64::INFINITY, f64::min);
    let far = d.iter().filter(|&&v| v < D_MAX).count();
    println!("depth range [{near:.3}, {:.3}], {far} of {} pixels before the far plane", frame.depth.max_abs(), d.len());

    save_rgb(&frame.image, &out.join("frame.png"))?;
    let vis = Array::from_fn(&[3, k.height, k.width], |i| 1.0 - d[i % d.len()] / D_MAX);
    save_rgb(&vis, &out.join("depth.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
