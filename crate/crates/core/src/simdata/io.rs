//! On-disk dataset format.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<sequence>/manifest.json
//! <root>/<sequence>/frames/%06d.png      8-bit RGB
//! <root>/<sequence>/depth/%06d.png       16-bit gray, value * depth_scale
//! <root>/<sequence>/poses.csv            frame,tx,ty,tz,roll,pitch,yaw
//! <root>/<sequence>/clean_poses.csv      same columns, noise-free path
//! <root>/<sequence>/vibration.csv        time_s,c0..c5 (raw)
//! ```
//!
//! Every file is listed in its sequence manifest with a SHA-256 digest, and
//! every sequence manifest in the root manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetConfig, Sequence, VibrationProfile, VibrationTrack, FRAME_RATE};
use crate::diffnum::Array;
use crate::geometry::{Intrinsics, Pose6};
use crate::vibration::{CHANNELS, RATE};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const VIBRATION: &str = "vibration.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub name: String,
    pub frames: usize,
    /// SHA-256 of the sequence manifest.
    pub manifest_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub frame_rate: f64,
    pub vibration_rate: f64,
    pub max_abs: [f64; CHANNELS],
    pub intrinsics: Intrinsics,
    pub config: DatasetConfig,
    pub sequences: Vec<SequenceEntry>,
    /// Snippets lost at sequence edges for lack of vibration coverage.
    pub dropped_snippets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub version: u32,
    pub name: String,
    pub frames: usize,
    /// Time of frame 0 in seconds.
    pub start_time: f64,
    pub depth_scale: f64,
    pub scene_seed: u64,
    pub level: u8,
    pub profile: VibrationProfile,
    /// Relative path to SHA-256 hex digest.
    pub files: BTreeMap<String, String>,
}

pub(crate) fn quantize_depth_value(d: f64, scale: f64) -> u16 {
    if scale > 0.0 {
        (d / scale).round().clamp(0.0, 65535.0) as u16
    } else {
        0
    }
}

pub(crate) fn dequantize_depth(q: u16, scale: f64) -> f64 {
    f64::from(q) * scale
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn png_bytes<P, C>(img: &ImageBuffer<P, C>) -> Result<Vec<u8>>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn encode_rgb(frame: &Array) -> Result<Vec<u8>> {
    let s = frame.shape();
    let (h, w) = (s[1], s[2]);
    let d = frame.data();
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|c| (d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    png_bytes(&img)
}

fn encode_depth(depth: &Array, scale: f64) -> Result<Vec<u8>> {
    let s = depth.shape();
    let (h, w) = (s[1], s[2]);
    let d = depth.data();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([quantize_depth_value(d[y as usize * w + x as usize], scale)])
    });
    png_bytes(&img)
}

fn decode_rgb(bytes: &[u8], w: usize, h: usize, what: &str) -> Result<Array> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    if img.dimensions() != (w as u32, h as u32) {
        return Err(Error::Dataset(format!("{what}: expected {w}x{h}, got {:?}", img.dimensions())));
    }
    let raw = img.into_raw();
    Ok(Array::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        f64::from(raw[p * 3 + c]) / 255.0
    }))
}

fn decode_depth(bytes: &[u8], w: usize, h: usize, scale: f64, what: &str) -> Result<Array> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_luma16();
    if img.dimensions() != (w as u32, h as u32) {
        return Err(Error::Dataset(format!("{what}: expected {w}x{h}, got {:?}", img.dimensions())));
    }
    let raw = img.into_raw();
    Ok(Array::from_fn(&[1, h, w], |i| dequantize_depth(raw[i], scale)))
}

fn poses_csv(poses: &[Pose6]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["frame", "tx", "ty", "tz", "roll", "pitch", "yaw"])?;
    for (i, p) in poses.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(p.to_array().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Dataset(format!("csv buffer: {e}")))
}

fn vibration_csv(track: &VibrationTrack) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time_s".to_string()];
    header.extend((0..CHANNELS).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    let n = track.len();
    let d = track.samples.data();
    for j in 0..n {
        let mut row = vec![track.time(j).to_string()];
        row.extend((0..CHANNELS).map(|c| d[c * n + j].to_string()));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Dataset(format!("csv buffer: {e}")))
}

fn parse_rows(bytes: &[u8], width: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Dataset(format!("{what}: row with {} columns, expected {width}", rec.len())));
        }
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Dataset(format!("{what}: bad number `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn parse_poses(bytes: &[u8], what: &str) -> Result<Vec<Pose6>> {
    parse_rows(bytes, 7, what)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r[0] != i as f64 {
                return Err(Error::Dataset(format!("{what}: frame column out of order at row {i}")));
            }
            Ok(Pose6::from_array([r[1], r[2], r[3], r[4], r[5], r[6]]))
        })
        .collect()
}

fn parse_vibration(bytes: &[u8], what: &str) -> Result<VibrationTrack> {
    let rows = parse_rows(bytes, CHANNELS + 1, what)?;
    let n = rows.len();
    if n == 0 {
        return Err(Error::Dataset(format!("{what}: no samples")));
    }
    let samples = Array::from_fn(&[CHANNELS, n], |i| rows[i % n][1 + i / n]);
    let track = VibrationTrack {
        start_time: rows[0][0],
        samples,
    };
    for (j, r) in rows.iter().enumerate() {
        if (track.time(j) - r[0]).abs() > 1e-9 {
            return Err(Error::Dataset(format!("{what}: sample {j} is not on the {RATE} Hz grid")));
        }
    }
    Ok(track)
}

/// Writes `dataset` under `root`, creating directories as needed.
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let k = &dataset.intrinsics;
    let mut entries = Vec::new();
    for seq in &dataset.sequences {
        let dir = root.join(&seq.name);
        for sub in ["frames", "depth"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut files = BTreeMap::new();
        let mut put = |rel: String, bytes: Vec<u8>| -> Result<()> {
            write_file(&dir.join(&rel), &bytes)?;
            files.insert(rel, sha256_hex(&bytes));
            Ok(())
        };
        for (i, (f, d)) in seq.frames.iter().zip(&seq.depths).enumerate() {
            if f.shape() != [3, k.height, k.width] || d.shape() != [1, k.height, k.width] {
                return Err(Error::Dataset(format!("{}: frame {i} does not match the intrinsics", seq.name)));
            }
            put(format!("frames/{i:06}.png"), encode_rgb(f)?)?;
            put(format!("depth/{i:06}.png"), encode_depth(d, seq.depth_scale)?)?;
        }
        put("poses.csv".into(), poses_csv(&seq.poses)?)?;
        put("clean_poses.csv".into(), poses_csv(&seq.clean_poses)?)?;
        put(VIBRATION.into(), vibration_csv(&seq.vibration)?)?;
        let manifest = SequenceManifest {
            version: FORMAT_VERSION,
            name: seq.name.clone(),
            frames: seq.len(),
            start_time: seq.times.first().copied().unwrap_or(0.0),
            depth_scale: seq.depth_scale,
            scene_seed: seq.scene_seed,
            level: seq.level,
            profile: seq.profile,
            files,
        };
        let bytes = serde_json::to_vec_pretty(&manifest)?;
        write_file(&dir.join(MANIFEST), &bytes)?;
        entries.push(SequenceEntry {
            name: seq.name.clone(),
            frames: seq.len(),
            manifest_sha256: sha256_hex(&bytes),
        });
    }
    let (_, dropped) = dataset.snippets()?;
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        frame_rate: FRAME_RATE,
        vibration_rate: RATE,
        max_abs: dataset.max_abs,
        intrinsics: *k,
        config: dataset.config.clone(),
        sequences: entries,
        dropped_snippets: dropped,
    };
    write_file(&root.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn checked(dir: &Path, rel: &str, files: &BTreeMap<String, String>, seq: &str) -> Result<Vec<u8>> {
    let expected = files
        .get(rel)
        .ok_or_else(|| Error::Dataset(format!("sequence {seq}: {rel} is not listed in its manifest")))?;
    let path = dir.join(rel);
    if !path.exists() {
        return Err(Error::Dataset(format!("sequence {seq}: missing {rel}")));
    }
    let bytes = read_file(&path)?;
    let actual = sha256_hex(&bytes);
    if &actual != expected {
        return Err(Error::Checksum {
            path,
            expected: expected.clone(),
            actual,
        });
    }
    Ok(bytes)
}

fn read_sequence(root: &Path, entry: &SequenceEntry, k: &Intrinsics) -> Result<Sequence> {
    let dir = root.join(&entry.name);
    let path = dir.join(MANIFEST);
    let bytes = read_file(&path)?;
    let actual = sha256_hex(&bytes);
    if actual != entry.manifest_sha256 {
        return Err(Error::Checksum {
            path,
            expected: entry.manifest_sha256.clone(),
            actual,
        });
    }
    let m: SequenceManifest = serde_json::from_slice(&bytes)?;
    if m.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: m.version,
            expected: FORMAT_VERSION,
        });
    }
    let name = &m.name;
    if *name != entry.name || m.frames != entry.frames {
        return Err(Error::Dataset(format!(
            "sequence {}: manifest says {name} with {} frames, root manifest {} frames",
            entry.name, m.frames, entry.frames
        )));
    }
    let on_disk = |sub: &str| -> Result<usize> {
        let p = dir.join(sub);
        Ok(fs::read_dir(&p).map_err(|e| Error::io(&p, e))?.count())
    };
    let (n_frames, n_depth) = (on_disk("frames")?, on_disk("depth")?);
    if n_frames != m.frames || n_depth != m.frames {
        return Err(Error::Dataset(format!(
            "sequence {name}: manifest lists {} frames, found {n_frames} images and {n_depth} depth maps",
            m.frames
        )));
    }
    if !dir.join(VIBRATION).exists() {
        return Err(Error::Dataset(format!("sequence {name}: missing {VIBRATION}")));
    }
    let vibration = parse_vibration(&checked(&dir, VIBRATION, &m.files, name)?, &format!("{name}/{VIBRATION}"))?;
    let poses = parse_poses(&checked(&dir, "poses.csv", &m.files, name)?, &format!("{name}/poses.csv"))?;
    let clean_poses = parse_poses(
        &checked(&dir, "clean_poses.csv", &m.files, name)?,
        &format!("{name}/clean_poses.csv"),
    )?;
    if poses.len() != m.frames || clean_poses.len() != m.frames {
        return Err(Error::Dataset(format!(
            "sequence {name}: {} poses for {} frames",
            poses.len(),
            m.frames
        )));
    }
    let mut frames = Vec::with_capacity(m.frames);
    let mut depths = Vec::with_capacity(m.frames);
    for i in 0..m.frames {
        let rel = format!("frames/{i:06}.png");
        frames.push(decode_rgb(&checked(&dir, &rel, &m.files, name)?, k.width, k.height, &rel)?);
        let rel = format!("depth/{i:06}.png");
        depths.push(decode_depth(
            &checked(&dir, &rel, &m.files, name)?,
            k.width,
            k.height,
            m.depth_scale,
            &rel,
        )?);
    }
    Ok(Sequence {
        name: m.name.clone(),
        times: (0..m.frames).map(|i| m.start_time + i as f64 / FRAME_RATE).collect(),
        frames,
        depths,
        poses,
        clean_poses,
        vibration,
        depth_scale: m.depth_scale,
        scene_seed: m.scene_seed,
        level: m.level,
        profile: m.profile,
    })
}

/// Loads and verifies a dataset written by [`write_dataset`].
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let m: DatasetManifest = serde_json::from_slice(&read_file(&root.join(MANIFEST))?)?;
    if m.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: m.version,
            expected: FORMAT_VERSION,
        });
    }
    if m.frame_rate != FRAME_RATE || m.vibration_rate != RATE {
        return Err(Error::Dataset(format!(
            "rates {} / {} Hz differ from {FRAME_RATE} / {RATE}",
            m.frame_rate, m.vibration_rate
        )));
    }
    m.intrinsics.validate()?;
    let sequences = m
        .sequences
        .iter()
        .map(|e| read_sequence(root, e, &m.intrinsics))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: m.config,
        intrinsics: m.intrinsics,
        sequences,
        max_abs: m.max_abs,
    })
}
