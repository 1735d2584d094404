//! Command-line front end: dataset generation, training, evaluation,
//! sweeps, gradient checks and plots.
//!
//! Exit codes: 0 on success, 2 for validation errors, 3 for numerical
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use v2sfm::harness::eval::integrate_trajectory;
use v2sfm::harness::{
    evaluate, gradcheck_full, plot_report, sweep, train, trajectory_overlay, Predictor, SweepKind, SweepReport, TrainConfig,
};
use v2sfm::metrics::{EvalPolicy, MetricReport};
use v2sfm::networks::checkpoint;
use v2sfm::simdata::{generate_dataset, read_dataset, write_dataset, CorruptionSpec, DatasetConfig, VibrationProfile};
use v2sfm::{Error, Result};

/// Tolerance on the gradient check's maximum relative error.
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "v2sfm", version, about = "Depth and ego-motion learning with vision-vibration fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset, one directory per vibration level.
    Generate {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Comma-separated vibration levels (0-5).
        #[arg(long, value_delimiter = ',', default_value = "3")]
        levels: Vec<u8>,
        #[arg(long, default_value = "peristalsis")]
        profile: VibrationProfile,
        #[arg(long, default_value_t = 22)]
        frames: usize,
        #[arg(long, default_value_t = 10)]
        sequences: usize,
        /// Square frame size in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run single-threaded. Training never spawns threads, so this only
        /// documents the intent.
        #[arg(long)]
        deterministic: bool,
        /// Output directory; overrides the config's checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset's validation split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `kind:severity`, or `none`.
        #[arg(long, default_value = "none")]
        corruption: String,
        #[arg(long, value_enum, default_value = "on")]
        median_scaling: Switch,
        /// Seed of the corruption noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation grid.
    Sweep {
        #[arg(long)]
        kind: SweepKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the training objective's gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Render SVG charts of a metric or sweep report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn parse_corruption(s: &str) -> Result<Option<CorruptionSpec>> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

fn save_report(report: &MetricReport, dir: &Path) -> Result<()> {
    write(&dir.join("report.json"), &report.to_json()?)?;
    write(&dir.join("report.csv"), &report.to_csv()?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate {
            seed,
            levels,
            profile,
            frames,
            sequences,
            size,
            out,
        } => {
            for &level in &levels {
                let cfg = DatasetConfig {
                    seed,
                    sequences,
                    frames,
                    width: size,
                    height: size,
                    level,
                    profile,
                    ..DatasetConfig::toy()
                };
                let dir = if levels.len() == 1 {
                    out.clone()
                } else {
                    out.join(format!("level_{level}"))
                };
                let manifest = write_dataset(&generate_dataset(&cfg)?, &dir)?;
                println!(
                    "{}: {} sequences, {} snippets dropped",
                    dir.display(),
                    manifest.sequences.len(),
                    manifest.dropped_snippets
                );
            }
        }
        Command::Train {
            config,
            deterministic,
            out,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if out.is_some() {
                cfg.checkpoint_dir = out;
            }
            if cfg.checkpoint_dir.is_none() {
                return Err(Error::Config("no output directory: pass --out or set checkpoint_dir".into()));
            }
            log::info!("training with deterministic={deterministic}");
            let outcome = train(&cfg)?;
            let log = &outcome.log;
            println!(
                "initial loss {:.6}, final loss {:.6}, val abs_rel {:.4} (constant baseline {:.4})",
                log.initial_loss.total,
                log.final_loss.map_or(f64::NAN, |l| l.total),
                log.final_val_depth().map_or(f64::NAN, |d| d.abs_rel),
                log.baseline_depth.abs_rel
            );
        }
        Command::Eval {
            ckpt,
            data,
            corruption,
            median_scaling,
            seed,
            out,
        } => {
            let policy = EvalPolicy {
                median_scaling: matches!(median_scaling, Switch::On),
                ..EvalPolicy::default()
            };
            let (model, _) = checkpoint::load(&ckpt)?;
            let ds = read_dataset(&data)?;
            let report = evaluate(Predictor::Model(&model), &ds, parse_corruption(&corruption)?, seed, &policy)?;
            print!("{}", report.to_csv()?);
            if let Some(dir) = out {
                save_report(&report, &dir)?;
                let (_, val) = ds.split();
                if let Some(seq) = val.first().map(|&i| &ds.sequences[i]) {
                    let pred = integrate_trajectory(&model, &seq.frames, &seq.poses[0])?;
                    let svg = trajectory_overlay(&format!("Trajectory {}", seq.name), &seq.poses, &pred)?;
                    write(&dir.join("trajectory.svg"), &svg)?;
                }
            }
        }
        Command::Sweep { kind, config, out } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(dir) = &out {
                cfg.checkpoint_dir = Some(dir.join("runs"));
            }
            let result = sweep(kind, &cfg)?;
            print!("{}", result.report.to_csv()?);
            for f in &result.failures {
                eprintln!("failed cell {:?}: {}", f.condition, f.error);
            }
            if let Some(dir) = out {
                write(&dir.join("sweep.json"), &result.to_json()?)?;
                save_report(&result.report, &dir)?;
                plot_report(&result.report, &dir)?;
            }
        }
        Command::Gradcheck { size, batch, seed } => {
            let r = gradcheck_full(size, batch, seed)?;
            let ok = r.passes(GRADCHECK_TOL);
            println!(
                "max relative error {:.3e} over {} coordinates, {} non-smooth excluded: {}",
                r.max_rel_error,
                r.checked,
                r.excluded.len(),
                if ok { "ok" } else { "FAILED" }
            );
            if !ok {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Plot { report, out } => {
            let text = read(&report)?;
            let report = match serde_json::from_str::<SweepReport>(&text) {
                Ok(s) => s.report,
                Err(_) => serde_json::from_str::<MetricReport>(&text)?,
            };
            for p in plot_report(&report, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
