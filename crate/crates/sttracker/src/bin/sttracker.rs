//! Command-line front end: synthetic data generation, tracking, scoring,
//! toy training, gradient checks, and golden-hash maintenance.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sttracker::eval::{evaluate_categories, write_category_report, write_curves, SequenceEval};
use sttracker::geometry::{read_boxes, write_boxes};
use sttracker::golden::{compute_goldens, parse_goldens};
use sttracker::harness::{generate_sequence, train_toy, RunConfig};
use sttracker::head::{head_forward, loss};
use sttracker::numerics::{finite_diff_check, ParameterSet};
use sttracker::pillars::{read_cloud, write_cloud};
use sttracker::tracker::run_sequence;

#[derive(Parser)]
#[command(name = "sttracker", about = "Spatio-temporal 3D single object tracking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence: per-frame cloud files plus gt boxes.
    Synth {
        /// Run config file (key = value); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Track through a sequence directory and write predicted boxes.
    Track {
        /// Directory produced by `synth` (frame_NNNN.bin + gt.txt).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint from `train-toy`; a fresh seeded init is used if absent.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Seed for the fresh init when no checkpoint is given.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output box file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted boxes against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-threshold curve CSV.
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Category label for the report rows.
        #[arg(long, default_value = "all")]
        category: String,
    },
    /// Train on freshly generated scenes and save a checkpoint.
    TrainToy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Optional loss-trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of the full forward pass at a small config.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Coordinates probed per parameter.
        #[arg(long, default_value_t = 3)]
        max_coords: usize,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Regenerate or verify the golden hash file.
    Goldens {
        /// Write mode: produce the golden file at this path.
        #[arg(long, conflicts_with = "check")]
        out: Option<PathBuf>,
        /// Check mode: recompute and compare against this file.
        #[arg(long)]
        check: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, String> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(RunConfig::default()),
    }
}

fn cloud_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("frame_{frame:04}.bin"))
}

fn load_sequence_dir(dir: &Path) -> Result<(Vec<Vec<(f64, f64, f64)>>, Vec<sttracker::geometry::Box3D>), String> {
    let gt = read_boxes(&dir.join("gt.txt")).map_err(|e| e.to_string())?;
    let mut clouds = Vec::with_capacity(gt.len());
    for f in 0..gt.len() {
        clouds.push(read_cloud(&cloud_path(dir, f)).map_err(|e| e.to_string())?);
    }
    Ok((clouds, gt))
}

fn run(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::Synth { config, out } => {
            let cfg = load_config(&config)?;
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let seq = generate_sequence(&cfg.scene);
            for (f, cloud) in seq.clouds.iter().enumerate() {
                write_cloud(&cloud_path(&out, f), cloud).map_err(|e| e.to_string())?;
            }
            write_boxes(&out.join("gt.txt"), &seq.gt).map_err(|e| e.to_string())?;
            println!(
                "wrote {} frames ({} boxes) to {}",
                seq.clouds.len(),
                seq.gt.len(),
                out.display()
            );
            Ok(())
        }
        Command::Track { data, config, params, seed, out } => {
            let cfg = load_config(&config)?;
            let (clouds, gt) = load_sequence_dir(&data)?;
            let ps = match params {
                Some(p) => ParameterSet::load(&p).map_err(|e| e.to_string())?,
                None => {
                    let mut ps = ParameterSet::new(seed);
                    cfg.tracker.init_params(&mut ps).map_err(|e| e.to_string())?;
                    ps
                }
            };
            let state =
                run_sequence(&clouds, gt[0], &ps, &cfg.tracker).map_err(|e| e.to_string())?;
            write_boxes(&out, &state.boxes).map_err(|e| e.to_string())?;
            let coasted = state.coasted.iter().filter(|&&c| c).count();
            println!("tracked {} frames ({} coasted) -> {}", state.boxes.len(), coasted, out.display());
            Ok(())
        }
        Command::Eval { pred, gt, out, curves, category } => {
            let preds = read_boxes(&pred).map_err(|e| e.to_string())?;
            let gts = read_boxes(&gt).map_err(|e| e.to_string())?;
            let seq = SequenceEval::from_boxes(&preds, &gts).map_err(|e| e.to_string())?;
            if let Some(cp) = curves {
                write_curves(&cp, &seq.ious, &seq.dists).map_err(|e| e.to_string())?;
            }
            let reports = evaluate_categories(&[(category, seq)]);
            write_category_report(&out, &reports).map_err(|e| e.to_string())?;
            for r in &reports {
                println!(
                    "{}: frames {} success {:.2} precision {:.2} (bev {:.2}/{:.2})",
                    r.category, r.frames, r.success_3d, r.precision_3d, r.success_bev, r.precision_bev
                );
            }
            Ok(())
        }
        Command::TrainToy { config, out, trace, seed } => {
            let cfg = load_config(&config)?;
            let mut ps = ParameterSet::new(seed);
            cfg.tracker.init_params(&mut ps).map_err(|e| e.to_string())?;
            let losses =
                train_toy(&mut ps, &cfg.tracker, &cfg.scene, &cfg.train).map_err(|e| e.to_string())?;
            ps.save(&out).map_err(|e| e.to_string())?;
            if let Some(tp) = trace {
                let body: String =
                    losses.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")).collect();
                std::fs::write(&tp, format!("step,loss\n{body}")).map_err(|e| e.to_string())?;
            }
            if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
                println!("trained {} steps: loss {first:.4} -> {last:.4}", losses.len());
            }
            println!("checkpoint saved to {}", out.display());
            Ok(())
        }
        Command::Gradcheck { config, max_coords, epsilon, tolerance } => {
            let mut cfg = load_config(&config)?;
            if config.is_none() {
                // shrink the default topology so the check stays fast
                cfg = sttracker::harness::parse_config(
                    "window.cells = 8\nwindow.pitch = 0.25\nwindow.b = 2\n\
                     stlm.patch_r = 2\nstlm.heads = 2\nstlm.c1 = 8\nstlm.c3 = 8\nstlm.c4 = 8\ncp = 8\n\
                     pattern = 0,1\nframes = 4\nobject_points = 40\n",
                )
                .map_err(|e| e.to_string())?;
            }
            let mut ps = ParameterSet::new(17);
            cfg.tracker.init_params(&mut ps).map_err(|e| e.to_string())?;
            let seq = generate_sequence(&cfg.scene);
            let tracker = cfg.tracker.clone();
            let f = move |p: &ParameterSet| {
                gradcheck_loss(p, &tracker, &seq.clouds, &seq.gt)
            };
            let report = finite_diff_check(f, &ps, epsilon, tolerance, max_coords)
                .map_err(|e| e.to_string())?;
            for e in &report.entries {
                println!(
                    "{} {} (max rel err {:.3e}, {} coords)",
                    if e.pass { "ok  " } else { "FAIL" },
                    e.name,
                    e.max_rel_error,
                    e.coords_checked
                );
            }
            if report.pass() {
                println!("gradcheck passed: worst {:.3e} < {tolerance:.0e}", report.worst());
                Ok(())
            } else {
                Err(format!("gradcheck failed: worst {:.3e} >= {tolerance:.0e}", report.worst()))
            }
        }
        Command::Goldens { out, check } => {
            let computed = compute_goldens().map_err(|e| e.to_string())?;
            match (out, check) {
                (Some(path), None) => {
                    let mut body = String::from("# label sha256(values as {:.12e})\n");
                    for (label, hash) in &computed {
                        body.push_str(&format!("{label} {hash}\n"));
                    }
                    std::fs::write(&path, body).map_err(|e| e.to_string())?;
                    println!("wrote {} goldens to {}", computed.len(), path.display());
                    Ok(())
                }
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
                    let stored = parse_goldens(&text);
                    let mut failures = 0;
                    for (label, hash) in &computed {
                        match stored.iter().find(|(l, _)| l == label) {
                            Some((_, h)) if h == hash => println!("ok   {label}"),
                            Some(_) => {
                                println!("DIFF {label}");
                                failures += 1;
                            }
                            None => {
                                println!("MISS {label}");
                                failures += 1;
                            }
                        }
                    }
                    if failures == 0 {
                        println!("all {} goldens match", computed.len());
                        Ok(())
                    } else {
                        Err(format!("{failures} golden(s) differ"))
                    }
                }
                _ => Err("goldens needs exactly one of --out or --check".to_string()),
            }
        }
    }
}

/// Scalar training loss at frame 1 of the given sequence; shared by the
/// gradcheck subcommand so every parameter in the stack is exercised.
fn gradcheck_loss(
    params: &ParameterSet,
    cfg: &sttracker::tracker::TrackerConfig,
    clouds: &[Vec<(f64, f64, f64)>],
    gt: &[sttracker::geometry::Box3D],
) -> sttracker::numerics::Result<sttracker::numerics::Tensor> {
    use sttracker::geometry::to_local;
    use sttracker::head::assign_targets;
    use sttracker::pillars::{backbone, dynamic_pillarize, stamp_time};
    use sttracker::stlm::stlm_forward;

    let t = 1;
    let reference = gt[t - 1];
    let mut features = Vec::new();
    let mut past = Vec::new();
    for &age in cfg.pattern.ages() {
        let f = t.saturating_sub(age);
        let local = to_local(&stamp_time(&clouds[f], age as f64), &reference);
        let pillar = dynamic_pillarize(&local, &cfg.grid, params)?;
        features.push(backbone(&pillar, &cfg.grid, params, age as f64)?);
        if age > 0 {
            past.push(gt[f].translated(-reference.x, -reference.y, -reference.z));
        }
    }
    let fused = stlm_forward(&features, &past, params, &cfg.stlm, &cfg.grid)?;
    let out = head_forward(&fused, params)?;
    let target = gt[t].translated(-reference.x, -reference.y, -reference.z);
    let targets = assign_targets(&target, &cfg.grid, &cfg.head);
    let (total, _) = loss(&out, &targets, &cfg.head)?;
    Ok(total)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
