//! End-to-end: train the toy model on constant-velocity scenes, then track
//! a held-out sequence and score it.
//!
//! Run with: cargo run --example train_and_track
//! (takes roughly half a minute at the checked-in config)

use sttracker::eval::{evaluate_sequences, SequenceEval};
use sttracker::harness::{generate_sequence, train_toy, RunConfig, SceneSpec};
use sttracker::numerics::ParameterSet;
use sttracker::tracker::run_sequence;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg_path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy_cv.cfg");
    let cfg = RunConfig::load(&cfg_path)?;

    let mut ps = ParameterSet::new(3);
    cfg.tracker.init_params(&mut ps)?;
    let trace = train_toy(&mut ps, &cfg.tracker, &cfg.scene, &cfg.train)?;
    println!(
        "trained {} steps: loss {:.3} -> {:.3}",
        trace.len(),
        trace.first().unwrap(),
        trace.last().unwrap()
    );

    // held-out sequence: same generator, unseen seed
    let held = generate_sequence(&SceneSpec { seed: 999, ..cfg.scene.clone() });
    let state = run_sequence(&held.clouds, held.gt[0], &ps, &cfg.tracker)?;
    let coasted = state.coasted.iter().filter(|&&c| c).count();

    let seq = SequenceEval::from_boxes(&state.boxes, &held.gt)?;
    let summary = evaluate_sequences(&[seq]);
    println!(
        "held-out ({} frames, {} coasted): Success {:.2}  Precision {:.2}  (BEV {:.2}/{:.2})",
        summary.frames, coasted, summary.success, summary.precision,
        summary.bev_success, summary.bev_precision
    );
    Ok(())
}
