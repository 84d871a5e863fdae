//! Verify analytic gradients of the full forward pass (pillars, backbone,
//! attention, head, loss) against central finite differences.
//!
//! Run with: cargo run --example gradient_check

use sttracker::geometry::to_local;
use sttracker::harness::{generate_sequence, parse_config};
use sttracker::head::{assign_targets, head_forward, loss};
use sttracker::numerics::{finite_diff_check, ParameterSet, Result, Tensor};
use sttracker::pillars::{backbone, dynamic_pillarize, stamp_time};
use sttracker::stlm::stlm_forward;
use sttracker::tracker::TrackerConfig;

fn full_loss(
    params: &ParameterSet,
    cfg: &TrackerConfig,
    clouds: &[Vec<(f64, f64, f64)>],
    gt: &[sttracker::geometry::Box3D],
) -> Result<Tensor> {
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
    Ok(loss(&out, &targets, &cfg.head)?.0)
}

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(
        "window.cells = 8\nwindow.pitch = 0.25\nwindow.b = 2\ncp = 8\n\
         stlm.patch_r = 2\nstlm.heads = 2\nstlm.c1 = 8\nstlm.c3 = 8\nstlm.c4 = 8\n\
         pattern = 0,1\nframes = 4\nobject_points = 40\n",
    )?;
    let mut ps = ParameterSet::new(17);
    cfg.tracker.init_params(&mut ps)?;
    println!("{} parameter tensors", ps.names().count());

    let seq = generate_sequence(&cfg.scene);
    let tracker = cfg.tracker.clone();
    let report = finite_diff_check(
        move |p| full_loss(p, &tracker, &seq.clouds, &seq.gt),
        &ps,
        1e-5,
        1e-4,
        3, // coordinates probed per tensor
    )?;

    for e in &report.entries {
        println!("{} {:24} max rel err {:.3e}", if e.pass { "ok  " } else { "FAIL" }, e.name, e.max_rel_error);
    }
    println!("worst: {:.3e} (tolerance {:.0e})", report.worst(), report.tolerance);
    assert!(report.pass());
    Ok(())
}
