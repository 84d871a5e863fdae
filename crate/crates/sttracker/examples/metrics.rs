//! One-pass-evaluation metrics: Success and Precision curves, category
//! pooling, and frame-weighted means over published-style tables.
//!
//! Run with: cargo run --example metrics

use sttracker::eval::{
    evaluate_categories, precision, success, weighted_mean, SequenceEval,
};
use sttracker::geometry::Box3D;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a drifting track: overlap decays, center error grows
    let gt = Box3D::new(0.0, 0.0, 0.0, 1.6, 3.6, 1.5, 0.0)?;
    let gts: Vec<Box3D> = (0..30).map(|_| gt).collect();
    let preds: Vec<Box3D> = (0..30).map(|k| gt.translated(0.05 * k as f64, 0.0, 0.0)).collect();
    let seq = SequenceEval::from_boxes(&preds, &gts).map_err(std::io::Error::other)?;
    println!(
        "drifting track: Success {:.2}  Precision {:.2}",
        success(&seq.ious),
        precision(&seq.dists)
    );

    // constant 1 m error scores half the precision budget (2 m sweep)
    println!("constant 1 m error precision: {:.2}", precision(&vec![1.0; 50]));

    // frame-weighted pooling over categories
    let items = vec![
        ("car".to_string(), seq.clone()),
        ("car".to_string(), SequenceEval::from_boxes(&gts, &gts).map_err(std::io::Error::other)?),
        ("pedestrian".to_string(), SequenceEval::from_boxes(&preds, &gts).map_err(std::io::Error::other)?),
    ];
    for r in evaluate_categories(&items) {
        println!(
            "{:10} frames {:3} success {:6.2} precision {:6.2}",
            r.category, r.frames, r.success_3d, r.precision_3d
        );
    }

    // the weighted mean over per-category scores and frame counts
    let success_by_cat = [66.5, 60.4, 50.5, 75.3];
    let frames = [6424.0, 6088.0, 1248.0, 308.0];
    println!(
        "weighted mean of sample per-category scores: {:.2}",
        weighted_mean(&success_by_cat, &frames)
    );
    Ok(())
}
