//! One-pass-evaluation metrics: Success (overlap AUC) and Precision
//! (center-error AUC), with frame-weighted pooling across sequences.

use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::{bev_iou, center_distance, center_distance_bev, iou3d, Box3D};

/// Number of threshold samples for both AUC curves.
pub const CURVE_POINTS: usize = 201;
/// Precision thresholds cover [0, PRECISION_MAX] meters.
pub const PRECISION_MAX: f64 = 2.0;

/// Per-frame comparison results for one tracked sequence. The first frame
/// (the given template) is excluded at construction.
#[derive(Debug, Clone, Default)]
pub struct SequenceEval {
    pub ious: Vec<f64>,
    pub bev_ious: Vec<f64>,
    pub dists: Vec<f64>,
    pub bev_dists: Vec<f64>,
}

impl SequenceEval {
    /// Compare predictions against ground truth frame by frame. Frame 0 is
    /// skipped: trackers are initialized with it, so scoring it would only
    /// inflate the numbers.
    pub fn from_boxes(preds: &[Box3D], gts: &[Box3D]) -> Result<SequenceEval, String> {
        if preds.len() != gts.len() {
            return Err(format!("length mismatch: {} predictions vs {} boxes", preds.len(), gts.len()));
        }
        let mut e = SequenceEval::default();
        for (p, g) in preds.iter().zip(gts.iter()).skip(1) {
            e.ious.push(iou3d(p, g));
            e.bev_ious.push(bev_iou(p, g));
            e.dists.push(center_distance(p, g));
            e.bev_dists.push(center_distance_bev(p, g));
        }
        Ok(e)
    }

    pub fn frame_count(&self) -> usize {
        self.ious.len()
    }
}

/// Fraction of samples with overlap strictly above `t`.
fn overlap_fraction(overlaps: &[f64], t: f64) -> f64 {
    if overlaps.is_empty() {
        return 0.0;
    }
    overlaps.iter().filter(|&&o| o > t).count() as f64 / overlaps.len() as f64
}

/// Fraction of samples with error strictly below `t`.
fn error_fraction(dists: &[f64], t: f64) -> f64 {
    if dists.is_empty() {
        return 0.0;
    }
    dists.iter().filter(|&&d| d < t).count() as f64 / dists.len() as f64
}

fn trapezoid_auc(ys: &[f64]) -> f64 {
    let n = ys.len();
    let mut acc = 0.0;
    for i in 0..n - 1 {
        acc += (ys[i] + ys[i + 1]) / 2.0;
    }
    acc / (n - 1) as f64
}

/// Success curve sampled at 201 overlap thresholds in [0, 1].
pub fn success_curve(overlaps: &[f64]) -> Vec<f64> {
    (0..CURVE_POINTS)
        .map(|k| overlap_fraction(overlaps, k as f64 / (CURVE_POINTS - 1) as f64))
        .collect()
}

/// Precision curve sampled at 201 error thresholds in [0, 2] meters.
pub fn precision_curve(dists: &[f64]) -> Vec<f64> {
    (0..CURVE_POINTS)
        .map(|k| error_fraction(dists, PRECISION_MAX * k as f64 / (CURVE_POINTS - 1) as f64))
        .collect()
}

/// Area under the success curve, scaled to [0, 100].
pub fn success(overlaps: &[f64]) -> f64 {
    100.0 * trapezoid_auc(&success_curve(overlaps))
}

/// Area under the precision curve, scaled to [0, 100].
pub fn precision(dists: &[f64]) -> f64 {
    100.0 * trapezoid_auc(&precision_curve(dists))
}

/// Mean of `values` weighted by `weights` (e.g. per-category scores weighted
/// by frame counts).
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    assert_eq!(values.len(), weights.len());
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub success: f64,
    pub precision: f64,
    pub bev_success: f64,
    pub bev_precision: f64,
    pub frames: usize,
}

/// Pool frames from all sequences, then compute the four AUC metrics. This
/// weights each sequence by its frame count.
pub fn evaluate_sequences(seqs: &[SequenceEval]) -> EvalSummary {
    let mut ious = Vec::new();
    let mut bev_ious = Vec::new();
    let mut dists = Vec::new();
    let mut bev_dists = Vec::new();
    for s in seqs {
        ious.extend_from_slice(&s.ious);
        bev_ious.extend_from_slice(&s.bev_ious);
        dists.extend_from_slice(&s.dists);
        bev_dists.extend_from_slice(&s.bev_dists);
    }
    EvalSummary {
        success: success(&ious),
        precision: precision(&dists),
        bev_success: success(&bev_ious),
        bev_precision: precision(&bev_dists),
        frames: ious.len(),
    }
}

#[derive(Debug, Clone)]
pub struct CategoryReport {
    pub category: String,
    pub frames: usize,
    pub success_3d: f64,
    pub precision_3d: f64,
    pub success_bev: f64,
    pub precision_bev: f64,
}

/// Group sequences by category label, pool frames within each category, and
/// append a frame-weighted "Mean" row.
pub fn evaluate_categories(items: &[(String, SequenceEval)]) -> Vec<CategoryReport> {
    let mut order: Vec<String> = Vec::new();
    for (cat, _) in items {
        if !order.contains(cat) {
            order.push(cat.clone());
        }
    }
    let mut reports = Vec::with_capacity(order.len() + 1);
    for cat in &order {
        let seqs: Vec<SequenceEval> =
            items.iter().filter(|(c, _)| c == cat).map(|(_, s)| s.clone()).collect();
        let s = evaluate_sequences(&seqs);
        reports.push(CategoryReport {
            category: cat.clone(),
            frames: s.frames,
            success_3d: s.success,
            precision_3d: s.precision,
            success_bev: s.bev_success,
            precision_bev: s.bev_precision,
        });
    }
    let frames: Vec<f64> = reports.iter().map(|r| r.frames as f64).collect();
    let pick = |f: fn(&CategoryReport) -> f64| {
        let vals: Vec<f64> = reports.iter().map(f).collect();
        weighted_mean(&vals, &frames)
    };
    reports.push(CategoryReport {
        category: "Mean".into(),
        frames: frames.iter().sum::<f64>() as usize,
        success_3d: pick(|r| r.success_3d),
        precision_3d: pick(|r| r.precision_3d),
        success_bev: pick(|r| r.success_bev),
        precision_bev: pick(|r| r.precision_bev),
    });
    reports
}

/// Per-category CSV with a trailing Mean row.
pub fn write_category_report(path: &Path, reports: &[CategoryReport]) -> std::io::Result<()> {
    let mut out = String::from("category,frames,success_3d,precision_3d,success_bev,precision_bev\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4}",
            r.category, r.frames, r.success_3d, r.precision_3d, r.success_bev, r.precision_bev
        )
        .expect("string write");
    }
    std::fs::write(path, out)
}

/// "metric,value" CSV report.
pub fn write_report(path: &Path, summary: &EvalSummary) -> std::io::Result<()> {
    let mut out = String::from("metric,value\n");
    writeln!(out, "success,{:.4}", summary.success).expect("string write");
    writeln!(out, "precision,{:.4}", summary.precision).expect("string write");
    writeln!(out, "bev_success,{:.4}", summary.bev_success).expect("string write");
    writeln!(out, "bev_precision,{:.4}", summary.bev_precision).expect("string write");
    writeln!(out, "frames,{}", summary.frames).expect("string write");
    std::fs::write(path, out)
}

/// Threshold/fraction pairs for both curves, for plotting.
pub fn write_curves(path: &Path, overlaps: &[f64], dists: &[f64]) -> std::io::Result<()> {
    let sc = success_curve(overlaps);
    let pc = precision_curve(dists);
    let mut out = String::from("overlap_threshold,success_fraction,error_threshold,precision_fraction\n");
    for k in 0..CURVE_POINTS {
        writeln!(
            out,
            "{:.3},{:.6},{:.3},{:.6}",
            k as f64 / (CURVE_POINTS - 1) as f64,
            sc[k],
            PRECISION_MAX * k as f64 / (CURVE_POINTS - 1) as f64,
            pc[k],
        )
        .expect("string write");
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_tracking_scores() {
        // identical boxes every frame: all overlaps 1, all distances 0
        let overlaps = vec![1.0; 50];
        let dists = vec![0.0; 50];
        // success: fraction is 1 for t < 1 and 0 at t = 1 (strict), so the
        // last trapezoid contributes half a step
        let want_s = 100.0 * (1.0 - 0.5 / 200.0);
        assert!((success(&overlaps) - want_s).abs() < 1e-9);
        // precision: fraction is 0 at t = 0 (strict), 1 beyond
        let want_p = 100.0 * (1.0 - 0.5 / 200.0);
        assert!((precision(&dists) - want_p).abs() < 1e-9);
    }

    #[test]
    fn constant_one_meter_error_precision() {
        // hand-derived: curve is 0 up to t = 1.0 inclusive, 1 after;
        // trapezoid area = (0.005 + 0.99) / 2.0 m range = 0.4975
        let dists = vec![1.0; 10];
        assert!((precision(&dists) - 49.75).abs() < 1e-9);
    }

    #[test]
    fn half_overlap_success() {
        // overlap 0.5 on every frame: curve 1 for t < 0.5, 0 at and above;
        // area = 0.5 * 1 - half step = 0.4975
        let overlaps = vec![0.5; 10];
        assert!((success(&overlaps) - 49.75).abs() < 1e-9);
    }

    #[test]
    fn monotone_in_overlap() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let better: Vec<f64> = a.iter().map(|v| (v + 0.1).min(1.0)).collect();
        assert!(success(&better) >= success(&a));
        let d: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..3.0)).collect();
        let closer: Vec<f64> = d.iter().map(|v| v * 0.5).collect();
        assert!(precision(&closer) >= precision(&d));
    }

    #[test]
    fn permutation_invariant() {
        let a = vec![0.9, 0.1, 0.5, 0.7, 0.3];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(success(&a), success(&b));
        assert_eq!(precision(&a), precision(&b));
    }

    #[test]
    fn weighted_mean_tables() {
        // cross-checked by hand against per-category scores and frame counts
        let succ = [66.5, 60.4, 50.5, 75.3];
        let prec = [79.9, 89.4, 63.6, 93.9];
        let frames = [6424.0, 6088.0, 1248.0, 308.0];
        let ws = weighted_mean(&succ, &frames);
        let wp = weighted_mean(&prec, &frames);
        assert!((ws - 62.6).abs() < 0.05, "weighted success {ws}");
        assert!((wp - 82.9).abs() < 0.05, "weighted precision {wp}");

        let succ2 = [56.11, 37.58, 54.29, 36.23, 36.31, 48.13];
        let frames2 = [64159.0, 33227.0, 13587.0, 2292.0, 2953.0, 3352.0];
        let ws2 = weighted_mean(&succ2, &frames2);
        assert!((ws2 - 49.66).abs() < 0.05, "weighted success {ws2}");
    }

    #[test]
    fn pooling_weights_by_frames() {
        let mk = |ious: Vec<f64>, dists: Vec<f64>| SequenceEval {
            bev_ious: ious.clone(),
            bev_dists: dists.clone(),
            ious,
            dists,
        };
        let long = mk(vec![0.8; 30], vec![0.1; 30]);
        let short = mk(vec![0.0; 3], vec![5.0; 3]);
        let pooled = evaluate_sequences(&[long.clone(), short.clone()]);
        assert_eq!(pooled.frames, 33);
        let mut all_i = long.ious.clone();
        all_i.extend(&short.ious);
        assert!((pooled.success - success(&all_i)).abs() < 1e-12);
    }

    #[test]
    fn sequence_eval_skips_first_frame() {
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0).unwrap();
        let off = b.translated(0.5, 0.0, 0.0);
        let preds = vec![off, b, b];
        let gts = vec![b, b, b];
        let e = SequenceEval::from_boxes(&preds, &gts).unwrap();
        assert_eq!(e.frame_count(), 2);
        assert!(e.ious.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn length_mismatch_rejected() {
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert!(SequenceEval::from_boxes(&[b, b], &[b]).is_err());
    }

    #[test]
    fn empty_input_scores_zero() {
        assert_eq!(success(&[]), 0.0);
        assert_eq!(precision(&[]), 0.0);
    }

    #[test]
    fn category_report_matches_hand_computation() {
        let mk = |iou: f64, d: f64, n: usize| SequenceEval {
            ious: vec![iou; n],
            bev_ious: vec![iou; n],
            dists: vec![d; n],
            bev_dists: vec![d; n],
        };
        let items = vec![
            ("car".to_string(), mk(0.8, 0.2, 10)),
            ("car".to_string(), mk(0.6, 0.4, 10)),
            ("ped".to_string(), mk(0.4, 1.0, 5)),
        ];
        let reports = evaluate_categories(&items);
        assert_eq!(reports.len(), 3);
        assert_eq!(reports[0].category, "car");
        assert_eq!(reports[0].frames, 20);
        assert_eq!(reports[2].category, "Mean");
        // car pools both sequences
        let car = success(&[vec![0.8; 10], vec![0.6; 10]].concat());
        assert!((reports[0].success_3d - car).abs() < 1e-12);
        // mean row is frame-weighted
        let want = weighted_mean(
            &[reports[0].success_3d, reports[1].success_3d],
            &[20.0, 5.0],
        );
        assert!((reports[2].success_3d - want).abs() < 1e-12);
    }

    #[test]
    fn report_and_curves_write() {
        let dir = std::env::temp_dir().join("sttk_eval_test");
        std::fs::create_dir_all(&dir).unwrap();
        let s = EvalSummary { success: 50.0, precision: 60.0, bev_success: 55.0, bev_precision: 65.0, frames: 10 };
        write_report(&dir.join("report.csv"), &s).unwrap();
        write_curves(&dir.join("curves.csv"), &[0.5; 4], &[0.3; 4]).unwrap();
        let text = std::fs::read_to_string(dir.join("report.csv")).unwrap();
        assert!(text.contains("success,50.0000"));
        let curves = std::fs::read_to_string(dir.join("curves.csv")).unwrap();
        assert_eq!(curves.lines().count(), CURVE_POINTS + 1);
    }
}
