//! Stable hashing of floating-point result vectors for regression goldens.

use sha2::{Digest, Sha256};

/// Hex SHA-256 over the values rendered as `{:.12e}` joined by newlines.
/// The textual rendering pins the precision so the hash is stable across
/// platforms that agree to 12 significant digits.
pub fn hash_values(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            hasher.update(b"\n");
        }
        hasher.update(format!("{v:.12e}").as_bytes());
    }
    format!("{:x}", hasher.finalize())
}

/// One golden entry: a label and the hash of its value vector.
pub fn format_entry(label: &str, values: &[f64]) -> String {
    format!("{label} {}", hash_values(values))
}

/// Parse "label hash" lines, ignoring blanks and `#` comments.
pub fn parse_goldens(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let mut it = l.split_whitespace();
            match (it.next(), it.next()) {
                (Some(a), Some(b)) => Some((a.to_string(), b.to_string())),
                _ => None,
            }
        })
        .collect()
}

use crate::geometry::{bev_iou, iou3d, rasterize_box_mask, to_local, Box3D, GridConfig};
use crate::harness::scene::{generate_sequence, Motion, SceneSpec};
use crate::head::HeadConfig;
use crate::numerics::{ParameterSet, Result, Tensor};
use crate::pillars::{backbone, dynamic_pillarize, stamp_time, FeatureMap};
use crate::stlm::{
    build_grid, deformable_attend, init_patch_conv, init_stlm_params, mask_fusion, patchify,
    stlm_forward, StlmConfig, StlmVariant,
};
use crate::tracker::{run_sequence, FramePattern, TrackerConfig};

fn small_grid() -> GridConfig {
    GridConfig {
        x_min: -2.0, y_min: -2.0, v_x: 0.25, v_y: 0.25, w: 8, h: 8, b: 2,
        z_min: -2.0, z_max: 2.0,
    }
}

fn small_stlm(variant: StlmVariant) -> StlmConfig {
    StlmConfig {
        patch_r: 2,
        heads: 2,
        samples: 2,
        c1: 8,
        c2: 8,
        c3: 8,
        c4: 8,
        variant,
        force_zero_offsets: false,
    }
}

fn small_tracker(variant: StlmVariant, pattern: FramePattern) -> TrackerConfig {
    TrackerConfig {
        grid: small_grid(),
        stlm: small_stlm(variant),
        head: HeadConfig::default(),
        pattern,
        cp: 8,
    }
}

fn fixed_feature(seed: f64, age: f64) -> FeatureMap {
    let data: Vec<f64> = (0..8 * 8 * 8).map(|i| (seed + i as f64 * 0.13).sin()).collect();
    FeatureMap {
        values: Tensor::from_vec(&[8, 8, 8], data).expect("fixed feature"),
        grid: small_grid(),
        frame_age: age,
    }
}

/// Deterministic reference outputs covering every structural switch: one
/// entry per attention variant and one per frame pattern. Labels pair with
/// the hex hash of the produced values.
pub fn compute_goldens() -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();

    // fixed geometry pairs
    let pairs = [
        (Box3D::new(0.0, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0), Box3D::new(0.4, 0.1, 0.2, 1.0, 2.0, 1.0, 0.5)),
        (Box3D::new(1.0, -1.0, 0.0, 1.5, 3.0, 1.4, 1.0), Box3D::new(1.2, -0.8, 0.1, 1.5, 3.0, 1.4, -1.0)),
        (Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0), Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.785)),
    ];
    let mut geo = Vec::new();
    for (a, b) in &pairs {
        let (a, b) = (a.as_ref().expect("valid"), b.as_ref().expect("valid"));
        geo.push(bev_iou(a, b));
        geo.push(iou3d(a, b));
    }
    out.push(("geometry_iou".to_string(), hash_values(&geo)));

    // per-variant attention outputs on identical inputs and shared seed
    let past_box = Box3D::new(0.1, -0.2, 0.0, 0.8, 1.2, 1.0, 0.3).expect("valid");
    for variant in StlmVariant::all() {
        let cfg = small_stlm(variant);
        let mut ps = ParameterSet::new(42);
        init_stlm_params(&mut ps, &cfg)?;
        if variant != StlmVariant::ConvPatch {
            init_patch_conv(&mut ps, &cfg, 8)?;
        }
        let features = [fixed_feature(0.0, 2.0), fixed_feature(1.0, 1.0), fixed_feature(2.0, 0.0)];
        let fused = stlm_forward(&features, &[past_box, past_box], &ps, &cfg, &small_grid())?;
        out.push((format!("stlm_{}", variant.name()), hash_values(fused.values.data())));
    }

    // per-pattern end-to-end tracks on one synthetic scene
    let spec = SceneSpec {
        frames: 8,
        start: Box3D::new(0.0, 0.0, 0.0, 0.8, 1.4, 1.0, 0.2).expect("valid"),
        motion: Motion::ConstantVelocity { vx: 0.05, vy: -0.03 },
        object_points: 60,
        seed: 7,
        ..Default::default()
    };
    let seq = generate_sequence(&spec);
    for pattern in [
        "0,1", "0,2", "0,1,2", "0,1,2,3", "0,1,3,5", "0,2,3,4", "0,2,4,6",
        "0,1,2,3,4", "0,1,2,3,4,5",
    ] {
        let cfg = small_tracker(StlmVariant::Full, FramePattern::parse(pattern)?);
        let mut ps = ParameterSet::new(42);
        cfg.init_params(&mut ps)?;
        let state = run_sequence(&seq.clouds, seq.gt[0], &ps, &cfg)?;
        let mut flat: Vec<f64> = state
            .boxes
            .iter()
            .flat_map(|b| [b.x, b.y, b.z, b.theta])
            .collect();
        // also hash the full attended token grid at a teacher-forced late
        // frame; the track alone only reflects the youngest history frames
        // when the sampling offsets stay sub-cell
        let t = 6;
        let reference = seq.gt[t - 1];
        let mut tokens = Vec::new();
        let mut ages = Vec::new();
        for &age in cfg.pattern.ages() {
            let f = t.saturating_sub(age);
            let local = to_local(&stamp_time(&seq.clouds[f], age as f64), &reference);
            let pillar = dynamic_pillarize(&local, &cfg.grid, &ps)?;
            let feat = backbone(&pillar, &cfg.grid, &ps, age as f64)?;
            let spatial = if age == 0 {
                feat
            } else {
                let b = seq.gt[f].translated(-reference.x, -reference.y, -reference.z);
                mask_fusion(&feat, &rasterize_box_mask(&b, &cfg.grid), &ps, &cfg.stlm)?
            };
            tokens.push(patchify(&spatial, &ps, &cfg.stlm)?);
            ages.push(age as f64);
        }
        let attended = deformable_attend(&build_grid(&tokens, &ages)?, &ps, &cfg.stlm)?;
        flat.extend_from_slice(attended.values.data());
        out.push((format!("pattern_{}", pattern.replace(',', "-")), hash_values(&flat)));
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_deterministic_and_value_sensitive() {
        let a = hash_values(&[1.0, 2.0, 3.0]);
        let b = hash_values(&[1.0, 2.0, 3.0]);
        let c = hash_values(&[1.0, 2.0, 3.0 + 1e-10]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn sub_precision_noise_does_not_change_hash() {
        let a = hash_values(&[1.0 / 3.0]);
        let b = hash_values(&[1.0 / 3.0 + 1e-16]);
        assert_eq!(a, b);
    }

    #[test]
    fn parse_round_trip() {
        let text = format!(
            "# comment\n{}\n\n{}\n",
            format_entry("alpha", &[1.0]),
            format_entry("beta", &[2.0, 3.0])
        );
        let parsed = parse_goldens(&text);
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].0, "alpha");
        assert_eq!(parsed[1].1, hash_values(&[2.0, 3.0]));
    }
}
