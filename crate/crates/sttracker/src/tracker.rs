//! Sliding-window tracking loop: crop a local window around the previous
//! prediction, run the pillar/backbone/attention/head stack on the selected
//! history frames, and decode the next box.

use crate::geometry::{to_local, Box3D, GridConfig};
use crate::head::{decode, head_forward, init_head_params, HeadConfig, Prediction};
use crate::numerics::{NumericsError, ParameterSet, Result};
use crate::pillars::{
    backbone, dynamic_pillarize, init_backbone_params, init_pillar_params, stamp_time,
    TimedPointCloud,
};
use crate::stlm::{init_patch_conv, init_stlm_params, stlm_forward, StlmConfig};

/// Which history frames feed each step, given as frame ages. Age 0 is the
/// current frame and must be present; ages are stored descending so frames
/// run oldest to current.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePattern {
    ages: Vec<usize>,
}

impl FramePattern {
    pub fn new(mut ages: Vec<usize>) -> Result<FramePattern> {
        ages.sort_unstable_by(|a, b| b.cmp(a));
        ages.dedup();
        if ages.last() != Some(&0) {
            return Err(NumericsError::Contract("frame pattern must include age 0".into()));
        }
        Ok(FramePattern { ages })
    }

    /// Parse "0,1,3,5" style comma-separated ages.
    pub fn parse(s: &str) -> Result<FramePattern> {
        let ages: std::result::Result<Vec<usize>, _> =
            s.split(',').map(|p| p.trim().parse::<usize>()).collect();
        FramePattern::new(ages.map_err(|e| NumericsError::Contract(format!("bad pattern: {e}")))?)
    }

    /// Ages oldest first, ending in 0.
    pub fn ages(&self) -> &[usize] {
        &self.ages
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn name(&self) -> String {
        let parts: Vec<String> = self.ages.iter().rev().map(|a| a.to_string()).collect();
        parts.join(",")
    }
}

impl Default for FramePattern {
    fn default() -> Self {
        FramePattern::new(vec![0, 1, 2]).expect("static pattern")
    }
}

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Local search window; x/y extents are centered on the previous box.
    pub grid: GridConfig,
    pub stlm: StlmConfig,
    pub head: HeadConfig,
    pub pattern: FramePattern,
    /// Pillar feature width Cp.
    pub cp: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            grid: GridConfig {
                x_min: -4.8,
                y_min: -4.8,
                v_x: 0.15,
                v_y: 0.15,
                w: 16,
                h: 16,
                b: 4,
                z_min: -3.0,
                z_max: 3.0,
            },
            stlm: StlmConfig::default(),
            head: HeadConfig::default(),
            pattern: FramePattern::default(),
            cp: 16,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate().map_err(|e| NumericsError::Contract(e.to_string()))?;
        self.stlm.validate()?;
        if self.grid.w != self.grid.h {
            return Err(NumericsError::Contract(format!(
                "search window must be square, got {}x{}",
                self.grid.w, self.grid.h
            )));
        }
        if self.grid.w % self.stlm.patch_r != 0 {
            return Err(NumericsError::Contract(format!(
                "feature side {} not divisible by patch_r {}",
                self.grid.w, self.stlm.patch_r
            )));
        }
        Ok(())
    }

    /// Register every parameter the tracking stack needs.
    pub fn init_params(&self, ps: &mut ParameterSet) -> Result<()> {
        self.validate()?;
        init_pillar_params(ps, self.cp)?;
        init_backbone_params(ps, self.cp, self.stlm.c1, self.grid.b)?;
        init_stlm_params(ps, &self.stlm)?;
        init_patch_conv(ps, &self.stlm, self.grid.w)?;
        init_head_params(ps, self.stlm.c1)?;
        Ok(())
    }
}

/// Rolling tracker state: predicted boxes in the global frame, one per frame
/// seen so far.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub boxes: Vec<Box3D>,
    pub coasted: Vec<bool>,
    pub size: (f64, f64, f64),
}

impl TrackState {
    /// Initialize from the given first-frame box; its size is carried
    /// through the whole track.
    pub fn init(first_box: Box3D) -> TrackState {
        TrackState { boxes: vec![first_box], coasted: vec![false], size: first_box.size() }
    }

    pub fn last(&self) -> &Box3D {
        self.boxes.last().expect("state always holds at least the init box")
    }
}

fn count_in_window(cloud: &TimedPointCloud, grid: &GridConfig) -> usize {
    cloud
        .points
        .iter()
        .filter(|p| {
            p.0 >= grid.x_min
                && p.0 < grid.x_min + grid.w as f64 * grid.cell_x()
                && p.1 >= grid.y_min
                && p.1 < grid.y_min + grid.h as f64 * grid.cell_y()
                && p.2 >= grid.z_min
                && p.2 <= grid.z_max
        })
        .count()
}

/// Advance the track by one frame. `clouds` holds the raw global-frame point
/// clouds for every frame up to and including the new one; frames older than
/// the sequence start are backfilled with frame 0.
pub fn step(
    state: &mut TrackState,
    clouds: &[Vec<(f64, f64, f64)>],
    params: &ParameterSet,
    cfg: &TrackerConfig,
) -> Result<Prediction> {
    let t = state.boxes.len();
    if clouds.len() <= t {
        return Err(NumericsError::Contract(format!(
            "need cloud for frame {t}, only {} given",
            clouds.len()
        )));
    }
    let reference = *state.last();

    // coast when the new frame is empty around the last prediction
    let current_local = to_local(&stamp_time(&clouds[t], 0.0), &reference);
    if count_in_window(&current_local, &cfg.grid) == 0 {
        state.boxes.push(reference);
        state.coasted.push(true);
        return Ok(Prediction { box3d: reference, score: 0.0, peak_index: (0, 0) });
    }

    let mut features = Vec::with_capacity(cfg.pattern.len());
    let mut past_boxes = Vec::with_capacity(cfg.pattern.len() - 1);
    for &age in cfg.pattern.ages() {
        let f = t.saturating_sub(age);
        let local = to_local(&stamp_time(&clouds[f], age as f64), &reference);
        let pillar = dynamic_pillarize(&local, &cfg.grid, params)?;
        features.push(backbone(&pillar, &cfg.grid, params, age as f64)?);
        if age > 0 {
            // history box in the local window; boxes[f] exists for f < t
            let b = state.boxes[f.min(state.boxes.len() - 1)];
            past_boxes.push(b.translated(-reference.x, -reference.y, -reference.z));
        }
    }

    let fused = stlm_forward(&features, &past_boxes, params, &cfg.stlm, &cfg.grid)?;
    let out = head_forward(&fused, params)?;
    let local_pred = decode(
        out.heatmap.data(),
        out.offset.data(),
        out.height.data(),
        out.orientation.data(),
        &cfg.grid,
        state.size,
    )?;
    let global_box = local_pred.box3d.translated(reference.x, reference.y, reference.z);
    state.boxes.push(global_box);
    state.coasted.push(false);
    Ok(Prediction { box3d: global_box, ..local_pred })
}

/// Track through a whole sequence given the first-frame box. Returns one box
/// per frame; index 0 is the initialization box itself.
pub fn run_sequence(
    clouds: &[Vec<(f64, f64, f64)>],
    first_box: Box3D,
    params: &ParameterSet,
    cfg: &TrackerConfig,
) -> Result<TrackState> {
    if clouds.is_empty() {
        return Err(NumericsError::Contract("empty sequence".into()));
    }
    cfg.validate()?;
    let mut state = TrackState::init(first_box);
    for _ in 1..clouds.len() {
        step(&mut state, clouds, params, cfg)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrackerConfig {
        TrackerConfig {
            grid: GridConfig {
                x_min: -2.0, y_min: -2.0, v_x: 0.25, v_y: 0.25, w: 8, h: 8, b: 2,
                z_min: -2.0, z_max: 2.0,
            },
            stlm: StlmConfig {
                patch_r: 2, heads: 2, samples: 2, c1: 8, c2: 8, c3: 8, c4: 8,
                ..Default::default()
            },
            head: HeadConfig::default(),
            pattern: FramePattern::new(vec![0, 1]).unwrap(),
            cp: 8,
        }
    }

    fn box_points(b: &Box3D, n: usize, seed: u64) -> Vec<(f64, f64, f64)> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (s, c) = b.theta.sin_cos();
                let lx = rng.gen_range(-b.l / 2.0..b.l / 2.0);
                let ly = rng.gen_range(-b.w / 2.0..b.w / 2.0);
                (b.x + c * lx - s * ly, b.y + s * lx + c * ly, b.z + rng.gen_range(-b.h / 2.0..b.h / 2.0))
            })
            .collect()
    }

    #[test]
    fn pattern_parse_sorting_and_zero_requirement() {
        let p = FramePattern::parse("0, 3, 1").unwrap();
        assert_eq!(p.ages(), &[3, 1, 0]);
        assert_eq!(p.name(), "0,1,3");
        assert!(FramePattern::parse("1,2").is_err());
        assert!(FramePattern::parse("0,x").is_err());
        assert_eq!(FramePattern::parse("0,1,1,2").unwrap().ages(), &[2, 1, 0]);
    }

    #[test]
    fn run_produces_one_box_per_frame() {
        let cfg = small_cfg();
        let mut ps = ParameterSet::new(11);
        cfg.init_params(&mut ps).unwrap();
        let b = Box3D::new(1.0, -0.5, 0.2, 1.0, 1.6, 1.0, 0.3).unwrap();
        let clouds: Vec<_> = (0..5).map(|i| box_points(&b.translated(0.05 * i as f64, 0.0, 0.0), 60, i as u64)).collect();
        let state = run_sequence(&clouds, b, &ps, &cfg).unwrap();
        assert_eq!(state.boxes.len(), 5);
        assert_eq!(state.boxes[0], b);
        // the first step has points in the window around the init box
        assert!(!state.coasted[1]);
        for bx in &state.boxes {
            assert_eq!(bx.size(), b.size());
        }
    }

    #[test]
    fn deterministic_repeat() {
        let cfg = small_cfg();
        let mut ps = ParameterSet::new(12);
        cfg.init_params(&mut ps).unwrap();
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.5, 1.0, 0.0).unwrap();
        let clouds: Vec<_> = (0..4).map(|i| box_points(&b, 40, 100 + i as u64)).collect();
        let s1 = run_sequence(&clouds, b, &ps, &cfg).unwrap();
        let s2 = run_sequence(&clouds, b, &ps, &cfg).unwrap();
        assert_eq!(s1.boxes, s2.boxes);
    }

    #[test]
    fn empty_frame_coasts() {
        let cfg = small_cfg();
        let mut ps = ParameterSet::new(13);
        cfg.init_params(&mut ps).unwrap();
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.5, 1.0, 0.0).unwrap();
        let clouds = vec![box_points(&b, 40, 1), vec![], box_points(&b, 40, 2)];
        let state = run_sequence(&clouds, b, &ps, &cfg).unwrap();
        assert_eq!(state.boxes[1], b);
        assert!(state.coasted[1]);
        assert!(!state.coasted[2]);
    }

    #[test]
    fn deep_pattern_backfills_before_sequence_start() {
        let mut cfg = small_cfg();
        cfg.pattern = FramePattern::new(vec![0, 1, 3, 5]).unwrap();
        let mut ps = ParameterSet::new(14);
        cfg.init_params(&mut ps).unwrap();
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.5, 1.0, 0.0).unwrap();
        let clouds: Vec<_> = (0..3).map(|i| box_points(&b, 40, 200 + i as u64)).collect();
        let state = run_sequence(&clouds, b, &ps, &cfg).unwrap();
        assert_eq!(state.boxes.len(), 3);
    }

    #[test]
    fn translation_equivariance() {
        // everything is computed in the local window, so shifting the scene
        // and the init box together shifts every prediction by the same amount
        let cfg = small_cfg();
        let mut ps = ParameterSet::new(15);
        cfg.init_params(&mut ps).unwrap();
        let b = Box3D::new(0.3, -0.2, 0.1, 1.0, 1.6, 1.0, 0.4).unwrap();
        let clouds: Vec<_> = (0..4).map(|i| box_points(&b, 50, 300 + i as u64)).collect();
        let s1 = run_sequence(&clouds, b, &ps, &cfg).unwrap();

        let d = (10.0, -7.0, 2.0);
        let shifted: Vec<Vec<(f64, f64, f64)>> = clouds
            .iter()
            .map(|c| c.iter().map(|p| (p.0 + d.0, p.1 + d.1, p.2 + d.2)).collect())
            .collect();
        let s2 = run_sequence(&shifted, b.translated(d.0, d.1, d.2), &ps, &cfg).unwrap();
        for (a, bb) in s1.boxes.iter().zip(&s2.boxes) {
            assert!((a.x + d.0 - bb.x).abs() < 1e-9);
            assert!((a.y + d.1 - bb.y).abs() < 1e-9);
            assert!((a.z + d.2 - bb.z).abs() < 1e-9);
            assert!((a.theta - bb.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_cloud_rejected() {
        let cfg = small_cfg();
        let mut ps = ParameterSet::new(16);
        cfg.init_params(&mut ps).unwrap();
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let mut state = TrackState::init(b);
        assert!(step(&mut state, &[vec![(0.0, 0.0, 0.0)]], &ps, &cfg).is_err());
    }
}
