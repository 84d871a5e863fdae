//! Flat `key = value` run configuration. Unknown keys are errors so typos
//! fail loudly instead of silently using a default.

use crate::geometry::{Box3D, GridConfig};
use crate::harness::scene::{Motion, SceneSpec};
use crate::harness::train::TrainConfig;
use crate::head::Assignment;
use crate::numerics::{NumericsError, Result};
use crate::stlm::StlmVariant;
use crate::tracker::{FramePattern, TrackerConfig};

/// Everything a run needs: tracker topology, scene recipe, training knobs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub scene: SceneSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tracker: TrackerConfig::default(),
            scene: SceneSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

fn bad(line: usize, msg: impl Into<String>) -> NumericsError {
    NumericsError::Contract(format!("config line {line}: {}", msg.into()))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| bad(line, format!("cannot parse value '{v}' for {key}")))
}

/// Parse a config file body on top of the defaults. Lines are `key = value`;
/// blank lines and `#` comments are ignored.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    // motion is assembled from up to three keys
    let mut motion_kind = String::from("cv");
    let mut motion_a = 0.08;
    let mut motion_b = 0.04;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(bad(lineno, "expected 'key = value'"));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "seed" => {
                let s: u64 = parse_num(lineno, key, value)?;
                cfg.scene.seed = s;
                cfg.train.seed = s;
            }
            "frames" => cfg.scene.frames = parse_num(lineno, key, value)?,
            "object_points" => cfg.scene.object_points = parse_num(lineno, key, value)?,
            "clutter_points" => cfg.scene.clutter_points = parse_num(lineno, key, value)?,
            "distractors" => cfg.scene.distractors = parse_num(lineno, key, value)?,
            "noise_sigma" => cfg.scene.noise_sigma = parse_num(lineno, key, value)?,
            "scene_half_extent" => cfg.scene.scene_half_extent = parse_num(lineno, key, value)?,
            "motion" => motion_kind = value.to_string(),
            "motion.a" => motion_a = parse_num(lineno, key, value)?,
            "motion.b" => motion_b = parse_num(lineno, key, value)?,
            "start.x" => cfg.scene.start.x = parse_num(lineno, key, value)?,
            "start.y" => cfg.scene.start.y = parse_num(lineno, key, value)?,
            "start.z" => cfg.scene.start.z = parse_num(lineno, key, value)?,
            "start.w" => cfg.scene.start.w = parse_num(lineno, key, value)?,
            "start.l" => cfg.scene.start.l = parse_num(lineno, key, value)?,
            "start.h" => cfg.scene.start.h = parse_num(lineno, key, value)?,
            "start.theta" => cfg.scene.start.theta = parse_num(lineno, key, value)?,
            "window.cells" => {
                let n: usize = parse_num(lineno, key, value)?;
                cfg.tracker.grid.w = n;
                cfg.tracker.grid.h = n;
            }
            "window.pitch" => {
                let v: f64 = parse_num(lineno, key, value)?;
                cfg.tracker.grid.v_x = v;
                cfg.tracker.grid.v_y = v;
            }
            "window.b" => cfg.tracker.grid.b = parse_num(lineno, key, value)?,
            "window.z_min" => cfg.tracker.grid.z_min = parse_num(lineno, key, value)?,
            "window.z_max" => cfg.tracker.grid.z_max = parse_num(lineno, key, value)?,
            "cp" => cfg.tracker.cp = parse_num(lineno, key, value)?,
            "stlm.patch_r" => cfg.tracker.stlm.patch_r = parse_num(lineno, key, value)?,
            "stlm.heads" => cfg.tracker.stlm.heads = parse_num(lineno, key, value)?,
            "stlm.samples" => cfg.tracker.stlm.samples = parse_num(lineno, key, value)?,
            "stlm.c1" => {
                let c: usize = parse_num(lineno, key, value)?;
                cfg.tracker.stlm.c1 = c;
                cfg.tracker.stlm.c2 = c;
            }
            "stlm.c3" => cfg.tracker.stlm.c3 = parse_num(lineno, key, value)?,
            "stlm.c4" => cfg.tracker.stlm.c4 = parse_num(lineno, key, value)?,
            "stlm.variant" => {
                cfg.tracker.stlm.variant = StlmVariant::parse(value)
                    .ok_or_else(|| bad(lineno, format!("unknown variant '{value}'")))?;
            }
            "pattern" => cfg.tracker.pattern = FramePattern::parse(value)?,
            "head.assignment" => {
                cfg.tracker.head.assignment = match value {
                    "foreground" => Assignment::Foreground,
                    "gaussian" => Assignment::Gaussian,
                    _ => return Err(bad(lineno, format!("unknown assignment '{value}'"))),
                };
            }
            "head.w_offset" => cfg.tracker.head.weight_offset = parse_num(lineno, key, value)?,
            "head.w_height" => cfg.tracker.head.weight_height = parse_num(lineno, key, value)?,
            "head.w_orientation" => {
                cfg.tracker.head.weight_orientation = parse_num(lineno, key, value)?;
            }
            "train.steps" => cfg.train.steps = parse_num(lineno, key, value)?,
            "train.batch" => cfg.train.batch = parse_num(lineno, key, value)?,
            "train.lr_decay" => cfg.train.lr_decay = parse_num(lineno, key, value)?,
            "train.lr" => cfg.train.lr = parse_num(lineno, key, value)?,
            "train.momentum" => cfg.train.momentum = parse_num(lineno, key, value)?,
            "train.jitter" => cfg.train.jitter = parse_num(lineno, key, value)?,
            _ => return Err(bad(lineno, format!("unknown key '{key}'"))),
        }
    }

    cfg.scene.motion = Motion::parse(&motion_kind, motion_a, motion_b)
        .ok_or_else(|| NumericsError::Contract(format!("unknown motion '{motion_kind}'")))?;
    // recenter the window on the object: extents are symmetric by design
    cfg.tracker.grid = recentered(&cfg.tracker.grid);
    cfg.scene.start = Box3D::new(
        cfg.scene.start.x,
        cfg.scene.start.y,
        cfg.scene.start.z,
        cfg.scene.start.w,
        cfg.scene.start.l,
        cfg.scene.start.h,
        cfg.scene.start.theta,
    )
    .map_err(|e| NumericsError::Contract(e.to_string()))?;
    cfg.tracker.validate()?;
    Ok(cfg)
}

fn recentered(g: &GridConfig) -> GridConfig {
    GridConfig {
        x_min: -(g.w as f64) * g.cell_x() / 2.0,
        y_min: -(g.h as f64) * g.cell_y() / 2.0,
        ..*g
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NumericsError::Contract(format!("read {}: {e}", path.display())))?;
        parse_config(&text)
    }
}
