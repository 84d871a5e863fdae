//! Seeded synthetic point-cloud sequences with a single tracked object,
//! optional clutter, and optional distractor objects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Box3D;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Static,
    /// Meters per frame along x / y.
    ConstantVelocity { vx: f64, vy: f64 },
    /// Forward speed (m/frame) plus yaw rate (rad/frame).
    ConstantTurn { speed: f64, yaw_rate: f64 },
}

impl Motion {
    pub fn parse(kind: &str, a: f64, b: f64) -> Option<Motion> {
        Some(match kind {
            "static" => Motion::Static,
            "cv" => Motion::ConstantVelocity { vx: a, vy: b },
            "ct" => Motion::ConstantTurn { speed: a, yaw_rate: b },
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub frames: usize,
    pub start: Box3D,
    pub motion: Motion,
    /// Surface samples per frame on the tracked object.
    pub object_points: usize,
    /// Uniform clutter points per frame over the scene extent.
    pub clutter_points: usize,
    /// Half-extent of the clutter region around the object start.
    pub scene_half_extent: f64,
    /// Extra objects with their own constant velocity, also surface sampled.
    pub distractors: usize,
    /// Gaussian noise added to every sampled point.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            frames: 20,
            start: Box3D::new(0.0, 0.0, 0.0, 1.6, 3.6, 1.5, 0.0).expect("valid box"),
            motion: Motion::ConstantVelocity { vx: 0.08, vy: 0.04 },
            object_points: 120,
            clutter_points: 0,
            scene_half_extent: 12.0,
            distractors: 0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub clouds: Vec<Vec<(f64, f64, f64)>>,
    pub gt: Vec<Box3D>,
}

fn advance(b: &Box3D, motion: &Motion) -> Box3D {
    match motion {
        Motion::Static => *b,
        Motion::ConstantVelocity { vx, vy } => b.translated(*vx, *vy, 0.0),
        Motion::ConstantTurn { speed, yaw_rate } => {
            let theta = b.theta + yaw_rate;
            Box3D {
                x: b.x + speed * theta.cos(),
                y: b.y + speed * theta.sin(),
                theta: crate::geometry::wrap_angle(theta),
                ..*b
            }
        }
    }
}

/// Uniform sample on the box surface: pick a face with probability
/// proportional to its area, then a uniform point on that face.
fn sample_surface(b: &Box3D, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let (aw, al, ah) = (b.w, b.l, b.h);
    // face areas: two l*h sides, two w*h sides, two l*w (top/bottom)
    let areas = [al * ah, al * ah, aw * ah, aw * ah, al * aw, al * aw];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.gen_range(0.0..total);
    let mut face = 0;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            face = i;
            break;
        }
        pick -= a;
    }
    let u = rng.gen_range(-0.5..0.5);
    let v = rng.gen_range(-0.5..0.5);
    let (lx, ly, lz) = match face {
        0 => (u * al, aw / 2.0, v * ah),
        1 => (u * al, -aw / 2.0, v * ah),
        2 => (al / 2.0, u * aw, v * ah),
        3 => (-al / 2.0, u * aw, v * ah),
        4 => (u * al, v * aw, ah / 2.0),
        _ => (u * al, v * aw, -ah / 2.0),
    };
    let (s, c) = b.theta.sin_cos();
    (b.x + c * lx - s * ly, b.y + s * lx + c * ly, b.z + lz)
}

/// Generate the full sequence. Deterministic in `spec.seed`.
pub fn generate_sequence(spec: &SceneSpec) -> SyntheticSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gt = Vec::with_capacity(spec.frames);
    let mut bx = spec.start;

    // distractors start offset from the object and drift independently
    let mut others: Vec<(Box3D, f64, f64)> = (0..spec.distractors)
        .map(|_| {
            let d = Box3D {
                x: spec.start.x + rng.gen_range(4.0..7.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                y: spec.start.y + rng.gen_range(4.0..7.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                theta: rng.gen_range(-3.1..3.1),
                ..spec.start
            };
            (d, rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1))
        })
        .collect();

    let mut clouds = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        if f > 0 {
            bx = advance(&bx, &spec.motion);
            for o in others.iter_mut() {
                o.0 = o.0.translated(o.1, o.2, 0.0);
            }
        }
        gt.push(bx);

        let mut pts = Vec::with_capacity(spec.object_points + spec.clutter_points);
        for _ in 0..spec.object_points {
            pts.push(sample_surface(&bx, &mut rng));
        }
        for (d, _, _) in &others {
            for _ in 0..spec.object_points / 2 {
                pts.push(sample_surface(d, &mut rng));
            }
        }
        for _ in 0..spec.clutter_points {
            pts.push((
                spec.start.x + rng.gen_range(-spec.scene_half_extent..spec.scene_half_extent),
                spec.start.y + rng.gen_range(-spec.scene_half_extent..spec.scene_half_extent),
                rng.gen_range(-1.0..1.5),
            ));
        }
        if spec.noise_sigma > 0.0 {
            for p in pts.iter_mut() {
                // Box-Muller pairs, one sample used per axis
                let mut gauss = || {
                    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    (-2.0 * u1.ln()).sqrt() * u2.cos()
                };
                p.0 += spec.noise_sigma * gauss();
                p.1 += spec.noise_sigma * gauss();
                p.2 += spec.noise_sigma * gauss();
            }
        }
        clouds.push(pts);
    }
    SyntheticSequence { clouds, gt }
}

/// Keep every `stride`-th frame, starting at frame 0.
pub fn subsample_sequence(seq: &SyntheticSequence, stride: usize) -> SyntheticSequence {
    assert!(stride >= 1);
    SyntheticSequence {
        clouds: seq.clouds.iter().step_by(stride).cloned().collect(),
        gt: seq.gt.iter().step_by(stride).cloned().collect(),
    }
}
