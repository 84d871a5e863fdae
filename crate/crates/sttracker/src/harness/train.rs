//! Toy trainer: teacher-forced single-step samples drawn from synthetic
//! scenes, optimized with SGD plus momentum.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::to_local;
use crate::harness::scene::{generate_sequence, SceneSpec};
use crate::head::{assign_targets, head_forward, loss};
use crate::numerics::{NumericsError, ParameterSet, Result};
use crate::pillars::{backbone, dynamic_pillarize, stamp_time, TimedPointCloud};
use crate::stlm::stlm_forward;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Uniform window-center jitter in meters, so the object is not always
    /// centered during training.
    pub jitter: f64,
    /// Samples averaged per update.
    pub batch: usize,
    /// Final learning rate as a fraction of `lr`, reached linearly at the
    /// last step. 1.0 keeps the rate constant.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            jitter: 0.3,
            batch: 1,
            lr_decay: 1.0,
        }
    }
}

/// One teacher-forced training step at frame `t` of a sequence: history
/// windows are centered on the (jittered) previous ground-truth box, history
/// boxes come from ground truth, and the target is the current box in window
/// coordinates. Returns the scalar loss.
fn step_loss(
    params: &ParameterSet,
    cfg: &TrackerConfig,
    clouds: &[Vec<(f64, f64, f64)>],
    gt: &[crate::geometry::Box3D],
    t: usize,
    jitter: (f64, f64),
) -> Result<crate::numerics::Tensor> {
    let reference = gt[t - 1].translated(jitter.0, jitter.1, 0.0);
    let mut features = Vec::new();
    let mut past_boxes = Vec::new();
    for &age in cfg.pattern.ages() {
        let f = t.saturating_sub(age);
        let local: TimedPointCloud = to_local(&stamp_time(&clouds[f], age as f64), &reference);
        let pillar = dynamic_pillarize(&local, &cfg.grid, params)?;
        features.push(backbone(&pillar, &cfg.grid, params, age as f64)?);
        if age > 0 {
            past_boxes.push(gt[f].translated(-reference.x, -reference.y, -reference.z));
        }
    }
    let fused = stlm_forward(&features, &past_boxes, params, &cfg.stlm, &cfg.grid)?;
    let out = head_forward(&fused, params)?;
    let target_local = gt[t].translated(-reference.x, -reference.y, -reference.z);
    let targets = assign_targets(&target_local, &cfg.grid, &cfg.head);
    if targets.out_of_range {
        return Err(NumericsError::Contract("training target left the window".into()));
    }
    let (total, _) = loss(&out, &targets, &cfg.head)?;
    Ok(total)
}

/// Train on freshly generated scenes, one sequence per step, one sampled
/// frame per sequence. Returns the loss trace. Aborts with an error when the
/// loss goes non-finite.
pub fn train_toy(
    params: &mut ParameterSet,
    cfg: &TrackerConfig,
    scene: &SceneSpec,
    tc: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut velocity: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut trace = Vec::with_capacity(tc.steps);

    let batch = tc.batch.max(1);
    for step in 0..tc.steps {
        params.zero_grads();
        let mut batch_losses = Vec::with_capacity(batch);
        for sample in 0..batch {
            let seq = generate_sequence(&SceneSpec {
                seed: scene.seed.wrapping_add(1 + (step * batch + sample) as u64),
                ..scene.clone()
            });
            let t = rng.gen_range(1..seq.gt.len());
            let jitter =
                (rng.gen_range(-tc.jitter..tc.jitter), rng.gen_range(-tc.jitter..tc.jitter));
            batch_losses.push(step_loss(params, cfg, &seq.clouds, &seq.gt, t, jitter)?);
        }
        let mut total = batch_losses[0].clone();
        for l in &batch_losses[1..] {
            total = total.add(l)?;
        }
        let total = total.scale(1.0 / batch as f64)?;
        let value = total.item();
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(format!("loss diverged at step {step}")));
        }
        trace.push(value);
        total.backward()?;

        let progress = if tc.steps > 1 { step as f64 / (tc.steps - 1) as f64 } else { 0.0 };
        let lr = tc.lr * (1.0 + (tc.lr_decay - 1.0) * progress);

        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let tensor = params.get(&name)?;
            let Some(grad) = tensor.grad() else { continue };
            let mut data = tensor.data().to_vec();
            let vel = velocity.entry(name.clone()).or_insert_with(|| vec![0.0; data.len()]);
            for ((d, g), v) in data.iter_mut().zip(&grad).zip(vel.iter_mut()) {
                *v = tc.momentum * *v + g;
                *d -= lr * *v;
            }
            params.update(&name, data)?;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridConfig;
    use crate::stlm::StlmConfig;
    use crate::tracker::FramePattern;

    fn tiny_cfg() -> TrackerConfig {
        TrackerConfig {
            grid: GridConfig {
                x_min: -2.0, y_min: -2.0, v_x: 0.25, v_y: 0.25, w: 8, h: 8, b: 2,
                z_min: -2.0, z_max: 2.0,
            },
            stlm: StlmConfig {
                patch_r: 2, heads: 2, samples: 2, c1: 8, c2: 8, c3: 8, c4: 8,
                ..Default::default()
            },
            head: Default::default(),
            pattern: FramePattern::new(vec![0, 1]).unwrap(),
            cp: 8,
        }
    }

    fn tiny_scene() -> SceneSpec {
        SceneSpec {
            frames: 6,
            start: crate::geometry::Box3D::new(0.0, 0.0, 0.0, 0.8, 1.2, 1.0, 0.0).unwrap(),
            object_points: 40,
            ..Default::default()
        }
    }

    #[test]
    fn few_steps_reduce_loss_and_change_params() {
        let cfg = tiny_cfg();
        let mut ps = ParameterSet::new(21);
        cfg.init_params(&mut ps).unwrap();
        let before = ps.get("head.heatmap.conv2.bias").unwrap().data().to_vec();
        let tc = TrainConfig { steps: 12, lr: 0.02, jitter: 0.1, ..Default::default() };
        let trace = train_toy(&mut ps, &cfg, &tiny_scene(), &tc).unwrap();
        assert_eq!(trace.len(), 12);
        assert!(trace.iter().all(|v| v.is_finite()));
        let first = trace[..3].iter().sum::<f64>() / 3.0;
        let last = trace[trace.len() - 3..].iter().sum::<f64>() / 3.0;
        assert!(last < first, "loss should drop: {first} -> {last}");
        let after = ps.get("head.heatmap.conv2.bias").unwrap().data().to_vec();
        assert_ne!(before, after);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_cfg();
        let tc = TrainConfig { steps: 4, ..Default::default() };
        let run = || {
            let mut ps = ParameterSet::new(22);
            cfg.init_params(&mut ps).unwrap();
            train_toy(&mut ps, &cfg, &tiny_scene(), &tc).unwrap()
        };
        assert_eq!(run(), run());
    }
}
