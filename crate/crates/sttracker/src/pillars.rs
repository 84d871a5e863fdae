//! Time-aware point ingestion, dynamic pillar encoding, and the small
//! convolutional BEV backbone producing per-frame features.

use std::io::{Read, Write};
use std::path::Path;

use crate::geometry::GridConfig;
use crate::numerics::{NumericsError, ParameterSet, Result, Tensor};

/// Unordered points (x, y, z, t) in a local tracking frame. `t` is the frame
/// age in frame counts (0 = current).
#[derive(Debug, Clone, PartialEq)]
pub struct TimedPointCloud {
    pub points: Vec<(f64, f64, f64, f64)>,
}

impl TimedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// W x H x C BEV feature grid tied to a [`GridConfig`]. Tensor layout is
/// [h, w, c] with rows along y.
#[derive(Clone)]
pub struct FeatureMap {
    pub values: Tensor,
    pub grid: GridConfig,
    pub frame_age: f64,
}

/// Stamp every point with the same frame age.
pub fn stamp_time(points: &[(f64, f64, f64)], age: f64) -> TimedPointCloud {
    TimedPointCloud { points: points.iter().map(|&(x, y, z)| (x, y, z, age)).collect() }
}

pub fn init_pillar_params(ps: &mut ParameterSet, cp: usize) -> Result<()> {
    ps.init_uniform("pillars.mlp1.weight", &[6, cp], 6)?;
    ps.init_uniform("pillars.mlp1.bias", &[cp], 6)?;
    ps.init_uniform("pillars.mlp2.weight", &[cp, cp], cp)?;
    ps.init_uniform("pillars.mlp2.bias", &[cp], cp)?;
    Ok(())
}

pub fn init_backbone_params(ps: &mut ParameterSet, cp: usize, c1: usize, b: usize) -> Result<()> {
    let stages = downsample_stages(b)?;
    let mut cin = cp;
    for s in 0..stages {
        ps.init_uniform(&format!("backbone.down{s}.weight"), &[3, 3, cin, c1], 9 * cin)?;
        ps.init_uniform(&format!("backbone.down{s}.bias"), &[c1], 9 * cin)?;
        cin = c1;
    }
    for s in 0..2 {
        ps.init_uniform(&format!("backbone.post{s}.weight"), &[3, 3, cin, c1], 9 * cin)?;
        ps.init_uniform(&format!("backbone.post{s}.bias"), &[c1], 9 * cin)?;
        cin = c1;
    }
    Ok(())
}

fn downsample_stages(b: usize) -> Result<usize> {
    if !b.is_power_of_two() {
        return Err(NumericsError::Contract(format!(
            "backbone stride b={b} must be a power of two"
        )));
    }
    Ok(b.trailing_zeros() as usize)
}

/// Encode a timed cloud into a pillar feature grid of shape
/// [h*b, w*b, cp]. Points outside the grid range are dropped. Per point the
/// features (x, y, z, t, dx, dy) pass a shared two-layer ReLU MLP and each
/// occupied pillar keeps the elementwise max; empty pillars are zero.
pub fn dynamic_pillarize(
    cloud: &TimedPointCloud,
    grid: &GridConfig,
    params: &ParameterSet,
) -> Result<Tensor> {
    let rows = grid.h * grid.b;
    let cols = grid.w * grid.b;
    let cp = params.get("pillars.mlp1.bias")?.numel();

    let mut feats: Vec<f64> = Vec::new();
    let mut slots: Vec<usize> = Vec::new();
    for &(x, y, z, t) in &cloud.points {
        let jf = (x - grid.x_min) / grid.v_x;
        let if_ = (y - grid.y_min) / grid.v_y;
        if jf < 0.0 || if_ < 0.0 || z < grid.z_min || z > grid.z_max {
            continue;
        }
        let (i, j) = (if_ as usize, jf as usize);
        if i >= rows || j >= cols {
            continue;
        }
        let cx = grid.x_min + (j as f64 + 0.5) * grid.v_x;
        let cy = grid.y_min + (i as f64 + 0.5) * grid.v_y;
        feats.extend_from_slice(&[x, y, z, t, x - cx, y - cy]);
        slots.push(i * cols + j);
    }

    if slots.is_empty() {
        return Ok(Tensor::zeros(&[rows, cols, cp]));
    }
    let n = slots.len();
    let x = Tensor::from_vec(&[n, 6], feats)?;
    let h1 = x
        .linear(params.get("pillars.mlp1.weight")?, params.get("pillars.mlp1.bias")?)?
        .relu()?;
    let h2 = h1
        .linear(params.get("pillars.mlp2.weight")?, params.get("pillars.mlp2.bias")?)?
        .relu()?;
    let grid_feat = Tensor::scatter_max(&h2, &slots, rows * cols)?;
    grid_feat.reshape(&[rows, cols, cp])
}

/// Fixed conv stack: [3x3 stride-2 conv + ReLU] x log2(b), then two stride-1
/// conv + ReLU blocks, producing a [h, w, c1] feature map.
pub fn backbone(
    pillar_grid: &Tensor,
    grid: &GridConfig,
    params: &ParameterSet,
    frame_age: f64,
) -> Result<FeatureMap> {
    let shape = pillar_grid.shape();
    if shape.len() != 3 || shape[0] % grid.b != 0 || shape[1] % grid.b != 0 {
        return Err(NumericsError::Dimension(format!(
            "backbone input {shape:?} not divisible by b={}",
            grid.b
        )));
    }
    let stages = downsample_stages(grid.b)?;
    let mut x = pillar_grid.clone();
    for s in 0..stages {
        x = x
            .conv2d(
                params.get(&format!("backbone.down{s}.weight"))?,
                params.get(&format!("backbone.down{s}.bias"))?,
                2,
                1,
            )?
            .relu()?;
    }
    for s in 0..2 {
        x = x
            .conv2d(
                params.get(&format!("backbone.post{s}.weight"))?,
                params.get(&format!("backbone.post{s}.bias"))?,
                1,
                1,
            )?
            .relu()?;
    }
    Ok(FeatureMap { values: x, grid: *grid, frame_age })
}

// ---- point-cloud binary format ----
// Consecutive little-endian f32, 4 per point (x, y, z, reserved). The loader
// ignores the 4th channel; time is re-stamped by the caller.

pub fn write_cloud(path: &Path, points: &[(f64, f64, f64)]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(points.len() * 16);
    for &(x, y, z) in points {
        for v in [x as f32, y as f32, z as f32, 0.0f32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)
}

pub fn read_cloud(path: &Path) -> std::io::Result<Vec<(f64, f64, f64)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "cloud file length not a multiple of 16 bytes",
        ));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes(c[o..o + 4].try_into().unwrap()) as f64;
            (f(0), f(4), f(8))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_grid() -> GridConfig {
        GridConfig {
            x_min: -4.8, y_min: -4.8, v_x: 0.15, v_y: 0.15, w: 16, h: 16, b: 4,
            z_min: -2.0, z_max: 2.0,
        }
    }

    fn small_params(grid: &GridConfig) -> ParameterSet {
        let mut ps = ParameterSet::new(3);
        init_pillar_params(&mut ps, 8).unwrap();
        init_backbone_params(&mut ps, 8, 16, grid.b).unwrap();
        ps
    }

    #[test]
    fn stamp_time_basics() {
        assert!(stamp_time(&[], 0.0).is_empty());
        let c = stamp_time(&[(1.0, 2.0, 3.0), (4.0, 5.0, 6.0), (0.0, 0.0, 0.0)], 2.0);
        assert!(c.points.iter().all(|p| p.3 == 2.0));
        let z = stamp_time(&[(1.0, 1.0, 1.0)], 0.0);
        assert_eq!(z.points[0].3, 0.0);
    }

    #[test]
    fn empty_cloud_gives_zero_grid() {
        let grid = test_grid();
        let ps = small_params(&grid);
        let out = dynamic_pillarize(&TimedPointCloud { points: vec![] }, &grid, &ps).unwrap();
        assert_eq!(out.shape(), &[64, 64, 8]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_point_pillar_equals_mlp_output() {
        let grid = test_grid();
        let ps = small_params(&grid);
        let cloud = stamp_time(&[(0.1, 0.2, 0.3)], 1.0);
        let out = dynamic_pillarize(&cloud, &grid, &ps).unwrap();
        // independent evaluation of the same MLP on the single point
        let j = ((0.1 - grid.x_min) / grid.v_x) as usize;
        let i = ((0.2 - grid.y_min) / grid.v_y) as usize;
        let cx = grid.x_min + (j as f64 + 0.5) * grid.v_x;
        let cy = grid.y_min + (i as f64 + 0.5) * grid.v_y;
        let x = Tensor::from_vec(&[1, 6], vec![0.1, 0.2, 0.3, 1.0, 0.1 - cx, 0.2 - cy]).unwrap();
        let h = x
            .linear(ps.get("pillars.mlp1.weight").unwrap(), ps.get("pillars.mlp1.bias").unwrap())
            .unwrap()
            .relu()
            .unwrap()
            .linear(ps.get("pillars.mlp2.weight").unwrap(), ps.get("pillars.mlp2.bias").unwrap())
            .unwrap()
            .relu()
            .unwrap();
        let got = &out.data()[(i * 64 + j) * 8..(i * 64 + j) * 8 + 8];
        assert_eq!(got, h.data());
        // everything else zero
        let nonzero = out.data().iter().filter(|&&v| v != 0.0).count();
        assert!(nonzero <= 8);
    }

    #[test]
    fn two_points_take_elementwise_max() {
        let grid = test_grid();
        let ps = small_params(&grid);
        let p1 = (0.11, 0.21, 0.3);
        let p2 = (0.14, 0.18, -0.2);
        let both = stamp_time(&[p1, p2], 0.0);
        let out = dynamic_pillarize(&both, &grid, &ps).unwrap();
        let a = dynamic_pillarize(&stamp_time(&[p1], 0.0), &grid, &ps).unwrap();
        let b = dynamic_pillarize(&stamp_time(&[p2], 0.0), &grid, &ps).unwrap();
        for ((got, &x), &y) in out.data().iter().zip(a.data()).zip(b.data()) {
            assert_eq!(*got, x.max(y));
        }
    }

    #[test]
    fn pillarization_is_permutation_invariant() {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let grid = test_grid();
        let ps = small_params(&grid);
        let mut pts: Vec<(f64, f64, f64)> = (0..100)
            .map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let a = dynamic_pillarize(&stamp_time(&pts, 1.0), &grid, &ps).unwrap();
        pts.shuffle(&mut rng);
        let b = dynamic_pillarize(&stamp_time(&pts, 1.0), &grid, &ps).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn out_of_range_points_do_not_matter() {
        let grid = test_grid();
        let ps = small_params(&grid);
        let inside = stamp_time(&[(0.3, -0.4, 0.0)], 0.0);
        let mut with_outside = inside.clone();
        with_outside.points.push((100.0, 0.0, 0.0, 0.0));
        with_outside.points.push((0.0, 0.0, 50.0, 0.0));
        with_outside.points.push((-20.0, -20.0, 0.0, 0.0));
        let a = dynamic_pillarize(&inside, &grid, &ps).unwrap();
        let b = dynamic_pillarize(&with_outside, &grid, &ps).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn translation_coherence_by_one_pitch() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let grid = test_grid();
        let ps = small_params(&grid);
        let pts: Vec<(f64, f64, f64)> = (0..50)
            .map(|_| (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let base = dynamic_pillarize(&stamp_time(&pts, 0.0), &grid, &ps).unwrap();
        // shifting every point by one pitch moves its pillar one column over;
        // values change (features carry window coordinates) but occupancy
        // translates exactly
        let shifted_pts: Vec<_> = pts.iter().map(|p| (p.0 + grid.v_x, p.1, p.2)).collect();
        let shifted = dynamic_pillarize(&stamp_time(&shifted_pts, 0.0), &grid, &ps).unwrap();
        let occupied = |t: &Tensor| -> Vec<(usize, usize)> {
            let mut cells = Vec::new();
            for i in 0..64 {
                for j in 0..64 {
                    if t.data()[(i * 64 + j) * 8..(i * 64 + j + 1) * 8].iter().any(|&v| v != 0.0) {
                        cells.push((i, j));
                    }
                }
            }
            cells
        };
        let want: Vec<(usize, usize)> = occupied(&base).iter().map(|&(i, j)| (i, j + 1)).collect();
        assert_eq!(occupied(&shifted), want);
    }

    #[test]
    fn backbone_shapes_and_zero_case() {
        let grid = test_grid();
        let mut ps = ParameterSet::new(4);
        init_pillar_params(&mut ps, 8).unwrap();
        init_backbone_params(&mut ps, 8, 16, grid.b).unwrap();
        // zero biases: zero input stays zero through conv+relu
        for name in ps.names().cloned().collect::<Vec<_>>() {
            if name.contains("bias") {
                let n = ps.get(&name).unwrap().numel();
                ps.update(&name, vec![0.0; n]).unwrap();
            }
        }
        let out = backbone(&Tensor::zeros(&[64, 64, 8]), &grid, &ps, 0.0).unwrap();
        assert_eq!(out.values.shape(), &[16, 16, 16]);
        assert!(out.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backbone_b1_preserves_dims() {
        let grid = GridConfig { b: 1, w: 8, h: 8, ..test_grid() };
        let mut ps = ParameterSet::new(4);
        init_pillar_params(&mut ps, 4).unwrap();
        init_backbone_params(&mut ps, 4, 8, 1).unwrap();
        let out = backbone(&Tensor::zeros(&[8, 8, 4]), &grid, &ps, 0.0).unwrap();
        assert_eq!(out.values.shape(), &[8, 8, 8]);
    }

    #[test]
    fn cloud_binary_round_trip() {
        let pts = vec![(1.5f64, -2.25, 0.125), (0.0, 3.75, -1.5)];
        let dir = std::env::temp_dir().join("sttk_cloud_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cloud.bin");
        write_cloud(&path, &pts).unwrap();
        assert_eq!(read_cloud(&path).unwrap(), pts);
    }
}
