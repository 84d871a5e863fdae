//! Center-based prediction: target assignment (all-foreground heatmap,
//! offsets, height, orientation), loss computation, and box decoding.

use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::{rasterize_box_mask, wrap_angle, Box3D, GridConfig};
use crate::numerics::{NumericsError, ParameterSet, Result, Tensor};
use crate::pillars::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    /// Every cell inside the box footprint is positive.
    Foreground,
    /// Gaussian kernel at the center; only the center cell is positive.
    Gaussian,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadConfig {
    pub assignment: Assignment,
    pub weight_offset: f64,
    pub weight_height: f64,
    pub weight_orientation: f64,
    pub focal_alpha: f64,
    pub focal_beta: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            assignment: Assignment::Foreground,
            weight_offset: 1.0,
            weight_height: 1.0,
            weight_orientation: 1.0,
            focal_alpha: 2.0,
            focal_beta: 4.0,
        }
    }
}

/// Training targets on the W x H feature grid, all row-major.
#[derive(Debug, Clone)]
pub struct TargetMaps {
    pub heatmap: Vec<f64>,
    pub offset: Vec<f64>,
    pub height: Vec<f64>,
    pub orientation: Vec<f64>,
    /// Regression is supervised only where this is 1.
    pub valid_mask: Vec<f64>,
    pub w: usize,
    pub h: usize,
    /// Set when the box missed the grid range entirely.
    pub out_of_range: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    pub box3d: Box3D,
    pub score: f64,
    pub peak_index: (usize, usize),
}

/// Raw head branch outputs before decoding.
pub struct HeadOutput {
    pub heatmap: Tensor,
    pub offset: Tensor,
    pub height: Tensor,
    pub orientation: Tensor,
}

pub fn init_head_params(ps: &mut ParameterSet, c1: usize) -> Result<()> {
    for (branch, out_ch) in [("heatmap", 1usize), ("offset", 2), ("height", 1), ("orientation", 2)] {
        ps.init_uniform(&format!("head.{branch}.conv1.weight"), &[3, 3, c1, c1], 9 * c1)?;
        ps.init_uniform(&format!("head.{branch}.conv1.bias"), &[c1], 9 * c1)?;
        ps.init_uniform(&format!("head.{branch}.conv2.weight"), &[1, 1, c1, out_ch], c1)?;
        ps.init_uniform(&format!("head.{branch}.conv2.bias"), &[out_ch], c1)?;
    }
    Ok(())
}

/// Continuous center position in decoded-cell coordinates: (col, row).
fn center_cell_coords(gt: &Box3D, grid: &GridConfig) -> (f64, f64) {
    ((gt.x - grid.x_min) / grid.cell_x(), (gt.y - grid.y_min) / grid.cell_y())
}

/// Build training targets for one ground-truth box. Offsets are supervised
/// at every positive cell, each with its own offset to the true center, so
/// the decode equations invert the assignment exactly.
pub fn assign_targets(gt: &Box3D, grid: &GridConfig, cfg: &HeadConfig) -> TargetMaps {
    let (w, h) = (grid.w, grid.h);
    let n = w * h;
    let mut t = TargetMaps {
        heatmap: vec![0.0; n],
        offset: vec![0.0; n * 2],
        height: vec![0.0; n],
        orientation: vec![0.0; n * 2],
        valid_mask: vec![0.0; n],
        w,
        h,
        out_of_range: false,
    };
    let (cx, cy) = center_cell_coords(gt, grid);
    let (sin_t, cos_t) = gt.theta.sin_cos();

    match cfg.assignment {
        Assignment::Foreground => {
            let mask = rasterize_box_mask(gt, grid);
            for i in 0..h {
                for j in 0..w {
                    if mask.get(i, j) == 1 {
                        let idx = i * w + j;
                        t.heatmap[idx] = 1.0;
                        t.valid_mask[idx] = 1.0;
                        t.offset[idx * 2] = cx - j as f64;
                        t.offset[idx * 2 + 1] = cy - i as f64;
                        t.height[idx] = gt.z;
                        t.orientation[idx * 2] = sin_t;
                        t.orientation[idx * 2 + 1] = cos_t;
                    }
                }
            }
            t.out_of_range = t.valid_mask.iter().all(|&v| v == 0.0);
        }
        Assignment::Gaussian => {
            let (cj, ci) = (cx.floor() as i64, cy.floor() as i64);
            if cj < 0 || cj >= w as i64 || ci < 0 || ci >= h as i64 {
                t.out_of_range = true;
                return t;
            }
            let sigma = ((gt.l / grid.cell_x()).max(gt.w / grid.cell_y()) / 6.0).max(0.5);
            for i in 0..h {
                for j in 0..w {
                    let d2 = (i as f64 - ci as f64).powi(2) + (j as f64 - cj as f64).powi(2);
                    t.heatmap[i * w + j] = (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
            let idx = ci as usize * w + cj as usize;
            t.heatmap[idx] = 1.0;
            t.valid_mask[idx] = 1.0;
            t.offset[idx * 2] = cx - cj as f64;
            t.offset[idx * 2 + 1] = cy - ci as f64;
            t.height[idx] = gt.z;
            t.orientation[idx * 2] = sin_t;
            t.orientation[idx * 2 + 1] = cos_t;
        }
    }
    t
}

/// Invert the assignment at the heatmap peak. Ties break to the smallest
/// row-major index.
pub fn decode(
    heatmap: &[f64],
    offset: &[f64],
    height: &[f64],
    orientation: &[f64],
    grid: &GridConfig,
    known_size: (f64, f64, f64),
) -> Result<Prediction> {
    let (w, h) = (grid.w, grid.h);
    if heatmap.len() != w * h {
        return Err(NumericsError::Dimension("heatmap size".into()));
    }
    let mut best = 0usize;
    for idx in 1..heatmap.len() {
        if heatmap[idx] > heatmap[best] {
            best = idx;
        }
    }
    let (i, j) = (best / w, best % w);
    let o_x = offset[best * 2];
    let o_y = offset[best * 2 + 1];
    let x = (j as f64 + o_x) * grid.cell_x() + grid.x_min;
    let y = (i as f64 + o_y) * grid.cell_y() + grid.y_min;
    let z = height[best];
    let theta = wrap_angle(orientation[best * 2].atan2(orientation[best * 2 + 1]));
    let (bw, bl, bh) = known_size;
    let box3d = Box3D::new(x, y, z, bw, bl, bh, theta)
        .map_err(|e| NumericsError::Contract(e.to_string()))?;
    Ok(Prediction { box3d, score: heatmap[best], peak_index: (i, j) })
}

fn branch(u: &Tensor, params: &ParameterSet, name: &str) -> Result<Tensor> {
    let x = u
        .conv2d(
            params.get(&format!("head.{name}.conv1.weight"))?,
            params.get(&format!("head.{name}.conv1.bias"))?,
            1,
            1,
        )?
        .relu()?;
    x.conv2d(
        params.get(&format!("head.{name}.conv2.weight"))?,
        params.get(&format!("head.{name}.conv2.bias"))?,
        1,
        0,
    )
}

/// Four small conv branches over the fused feature U; the heatmap branch
/// passes through a sigmoid.
pub fn head_forward(u: &FeatureMap, params: &ParameterSet) -> Result<HeadOutput> {
    Ok(HeadOutput {
        heatmap: branch(&u.values, params, "heatmap")?.sigmoid()?,
        offset: branch(&u.values, params, "offset")?,
        height: branch(&u.values, params, "height")?,
        orientation: branch(&u.values, params, "orientation")?,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: f64,
    pub focal: f64,
    pub offset: f64,
    pub height: f64,
    pub orientation: f64,
}

/// Focal loss on the heatmap plus masked L1 on the regression branches.
pub fn loss(
    pred: &HeadOutput,
    targets: &TargetMaps,
    cfg: &HeadConfig,
) -> Result<(Tensor, LossBreakdown)> {
    let (w, h) = (targets.w, targets.h);
    let heat_t = Tensor::from_vec(&[h, w, 1], targets.heatmap.clone())?;
    let off_t = Tensor::from_vec(&[h, w, 2], targets.offset.clone())?;
    let hei_t = Tensor::from_vec(&[h, w, 1], targets.height.clone())?;
    let ori_t = Tensor::from_vec(&[h, w, 2], targets.orientation.clone())?;
    let mask = Tensor::from_vec(&[h, w], targets.valid_mask.clone())?;

    let focal = pred.heatmap.focal_loss(&heat_t, cfg.focal_alpha, cfg.focal_beta)?;
    let l_off = pred.offset.l1_masked(&off_t, &mask)?;
    let l_hei = pred.height.l1_masked(&hei_t, &mask)?;
    let l_ori = pred.orientation.l1_masked(&ori_t, &mask)?;
    let total = focal
        .add(&l_off.scale(cfg.weight_offset)?)?
        .add(&l_hei.scale(cfg.weight_height)?)?
        .add(&l_ori.scale(cfg.weight_orientation)?)?;
    let breakdown = LossBreakdown {
        total: total.item(),
        focal: focal.item(),
        offset: l_off.item(),
        height: l_hei.item(),
        orientation: l_ori.item(),
    };
    Ok((total, breakdown))
}

// ---- inspection dumps ----

/// P2 ASCII PGM, values scaled to 0..255.
pub fn write_heatmap_pgm(path: &Path, values: &[f64], w: usize, h: usize) -> std::io::Result<()> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P2\n{w} {h}\n255\n");
    for i in 0..h {
        let row: Vec<String> = (0..w)
            .map(|j| format!("{}", ((values[i * w + j] - lo) / span * 255.0).round() as u32))
            .collect();
        writeln!(out, "{}", row.join(" ")).expect("string write");
    }
    std::fs::write(path, out)
}

/// Raw floats, one CSV row per grid row.
pub fn write_heatmap_csv(path: &Path, values: &[f64], w: usize, h: usize) -> std::io::Result<()> {
    let mut out = String::new();
    for i in 0..h {
        let row: Vec<String> = (0..w).map(|j| format!("{}", values[i * w + j])).collect();
        writeln!(out, "{}", row.join(",")).expect("string write");
    }
    std::fs::write(path, out)
}
